"""Finite-difference verification suites.

Used by the ``gradcheck`` CLI command and the acceptance tests: every
differentiable primitive is checked on small random shapes, and the two
training losses are checked end to end on a toy problem (2 persons,
6 observed steps, horizon 8, 5 actions).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discriminator import Discriminator, DiscriminatorConfig
from .generator import Generator, GeneratorConfig, one_hot
from .nnet import autodiff as ad
from .nnet.autodiff import Variable, constant, no_grad
from .nnet.gradcheck import grad_check
from .nnet.layers import BatchNorm, Embedding, LSTMCell, SpectralLinear, layer_norm
from .nnet.params import ParamStore
from .synthdata import SynthConfig, simulate
from .training import TrainConfig, Trainer, d_loss, g_loss

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOLERANCE


def primitive_checks(seed: int = 0, max_coords: int = 40) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    def check(name, build):
        store = ParamStore()
        out_fn = build(store)  # callable producing the op output Variable
        probe = constant(np.random.default_rng(seed + 99)
                         .standard_normal(out_fn().data.shape))

        def f():
            return ad.sum_(ad.square(ad.mul(out_fn(), probe)))

        err = grad_check(f, store, max_coords=max_coords,
                         rng=np.random.default_rng(seed + 1))
        results.append(CheckResult(name, err))

    def param(store, shape, scale=1.0):
        return store.add_param(f"x{len(store.params)}", rng.standard_normal(shape) * scale)

    def unary(op):
        def build(store):
            a = param(store, (5, 7))
            return lambda: op(a)
        return build

    def binary(op, shape_b=(5, 7)):
        def build(store):
            a = param(store, (5, 7))
            b = param(store, shape_b)
            return lambda: op(a, b)
        return build

    check("add", binary(ad.add))
    check("add_broadcast", binary(ad.add, shape_b=(7,)))
    check("sub", binary(ad.sub))
    check("mul", binary(ad.mul))
    check("div", binary(lambda a, b: ad.div(a, ad.add(ad.square(b), constant(0.5)))))
    check("neg", unary(ad.neg))
    check("matmul", binary(ad.matmul, shape_b=(7, 4)))
    check("sigmoid", unary(ad.sigmoid))
    check("tanh", unary(ad.tanh))
    check("relu", unary(ad.relu))
    check("leaky_relu", unary(lambda a: ad.leaky_relu(a, 0.2)))
    check("exp", unary(lambda a: ad.exp(ad.scale(a, 0.3))))
    check("log", unary(lambda a: ad.log(ad.add(ad.square(a), constant(0.5)))))
    check("square", unary(ad.square))
    check("sum", unary(lambda a: ad.sum_(a, axis=1)))
    check("mean", unary(lambda a: ad.mean(a, axis=0)))
    check("max_pool", unary(lambda a: ad.max_pool(a, axis=0)))
    check("reshape", unary(lambda a: ad.reshape(a, (7, 5))))
    check("concat", binary(lambda a, b: ad.concat([a, b], axis=1)))
    check("narrow", unary(lambda a: ad.narrow(a, 1, 2, 3)))
    check("stack", binary(lambda a, b: ad.stack([a, b], axis=1)))
    check("broadcast_axis", unary(lambda a: ad.broadcast_axis(a, 1, 3)))
    check("softmax_temperature", unary(lambda a: ad.softmax_temperature(a, 0.37)))
    check("layer_norm", unary(layer_norm))

    def build_linear(store):
        from .nnet.layers import Linear
        lin = Linear(store, "lin", 7, 4, np.random.default_rng(seed + 2))
        x = constant(rng.standard_normal((6, 7)))
        return lambda: lin(x)
    check("linear", build_linear)

    def build_spectral(store):
        sl = SpectralLinear(store, "sl", 7, 4, np.random.default_rng(seed + 3))
        sl.warmup(30)
        x = constant(rng.standard_normal((6, 7)))
        return lambda: sl(x)
    check("spectral_linear", build_spectral)

    def build_embedding(store):
        emb = Embedding(store, "emb", 6, 5, np.random.default_rng(seed + 4))
        ids = rng.integers(6, size=9)
        return lambda: emb.lookup(ids)
    check("embedding", build_embedding)

    def build_gather_windows(store):
        a = param(store, (3, 9, 4))
        starts = np.array([0, 2, 4])
        return lambda: ad.gather_windows(a, starts, 4)
    check("gather_windows", build_gather_windows)

    for ln in (False, True):
        def build_lstm(store, ln=ln):
            cell = LSTMCell(store, "cell", 5, 6, np.random.default_rng(seed + 5),
                            layer_norm=ln)
            x = constant(rng.standard_normal((4, 5)))
            h0 = constant(rng.standard_normal((4, 6)) * 0.3)
            c0 = constant(rng.standard_normal((4, 6)) * 0.3)

            def two_steps():
                h, c = cell.step(x, h0, c0)
                h, c = cell.step(x, h, c)
                return ad.concat([h, c], axis=-1)
            return two_steps
        check(f"lstm_step(layer_norm={ln})", build_lstm)

    for training in (True, False):
        def build_bn(store, training=training):
            bn = BatchNorm(store, "bn", 5)
            x = param(store, (3, 2, 5))
            return lambda: bn(x, training=training, update_stats=False)
        check(f"batchnorm(training={training})", build_bn)

    return results


# ---------------------------------------------------------------------------
# end-to-end toy losses


def toy_trainer(seed: int = 0, lambda_sup: float = 1e-3,
                disc_kind: str = "local") -> Trainer:
    synth = SynthConfig(n_actions=5, n_persons=2, coupling=0.2, dwell=0.6, seed=seed)
    dataset = simulate(synth, n_samples=4, t_obs=6, horizon=8)
    gen_cfg = GeneratorConfig(d_h=8, d_embed=8, noise_dim=8, d_deep=12)
    disc_cfg = DiscriminatorConfig(kind=disc_kind, d_h=8, d_phi=12, d_psi=12,
                                   horizon=8)
    train_cfg = TrainConfig(epochs=1, batch_size=2, lambda_sup=lambda_sup, seed=seed)
    return Trainer(dataset, 5, gen_cfg, disc_cfg, train_cfg)


def loss_checks(seed: int = 0, max_coords: int = 12,
                d_warmup_steps: int = 250) -> list[CheckResult]:
    """Central-difference checks of the two training losses end to end.

    The generator loss is checked at a fresh initialization. The
    discriminator loss is checked after training the discriminator
    alone for a while: at initialization every hinge term is active, so
    bias-like directions shift real and fake scores identically and
    their true gradient is exactly zero — finite differences then only
    measure rounding noise. Once some hinges saturate the masks differ
    and all gradients are generic.
    """
    results = []
    trainer = toy_trainer(seed)
    gen, disc = trainer.generator, trainer.discriminator
    assert disc is not None
    obs, tgt = trainer._gather(np.arange(4))
    noise = gen.draw_noise(np.random.default_rng(seed + 10), *obs.shape[:2])
    x_oh = constant(one_hot(obs, 5))
    y_oh = constant(one_hot(tgt, 5))

    trainer.store_d.set_trainable(False)

    def f_g():
        out = gen.generate(obs, 8, noise, training=True, update_stats=False)
        conds = disc.encode_conditions(x_oh)
        fake_out = disc.score_with_conditions(conds, out.relaxed)
        return g_loss(fake_out.d_tot, out.relaxed, y_oh, lambda_sup=1e-3)

    err = grad_check(f_g, trainer.store_g, max_coords=max_coords,
                     rng=np.random.default_rng(seed + 12))
    trainer.store_d.set_trainable(True)
    results.append(CheckResult("loss_g(adversarial+supervision, end-to-end)", err))

    for _ in range(d_warmup_steps):
        trainer._d_step(obs, tgt)
    with no_grad():
        fake_fixed = gen.generate(obs, 8, noise, training=True,
                                  update_stats=False).relaxed
    fake_const = constant(fake_fixed.data)

    def f_d():
        conds = disc.encode_conditions(x_oh)
        real_out = disc.score_with_conditions(conds, y_oh)
        fake_out = disc.score_with_conditions(conds, fake_const)
        return d_loss(real_out.d_tot, fake_out.d_tot)

    err = grad_check(f_d, trainer.store_d, max_coords=max_coords,
                     rng=np.random.default_rng(seed + 11))
    results.append(CheckResult("loss_d(hinge, end-to-end)", err))
    return results


def full_suite(seed: int = 0) -> list[CheckResult]:
    return primitive_checks(seed) + loss_checks(seed)
