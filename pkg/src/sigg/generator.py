"""Encoder-decoder sequence generator with context pooling.

Each person's observed token row is encoded independently by an LSTM;
noise is added to the final code to seed the decoder. The decoder runs
one LSTM per person but, at every step, also consumes a coordinate-wise
max over all persons' previous hidden states, which keeps the model
equivariant to person order and indifferent to group size. Outputs are
temperature-relaxed distributions so gradients can flow back from a
downstream scorer; hard tokens are their argmax (or categorical samples
behind a flag).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GenError, InputError, ValidationError
from .nnet import autodiff as ad
from .nnet.autodiff import Variable, constant, softmax_temperature
from .nnet.layers import BatchNorm, Embedding, LSTMCell, SpectralLinear
from .nnet.params import ParamStore


def one_hot(tokens: np.ndarray, n_actions: int) -> np.ndarray:
    """Token array (..., ) to distribution array (..., n_actions)."""
    return np.eye(n_actions, dtype=np.float64)[tokens]


def canonical_person_order(*arrays: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample person permutation sorting rows by their content bytes.

    Computing on canonically ordered rows and un-permuting the outputs
    makes person-permutation equivariance hold bit-exactly: BLAS kernels
    are not row-position independent, so equivariance of the math does
    not survive reordered matmul rows on its own. Returns (order,
    inverse), both (B, N); ties only occur between identical persons.
    """
    b, n = arrays[0].shape[:2]
    order = np.empty((b, n), dtype=np.int64)
    for i in range(b):
        keys = [tuple(np.ascontiguousarray(a[i, j]).tobytes() for a in arrays)
                for j in range(n)]
        order[i] = sorted(range(n), key=keys.__getitem__)
    inverse = np.argsort(order, axis=1)
    return order, inverse


def max_pool(vectors: Variable | np.ndarray, axis: int = 0) -> Variable:
    """Coordinate-wise maximum over one axis (person pooling)."""
    return ad.max_pool(ad.as_variable(vectors), axis=axis)


@dataclass
class GeneratorConfig:
    d_h: int = 64
    d_embed: int = 64
    noise_dim: int = 64
    d_deep: int = 128
    temperature: float = 0.1
    spectral_out: bool = True

    def __post_init__(self):
        if self.noise_dim != self.d_h:
            raise ValidationError(
                f"noise_dim ({self.noise_dim}) must equal d_h ({self.d_h}): "
                "noise is added to the encoder code")
        if self.temperature <= 0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")


@dataclass
class GeneratorOutput:
    relaxed: Variable  # (B, N, T, |A|) rows of temperature-softmax distributions
    tokens: np.ndarray  # (B, N, T) hard decodes


class Generator:
    """Conditional generator over token matrices (batch, person, time)."""

    def __init__(self, store: ParamStore, n_actions: int, cfg: GeneratorConfig,
                 rng: np.random.Generator):
        self.n_actions = n_actions
        self.cfg = cfg
        self.store = store
        self.embed = Embedding(store, "gen.embed", n_actions, cfg.d_embed, rng)
        self.encoder = LSTMCell(store, "gen.enc", cfg.d_embed, cfg.d_h, rng,
                                layer_norm=True)
        self.decoder = LSTMCell(store, "gen.dec", cfg.d_embed + cfg.d_h, cfg.d_h, rng,
                                layer_norm=True)
        d_in_deep = cfg.d_h + n_actions + cfg.d_h
        # no bias: the batch norm right after would cancel it exactly
        self.out_hidden = SpectralLinear(store, "gen.out1", d_in_deep, cfg.d_deep, rng,
                                         bias=False, enabled=cfg.spectral_out)
        self.out_norm = BatchNorm(store, "gen.bn", cfg.d_deep)
        self.out_logits = SpectralLinear(store, "gen.out2", cfg.d_deep, n_actions, rng,
                                         enabled=cfg.spectral_out)

    def power_iterate(self) -> None:
        self.out_hidden.power_iterate()
        self.out_logits.power_iterate()

    def draw_noise(self, rng: np.random.Generator, batch: int, persons: int) -> np.ndarray:
        return rng.standard_normal((batch, persons, self.cfg.noise_dim))

    def encode(self, observed: np.ndarray) -> Variable:
        """Per-person codes: final encoder hidden state of each row.

        ``observed`` is (B, N, t_obs) int tokens; returns (B, N, d_h).
        Rows are processed in canonical person order so codes are
        bit-identical under person permutations.
        """
        observed = np.asarray(observed)
        if observed.ndim != 3 or observed.shape[2] == 0:
            raise InputError(f"observed tokens must be (B, N, t_obs>=1), got {observed.shape}")
        b, n, t_obs = observed.shape
        order, inverse = canonical_person_order(observed)
        flat = np.take_along_axis(observed, order[:, :, None], axis=1).reshape(b * n, t_obs)
        h, c = self.encoder.init_state(b * n)
        for t in range(t_obs):
            x = self.embed.lookup(flat[:, t])
            h, c = self.encoder.step(x, h, c)
        return ad.gather_persons(ad.reshape(h, (b, n, self.cfg.d_h)), inverse)

    def _pool(self, h_flat: Variable, b: int, n: int) -> Variable:
        h3 = ad.reshape(h_flat, (b, n, self.cfg.d_h))
        pooled = ad.max_pool(h3, axis=1)
        return ad.reshape(ad.broadcast_axis(pooled, 1, n), (b * n, self.cfg.d_h))

    def generate(self, observed: np.ndarray, horizon: int, noise: np.ndarray, *,
                 training: bool, update_stats: bool = True,
                 sample_rng: np.random.Generator | None = None) -> GeneratorOutput:
        """Autoregressive rollout of ``horizon`` steps past the observed rows.

        The decoder state starts at code+noise; the first fed action is
        the last observed token; afterwards each step feeds back its own
        relaxed output (soft embedding), so the rollout stays
        differentiable end to end.
        """
        observed = np.asarray(observed)
        if horizon < 1:
            raise InputError(f"horizon must be >= 1, got {horizon}")
        b, n, _ = observed.shape
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != (b, n, self.cfg.noise_dim):
            raise InputError(f"noise shape {noise.shape} != {(b, n, self.cfg.noise_dim)}")

        order, inverse = canonical_person_order(observed, noise)
        observed = np.take_along_axis(observed, order[:, :, None], axis=1)
        noise = np.take_along_axis(noise, order[:, :, None], axis=1)

        codes = self.encode(observed)
        h = ad.reshape(ad.add(codes, constant(noise)), (b * n, self.cfg.d_h))
        c = constant(np.zeros((b * n, self.cfg.d_h)))
        prev = constant(one_hot(observed[:, :, -1].reshape(b * n), self.n_actions))

        steps: list[Variable] = []
        tokens = np.zeros((b, n, horizon), dtype=np.int64)
        for tau in range(horizon):
            pooled = self._pool(h, b, n)
            x_in = ad.concat([self.embed.soft(prev), pooled], axis=-1)
            h, c = self.decoder.step(x_in, h, c)
            deep_in = ad.concat([h, prev, pooled], axis=-1)
            z = self.out_hidden(deep_in)
            z = self.out_norm(ad.reshape(z, (b, n, self.cfg.d_deep)),
                              training=training, update_stats=update_stats)
            z = ad.reshape(ad.relu(z), (b * n, self.cfg.d_deep))
            logits = self.out_logits(z)
            if not np.isfinite(logits.data).all():
                raise GenError(f"non-finite logits at step {tau}")
            y = softmax_temperature(logits, self.cfg.temperature)
            if sample_rng is None:
                tokens[:, :, tau] = y.data.argmax(axis=-1).reshape(b, n)
            else:
                z_s = logits.data - logits.data.max(axis=-1, keepdims=True)
                e_s = np.exp(z_s)
                cum = (e_s / e_s.sum(axis=-1, keepdims=True)).cumsum(axis=-1)
                draws = sample_rng.random((b * n, 1))
                picks = np.minimum((draws > cum).sum(axis=-1), self.n_actions - 1)
                tokens[:, :, tau] = picks.reshape(b, n)
            steps.append(ad.reshape(y, (b, n, self.n_actions)))
            prev = y
        relaxed = ad.gather_persons(ad.stack(steps, axis=2), inverse)
        tokens = np.take_along_axis(tokens, inverse[:, :, None], axis=1)
        return GeneratorOutput(relaxed=relaxed, tokens=tokens)
