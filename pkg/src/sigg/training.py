"""Adversarial training loop: hinge discriminator loss, generator
adversarial + squared-error supervision losses, alternation schedule,
ablation switches, checkpointing, and the per-epoch metrics stream.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .actionspace import Interaction
from .discriminator import Discriminator, DiscriminatorConfig
from .errors import (CheckpointError, InputError, NumericalError,
                     ShapeError, ValidationError)
from .generator import Generator, GeneratorConfig, one_hot
from .metrics import InceptionModel, entropy_report, fit_gaussian, frechet_distance
from .nnet import autodiff as ad
from .nnet.autodiff import Variable, backward, constant, no_grad
from .nnet.checkpoint import (KIND_TRAIN, read_checkpoint, restore_rng_state,
                              rng_state_tensor, write_checkpoint)
from .nnet.params import ParamStore, adam_step

METRICS_HEADER = ["epoch", "h_m", "h_c", "is", "sfid", "d_loss", "g_adv", "g_sup"]
METRICS_VERSION_LINE = "# sigg-metrics-v1"


def d_loss(real_scores: Variable, fake_scores: Variable) -> Variable:
    """Hinge loss: mean(max(0, 1 + D_fake)) + mean(max(0, 1 - D_real))."""
    fake_term = ad.mean(ad.relu(ad.add(constant(1.0), fake_scores)))
    real_term = ad.mean(ad.relu(ad.sub(constant(1.0), real_scores)))
    return ad.add(fake_term, real_term)


def supervision_loss(relaxed: Variable, target_onehot: Variable | np.ndarray) -> Variable:
    """Mean squared difference over every (batch, person, step, action) entry."""
    target_onehot = ad.as_variable(target_onehot)
    if relaxed.data.shape != target_onehot.data.shape:
        raise ShapeError(f"relaxed {relaxed.data.shape} vs target "
                         f"{target_onehot.data.shape}")
    return ad.mean(ad.square(ad.sub(relaxed, target_onehot)))


def g_loss(fake_scores: Variable, relaxed: Variable,
           target_onehot: Variable | np.ndarray, lambda_sup: float) -> Variable:
    """Generator loss: -mean(D_fake) + lambda_sup * supervision term."""
    adv = ad.neg(ad.mean(fake_scores))
    if lambda_sup == 0.0:
        return adv
    return ad.add(adv, ad.scale(supervision_loss(relaxed, target_onehot), lambda_sup))


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    d_steps_per_g: int = 1
    lambda_sup: float = 1e-3
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_interval: int = 10
    save_interval: int = 100
    adversarial_on: bool = True

    def __post_init__(self):
        if self.lambda_sup < 0:
            raise ValidationError(f"lambda_sup must be >= 0, got {self.lambda_sup}")
        if not self.adversarial_on and self.lambda_sup == 0:
            raise ValidationError("no active loss: adversarial off and lambda_sup == 0")
        if self.batch_size < 1 or self.epochs < 0 or self.d_steps_per_g < 1:
            raise ValidationError("epochs/batch_size/d_steps_per_g out of range")


class MetricsWriter:
    """Append-safe CSV stream of per-epoch metrics."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        if not self.path.exists() or self.path.stat().st_size == 0:
            with self.path.open("w", encoding="utf-8", newline="") as fh:
                fh.write(METRICS_VERSION_LINE + "\n")
                csv.writer(fh).writerow(METRICS_HEADER)

    def write(self, row: dict) -> None:
        with self.path.open("a", encoding="utf-8", newline="") as fh:
            csv.writer(fh).writerow([row.get(k, "") for k in METRICS_HEADER])


def read_metrics(path: str | Path) -> list[dict]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    out = []
    for rec in reader:
        out.append({k: (float(v) if v not in ("", None) else float("nan"))
                    for k, v in rec.items()})
    return out


class Trainer:
    """Owns both models, their optimizers, and the seeded data order."""

    def __init__(self, dataset: list[Interaction], n_actions: int,
                 gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig,
                 train_cfg: TrainConfig):
        if not dataset:
            raise InputError("training dataset is empty")
        horizons = {s.horizon for s in dataset}
        if horizons != {disc_cfg.horizon}:
            raise ValidationError(f"dataset horizons {sorted(horizons)} != "
                                  f"configured horizon {disc_cfg.horizon}")
        for s in dataset:
            s.validate_tokens(n_actions)
        self.dataset = dataset
        self.n_actions = n_actions
        self.gen_cfg = gen_cfg
        self.disc_cfg = disc_cfg
        self.cfg = train_cfg
        self.horizon = disc_cfg.horizon

        ss = np.random.SeedSequence(train_cfg.seed)
        init_g, init_d, shuffle, noise = [np.random.default_rng(c) for c in ss.spawn(4)]
        self.shuffle_rng = shuffle
        self.noise_rng = noise
        self.store_g = ParamStore()
        self.generator = Generator(self.store_g, n_actions, gen_cfg, init_g)
        self.store_d: ParamStore | None = None
        self.discriminator: Discriminator | None = None
        if train_cfg.adversarial_on:
            self.store_d = ParamStore()
            self.discriminator = Discriminator(self.store_d, n_actions, disc_cfg, init_d)
        self.epoch = 0

    # -- batching -----------------------------------------------------------

    def _batches(self) -> list[np.ndarray]:
        order = self.shuffle_rng.permutation(len(self.dataset))
        buckets: dict[tuple[int, int], list[int]] = {}
        for idx in order:
            s = self.dataset[idx]
            buckets.setdefault((s.persons, s.t_obs), []).append(idx)
        batches = []
        bs = self.cfg.batch_size
        for key in sorted(buckets):
            idxs = buckets[key]
            for lo in range(0, len(idxs), bs):
                batches.append(np.asarray(idxs[lo:lo + bs]))
        return batches

    def _gather(self, idxs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        obs = np.stack([self.dataset[i].observed for i in idxs])
        tgt = np.stack([self.dataset[i].target for i in idxs])
        return obs, tgt

    # -- optimization steps -------------------------------------------------

    def _rollout(self, obs: np.ndarray, taped: bool):
        b, n, _ = obs.shape
        noise = self.generator.draw_noise(self.noise_rng, b, n)
        if taped:
            return self.generator.generate(obs, self.horizon, noise,
                                           training=True, update_stats=True)
        with no_grad():
            return self.generator.generate(obs, self.horizon, noise,
                                           training=True, update_stats=False)

    def _d_step(self, obs: np.ndarray, tgt: np.ndarray,
                fake_data: np.ndarray | None = None) -> float:
        assert self.discriminator is not None and self.store_d is not None
        if fake_data is None:
            fake_data = self._rollout(obs, taped=False).relaxed.data
        self.discriminator.power_iterate()
        x_oh = constant(one_hot(obs, self.n_actions))
        y_oh = constant(one_hot(tgt, self.n_actions))
        conds = self.discriminator.encode_conditions(x_oh)
        real_out = self.discriminator.score_with_conditions(conds, y_oh)
        fake_out = self.discriminator.score_with_conditions(conds, constant(fake_data))
        loss = d_loss(real_out.d_tot, fake_out.d_tot)
        value = loss.item()
        if not np.isfinite(value):
            self._abort("discriminator loss", value)
        backward(loss)
        adam_step(self.store_d, self.cfg.lr_d, self.cfg.beta1, self.cfg.beta2,
                  self.cfg.adam_eps)
        return value

    def _g_step(self, obs: np.ndarray, tgt: np.ndarray,
                rollout=None) -> tuple[float, float]:
        if rollout is None:
            rollout = self._rollout(obs, taped=True)
        y_oh = constant(one_hot(tgt, self.n_actions))
        sup = supervision_loss(rollout.relaxed, y_oh)
        adv_value = 0.0
        if self.cfg.adversarial_on:
            assert self.discriminator is not None and self.store_d is not None
            self.store_d.set_trainable(False)
            try:
                x_oh = constant(one_hot(obs, self.n_actions))
                conds = self.discriminator.encode_conditions(x_oh)
                fake_out = self.discriminator.score_with_conditions(conds,
                                                                    rollout.relaxed)
                adv = ad.neg(ad.mean(fake_out.d_tot))
                adv_value = adv.item()
                loss = adv if self.cfg.lambda_sup == 0 else \
                    ad.add(adv, ad.scale(sup, self.cfg.lambda_sup))
            finally:
                self.store_d.set_trainable(True)
        else:
            loss = ad.scale(sup, self.cfg.lambda_sup)
        sup_value = sup.item()
        if not np.isfinite(loss.item()):
            self._abort("generator loss", loss.item())
        backward(loss)
        adam_step(self.store_g, self.cfg.lr_g, self.cfg.beta1, self.cfg.beta2,
                  self.cfg.adam_eps)
        return adv_value, sup_value

    def _abort(self, what: str, value: float) -> None:
        g_norm = self.store_g.param_norm()
        d_norm = self.store_d.param_norm() if self.store_d else float("nan")
        raise NumericalError(
            f"{what} became {value} at epoch {self.epoch}; "
            f"|params_g|={g_norm:.3e} |params_d|={d_norm:.3e}")

    def run_epoch(self) -> dict:
        """One pass over the dataset; returns mean losses.

        Per batch: one taped rollout serves the first discriminator
        update (as detached data) and, after the discriminator updates,
        the generator update (as the differentiable graph). Additional
        discriminator updates draw fresh rollouts.
        """
        d_vals, adv_vals, sup_vals = [], [], []
        for idxs in self._batches():
            obs, tgt = self._gather(idxs)
            rollout = None
            if self.cfg.adversarial_on:
                rollout = self._rollout(obs, taped=True)
                d_vals.append(self._d_step(obs, tgt, rollout.relaxed.data))
                for _ in range(self.cfg.d_steps_per_g - 1):
                    d_vals.append(self._d_step(obs, tgt))
            adv, sup = self._g_step(obs, tgt, rollout)
            adv_vals.append(adv)
            sup_vals.append(sup)
        self.epoch += 1
        return {
            "d_loss": float(np.mean(d_vals)) if d_vals else float("nan"),
            "g_adv": float(np.mean(adv_vals)),
            "g_sup": float(np.mean(sup_vals)),
        }

    # -- evaluation ---------------------------------------------------------

    def generate_corpus(self, eval_seed: int = 0, batch_size: int = 64,
                        sample: bool = False) -> list[Interaction]:
        """Continuations for every dataset sample (eval-mode, seeded)."""
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=self.cfg.seed, spawn_key=(1000 + eval_seed,)))
        out: list[Interaction] = [None] * len(self.dataset)  # type: ignore[list-item]
        buckets: dict[tuple[int, int], list[int]] = {}
        for idx, s in enumerate(self.dataset):
            buckets.setdefault((s.persons, s.t_obs), []).append(idx)
        for key in sorted(buckets):
            idxs = buckets[key]
            for lo in range(0, len(idxs), batch_size):
                chunk = idxs[lo:lo + batch_size]
                obs = np.stack([self.dataset[i].observed for i in chunk])
                b, n, _ = obs.shape
                noise = self.generator.draw_noise(rng, b, n)
                srng = rng if sample else None
                with no_grad():
                    gen = self.generator.generate(obs, self.horizon, noise,
                                                  training=False, sample_rng=srng)
                for j, i in enumerate(chunk):
                    s = self.dataset[i]
                    tokens = np.concatenate([obs[j], gen.tokens[j]], axis=1)
                    out[i] = Interaction(persons=s.persons, t_obs=s.t_obs,
                                         horizon=self.horizon, tokens=tokens,
                                         sample_id=s.sample_id)
        return out

    def metrics_row(self, inception: InceptionModel | None = None,
                    real_stats=None, eval_seed: int = 0) -> dict:
        generated = self.generate_corpus(eval_seed=eval_seed)
        gen_targets = [row for s in generated for row in s.target]
        rep = entropy_report(gen_targets)
        row = {"epoch": self.epoch, "h_m": rep.h_m, "h_c": rep.h_c, "is": rep.is_,
               "sfid": float("nan")}
        if inception is not None:
            from .metrics import sequence_features
            feats = sequence_features(inception, [row_ for s in generated
                                                  for row_ in s.tokens])
            if real_stats is None:
                real_feats = sequence_features(inception, [row_ for s in self.dataset
                                                           for row_ in s.tokens])
                real_stats = fit_gaussian(real_feats)
            row["sfid"] = frechet_distance(real_stats, fit_gaussian(feats))
        return row

    # -- persistence --------------------------------------------------------

    def _meta_tensors(self) -> dict[str, np.ndarray]:
        g, d, t = self.gen_cfg, self.disc_cfg, self.cfg
        meta = {
            "meta.n_actions": self.n_actions,
            "meta.gen.d_h": g.d_h, "meta.gen.d_embed": g.d_embed,
            "meta.gen.noise_dim": g.noise_dim, "meta.gen.d_deep": g.d_deep,
            "meta.gen.temperature": g.temperature,
            "meta.gen.spectral_out": int(g.spectral_out),
            "meta.disc.kind": ("local", "simple", "dense").index(d.kind),
            "meta.disc.d_h": d.d_h, "meta.disc.d_phi": d.d_phi,
            "meta.disc.d_psi": d.d_psi, "meta.disc.lambda_inter": d.lambda_inter,
            "meta.disc.horizon": d.horizon,
            "meta.disc.indiv_on": int(d.indiv_on), "meta.disc.inter_on": int(d.inter_on),
            "meta.disc.spectral": int(d.spectral),
            "meta.train.adversarial_on": int(t.adversarial_on),
            "meta.epoch": self.epoch,
        }
        chunks = d.chunks if d.chunks is not None else ()
        meta["meta.disc.chunks"] = np.asarray(chunks, dtype=np.float64)
        return {k: np.asarray(v, dtype=np.float64) for k, v in meta.items()}

    def save_checkpoint(self, path: str | Path) -> None:
        tensors = dict(self.store_g.state_tensors("g."))
        if self.store_d is not None:
            tensors.update(self.store_d.state_tensors("d."))
        tensors["rng.shuffle"] = rng_state_tensor(self.shuffle_rng)
        tensors["rng.noise"] = rng_state_tensor(self.noise_rng)
        tensors.update(self._meta_tensors())
        write_checkpoint(path, tensors, kind=KIND_TRAIN)

    def load_checkpoint(self, path: str | Path) -> None:
        tensors, kind = read_checkpoint(path)
        if kind != KIND_TRAIN:
            raise CheckpointError(f"{path}: not a training checkpoint (kind {kind})")
        current = self._meta_tensors()
        for key, val in current.items():
            if key == "meta.epoch":
                continue
            other = tensors.get(key)
            if other is None or other.shape != val.shape or not np.array_equal(other, val):
                raise CheckpointError(f"{path}: configuration mismatch on {key}")
        self.store_g.load_state_tensors({k[2:]: v for k, v in tensors.items()
                                         if k.startswith("g.")})
        if self.store_d is not None:
            self.store_d.load_state_tensors({k[2:]: v for k, v in tensors.items()
                                             if k.startswith("d.")})
        restore_rng_state(self.shuffle_rng, tensors["rng.shuffle"])
        restore_rng_state(self.noise_rng, tensors["rng.noise"])
        self.epoch = int(tensors["meta.epoch"])

    # -- main loop ----------------------------------------------------------

    def train(self, out_dir: str | Path | None = None,
              inception: InceptionModel | None = None,
              log=None) -> list[dict]:
        """Run the configured number of epochs; returns metric rows."""
        out_dir = Path(out_dir) if out_dir is not None else None
        writer = None
        real_stats = None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            writer = MetricsWriter(out_dir / "metrics.csv")
        if inception is not None:
            from .metrics import sequence_features
            real_stats = fit_gaussian(sequence_features(
                inception, [row for s in self.dataset for row in s.tokens]))
        history = []
        for _ in range(self.cfg.epochs):
            losses = self.run_epoch()
            if self.epoch % self.cfg.eval_interval == 0 or self.epoch == self.cfg.epochs:
                row = self.metrics_row(inception, real_stats)
                row.update(losses)
                history.append(row)
                if writer is not None:
                    writer.write(row)
                if log is not None:
                    log(row)
            if out_dir is not None and (self.epoch % self.cfg.save_interval == 0
                                        or self.epoch == self.cfg.epochs):
                self.save_checkpoint(out_dir / "checkpoint.sigg")
        return history
