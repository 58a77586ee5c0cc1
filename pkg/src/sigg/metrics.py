"""Evaluation metrics for discrete sequence generation.

Marginal entropy measures corpus-wide action diversity; conditional
entropy is the mean per-sequence action entropy (0 for constant rows);
their exponentiated difference is the sequence analogue of the
Inception Score. The Fréchet distance is computed between Gaussians
fitted to features of an auxiliary bidirectional recurrent model
trained to predict each sequence's action proportions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (CheckpointError, InputError, NumericalError,
                     ValidationError)
from .nnet import autodiff as ad
from .nnet.autodiff import Variable, backward, constant, no_grad, softmax_temperature
from .nnet.checkpoint import KIND_INCEPTION, read_checkpoint, write_checkpoint
from .nnet.layers import Linear, LSTMCell
from .nnet.params import ParamStore, adam_step

_EIG_FLOOR = -1e-8
_COV_REG = 1e-6


def _frequencies(tokens: np.ndarray, n_actions: int | None = None) -> np.ndarray:
    counts = np.bincount(tokens, minlength=n_actions or 0).astype(np.float64)
    return counts / counts.sum()


def _entropy(freqs: np.ndarray) -> float:
    nz = freqs[freqs > 0]
    return float(-(nz * np.log(nz)).sum())


def marginal_entropy(sequences: Iterable[Sequence[int] | np.ndarray]) -> float:
    """Entropy (nats) of action frequencies pooled over all sequences."""
    seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
    if not seqs or sum(s.size for s in seqs) == 0:
        raise InputError("no tokens to compute marginal entropy over")
    return _entropy(_frequencies(np.concatenate([s.reshape(-1) for s in seqs])))


def conditional_entropy(sequences: Iterable[Sequence[int] | np.ndarray]) -> float:
    """Mean per-sequence entropy (nats) of within-sequence frequencies."""
    seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
    if not seqs:
        raise InputError("no sequences to compute conditional entropy over")
    ents = []
    for s in seqs:
        if s.size == 0:
            raise InputError("empty sequence in conditional entropy input")
        ents.append(_entropy(_frequencies(s.reshape(-1))))
    return float(np.mean(ents))


@dataclass(frozen=True)
class EntropyReport:
    h_m: float
    h_c: float
    is_: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "is_", float(np.exp(self.h_m - self.h_c)))


def entropy_report(sequences: Iterable[Sequence[int] | np.ndarray]) -> EntropyReport:
    seqs = list(sequences)
    return EntropyReport(h_m=marginal_entropy(seqs), h_c=conditional_entropy(seqs))


# ---------------------------------------------------------------------------
# auxiliary proportion-prediction model


class InceptionModel:
    """Bidirectional LSTM encoder + classifier over action proportions.

    The 64-dim activation feeding the final layer is the feature vector
    used for distribution comparisons.
    """

    def __init__(self, store: ParamStore, n_actions: int, rng: np.random.Generator,
                 d_h: int = 64, d_feat: int = 64):
        self.n_actions = n_actions
        self.d_h = d_h
        self.d_feat = d_feat
        self.store = store
        # open forget gates: predicting proportions means accumulating
        # evidence over the whole sequence, so the cells must not leak
        self.fwd = LSTMCell(store, "inc.fwd", n_actions, d_h, rng, forget_bias=3.0)
        self.bwd = LSTMCell(store, "inc.bwd", n_actions, d_h, rng, forget_bias=3.0)
        self.fc1 = Linear(store, "inc.fc1", 2 * d_h, d_feat, rng)
        self.fc2 = Linear(store, "inc.fc2", d_feat, n_actions, rng)

    def forward(self, onehot: np.ndarray | Variable) -> tuple[Variable, Variable]:
        """(B, L, |A|) rows -> (features (B, d_feat), probs (B, |A|))."""
        x = ad.as_variable(onehot)
        b, length, a = x.data.shape
        h_f, c_f = self.fwd.init_state(b)
        h_b, c_b = self.bwd.init_state(b)
        for t in range(length):
            xf = ad.reshape(ad.narrow(x, 1, t, 1), (b, a))
            h_f, c_f = self.fwd.step(xf, h_f, c_f)
            xb = ad.reshape(ad.narrow(x, 1, length - 1 - t, 1), (b, a))
            h_b, c_b = self.bwd.step(xb, h_b, c_b)
        feat = ad.relu(self.fc1(ad.concat([h_f, h_b], axis=-1)))
        probs = softmax_temperature(self.fc2(feat), 1.0)
        return feat, probs

    def save(self, path: str | Path) -> None:
        tensors = dict(self.store.state_tensors())
        tensors["meta.n_actions"] = np.asarray(float(self.n_actions))
        tensors["meta.d_h"] = np.asarray(float(self.d_h))
        tensors["meta.d_feat"] = np.asarray(float(self.d_feat))
        write_checkpoint(path, tensors, kind=KIND_INCEPTION)

    @classmethod
    def load(cls, path: str | Path) -> "InceptionModel":
        tensors, kind = read_checkpoint(path)
        if kind != KIND_INCEPTION:
            raise CheckpointError(f"{path}: not an inception checkpoint (kind {kind})")
        store = ParamStore()
        model = cls(store, int(tensors["meta.n_actions"]),
                    np.random.default_rng(0), d_h=int(tensors["meta.d_h"]),
                    d_feat=int(tensors["meta.d_feat"]))
        state = {k: v for k, v in tensors.items() if not k.startswith("meta.")}
        store.load_state_tensors(state)
        return model


def _proportion_targets(sequences: list[np.ndarray], n_actions: int) -> np.ndarray:
    return np.stack([_frequencies(s, n_actions) for s in sequences])


def _onehot_batch(sequences: list[np.ndarray], n_actions: int) -> np.ndarray:
    return np.eye(n_actions)[np.stack(sequences)]


@dataclass
class InceptionTrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 50
    min_delta: float = 1e-4
    max_epochs: int = 2000
    val_fraction: float = 0.1
    seed: int = 0


def inception_train(sequences: list[np.ndarray], n_actions: int,
                    cfg: InceptionTrainConfig | None = None,
                    min_sequences: int = 100,
                    log=None) -> tuple[InceptionModel, list[dict]]:
    """Fit the proportion predictor to plateau on a validation split.

    Sequences must share one length. Training stops once the best
    validation cross-entropy has not improved by ``min_delta`` for
    ``patience`` epochs (or at ``max_epochs``). The model of the final
    epoch is returned frozen.
    """
    cfg = cfg or InceptionTrainConfig()
    seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
    if len(seqs) < min_sequences:
        raise InputError(f"need >= {min_sequences} sequences, got {len(seqs)}")
    if len({s.shape for s in seqs}) != 1:
        raise InputError("all sequences must share one length")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    store = ParamStore()
    model = InceptionModel(store, n_actions, rng)

    order = rng.permutation(len(seqs))
    n_val = max(1, int(len(seqs) * cfg.val_fraction))
    val_idx, train_idx = order[:n_val], order[n_val:]
    x_all = _onehot_batch(seqs, n_actions)
    t_all = _proportion_targets(seqs, n_actions)

    def batch_loss(idx: np.ndarray) -> Variable:
        _, probs = model.forward(constant(x_all[idx]))
        ce = ad.neg(ad.mean(ad.sum_(ad.mul(constant(t_all[idx]), ad.log(probs)),
                                    axis=-1)))
        return ce

    # plateau rule: stop once the best validation loss improved by less
    # than min_delta over the last `patience` epochs; the frozen model is
    # the best-validation snapshot, not the final state
    best_trace: list[float] = []
    best_state: dict[str, np.ndarray] | None = None
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(train_idx)
        train_losses = []
        for lo in range(0, len(perm), cfg.batch_size):
            loss = batch_loss(perm[lo:lo + cfg.batch_size])
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"inception training diverged at epoch {epoch}")
            backward(loss)
            adam_step(store, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            train_losses.append(value)
        with no_grad():
            val = batch_loss(val_idx).item()
        history.append({"epoch": epoch, "train": float(np.mean(train_losses)),
                        "val": val})
        if log is not None:
            log(history[-1])
        if not best_trace or val < best_trace[-1]:
            best_state = {k: v.copy() for k, v in store.state_tensors().items()}
        best_trace.append(min(best_trace[-1], val) if best_trace else val)
        if epoch > cfg.patience and \
                best_trace[-1 - cfg.patience] - best_trace[-1] < cfg.min_delta:
            break
    if best_state is not None:
        store.load_state_tensors(best_state)
    return model, history


def sequence_features(model: InceptionModel, sequences: Iterable[np.ndarray],
                      batch_size: int = 256) -> np.ndarray:
    """Feature matrix (n_sequences, d_feat) of the frozen model."""
    seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
    if not seqs:
        raise InputError("no sequences to featurize")
    feats = []
    with no_grad():
        for lo in range(0, len(seqs), batch_size):
            chunk = seqs[lo:lo + batch_size]
            x = _onehot_batch(chunk, model.n_actions)
            feat, _ = model.forward(constant(x))
            feats.append(feat.data)
    return np.concatenate(feats, axis=0)


def predict_proportions(model: InceptionModel, sequences: Iterable[np.ndarray],
                        batch_size: int = 256) -> np.ndarray:
    seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
    out = []
    with no_grad():
        for lo in range(0, len(seqs), batch_size):
            x = _onehot_batch(seqs[lo:lo + batch_size], model.n_actions)
            _, probs = model.forward(constant(x))
            out.append(probs.data)
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# Fréchet distance


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if cov.shape != (mean.size, mean.size):
            raise ValidationError(f"covariance {cov.shape} does not match mean "
                                  f"({mean.size},)")
        if np.abs(cov - cov.T).max() > 1e-12:
            raise ValidationError("covariance is not symmetric within 1e-12")


def fit_gaussian(features: np.ndarray, regularize: float = _COV_REG) -> GaussianStats:
    """Sample mean/covariance with a small diagonal ridge."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise InputError(f"need a (n>=2, d) feature matrix, got {features.shape}")
    mean = features.mean(axis=0)
    cov = np.cov(features, rowvar=False) + regularize * np.eye(features.shape[1])
    cov = (cov + cov.T) / 2.0
    return GaussianStats(mean=mean, cov=cov)


def _clamped_sqrt_eigvals(vals: np.ndarray, context: str) -> np.ndarray:
    if vals.min() < _EIG_FLOOR:
        raise NumericalError(f"{context}: eigenvalue {vals.min():.3e} below "
                             f"{_EIG_FLOOR:.0e}")
    return np.sqrt(np.clip(vals, 0.0, None))


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(Ca + Cb - 2 (Ca Cb)^{1/2}).

    The matrix root is taken through the symmetric form
    C_a^{1/2} C_b C_a^{1/2} via eigendecomposition; tiny negative
    eigenvalues are clamped, larger ones abort.
    """
    if a.mean.shape != b.mean.shape:
        raise ValidationError("feature dimensions differ between the two sets")
    vals_a, vecs_a = np.linalg.eigh(a.cov)
    roots_a = _clamped_sqrt_eigvals(vals_a, "first covariance")
    half_a = (vecs_a * roots_a) @ vecs_a.T
    inner = half_a @ b.cov @ half_a
    inner = (inner + inner.T) / 2.0
    vals_m = np.linalg.eigvalsh(inner)
    tr_root = _clamped_sqrt_eigvals(vals_m, "cross covariance").sum()
    diff = a.mean - b.mean
    dist = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_root)
    return dist


def sfid(real_sequences: list[np.ndarray], generated_sequences: list[np.ndarray],
         model: InceptionModel) -> float:
    """Fréchet distance between feature Gaussians of the two corpora."""
    min_count = model.d_feat + 1
    reals = list(real_sequences)
    gens = list(generated_sequences)
    if len(reals) < min_count or len(gens) < min_count:
        raise InputError(f"each set needs >= {min_count} sequences for a "
                         f"non-degenerate covariance")
    stats_r = fit_gaussian(sequence_features(model, reals))
    stats_g = fit_gaussian(sequence_features(model, gens))
    return frechet_distance(stats_r, stats_g)
