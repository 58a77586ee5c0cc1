"""Dual-stream sequence discriminators.

Three scorer variants share one structure: an individual stream rates
each person's action row on its own, an interaction stream rates the
max-pooled group, and both condition on codes of the observed prefix
via a projection term whose weight decays with temporal distance from
that prefix (learned exponent).

* ``local``: overlapping fixed-length chunks at several resolutions,
  each chunk encoded by a per-resolution LSTM and scored independently.
* ``simple``: one LSTM pass, only the final hidden state is scored.
* ``dense``: one LSTM pass, every step's hidden state is scored and the
  scores averaged.

Real rows enter as exact one-hot rows through the same code path as
relaxed generator output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DiscError, ShapeError, ValidationError
from .nnet import autodiff as ad
from .nnet.autodiff import Variable, constant
from .nnet.layers import LSTMCell, SpectralLinear
from .nnet.params import ParamStore

DISC_KINDS = ("local", "simple", "dense")


@dataclass(frozen=True)
class Resolution:
    length: int  # chunk width, in generated steps
    stride: int  # start-to-start interval
    starts: tuple[int, ...]  # 1-based start indices within the horizon

    @property
    def count(self) -> int:
        return len(self.starts)


@dataclass(frozen=True)
class ChunkPlan:
    horizon: int
    resolutions: tuple[Resolution, ...]


def plan_chunks(horizon: int, lengths: tuple[int, ...] | None = None) -> ChunkPlan:
    """Chunk layout for a given horizon.

    Default lengths are {T, T//2, T//4, 5}, deduplicated, descending.
    Strides are floor(length/2), giving >= 50% overlap; the chunk count
    per resolution is floor((T - length)/stride) + 1. Lengths of 1 are
    skipped in the default set (they cannot stride) and rejected when
    requested explicitly.
    """
    explicit = lengths is not None
    if lengths is None:
        lengths = (horizon, horizon // 2, horizon // 4, 5)
        lengths = tuple(l for l in lengths if l >= 2)
    lengths = tuple(sorted(set(int(l) for l in lengths), reverse=True))
    if not lengths:
        raise ConfigError("no usable chunk lengths")
    if min(lengths) > horizon:
        raise ConfigError(f"horizon {horizon} shorter than smallest chunk {min(lengths)}")
    if not explicit and horizon < 5:
        raise ConfigError(f"horizon {horizon} below the default minimum chunk size 5")
    resolutions = []
    for length in lengths:
        if length > horizon:
            raise ConfigError(f"chunk length {length} exceeds horizon {horizon}")
        if length < 2 and length != horizon:
            raise ConfigError(f"chunk length {length} cannot stride")
        stride = max(length // 2, 1)
        if length == horizon:
            starts: tuple[int, ...] = (1,)
        else:
            count = (horizon - length) // stride + 1
            starts = tuple(1 + k * stride for k in range(count))
        resolutions.append(Resolution(length=length, stride=stride, starts=starts))
    return ChunkPlan(horizon=horizon, resolutions=tuple(resolutions))


class ProjectionHead:
    """Scores a (condition code, chunk code) pair.

    The chunk code runs through a dense layer phi; the score combines a
    bilinear condition term, attenuated by start_index**(-1/beta) with
    trainable beta > 0 (stored as its log), and an unconditional path
    psi. All dense maps are spectrally normalized.
    """

    def __init__(self, store: ParamStore, name: str, d_h: int, d_phi: int,
                 d_psi: int, rng: np.random.Generator, spectral: bool = True):
        self.phi = SpectralLinear(store, f"{name}.phi", d_h, d_phi, rng, enabled=spectral)
        self.psi = SpectralLinear(store, f"{name}.psi", d_phi, d_psi, rng, enabled=spectral)
        self.bilinear = SpectralLinear(store, f"{name}.V", d_phi, d_h, rng,
                                       bias=False, enabled=spectral)
        self.out = SpectralLinear(store, f"{name}.A", d_psi, 1, rng,
                                  bias=False, enabled=spectral)
        self.log_beta = store.add_param(f"{name}.log_beta", np.zeros(()))

    @property
    def beta(self) -> float:
        return float(np.exp(self.log_beta.data))

    def spectral_layers(self) -> list[SpectralLinear]:
        return [self.phi, self.psi, self.bilinear, self.out]

    def score(self, cond: Variable, codes: Variable, starts: tuple[int, ...]) -> Variable:
        """cond (R, d_h), codes (R, K, d_h), starts length K -> scores (R,)."""
        r, k, d_h = codes.data.shape
        flat = ad.reshape(codes, (r * k, d_h))
        phi_out = ad.leaky_relu(self.phi(flat), 0.2)
        vphi = self.bilinear(phi_out)
        cond_rep = ad.reshape(ad.broadcast_axis(cond, 1, k), (r * k, d_h))
        bilin = ad.sum_(ad.mul(vphi, cond_rep), axis=-1, keepdims=True)
        neg_log_tau = constant(np.tile(-np.log(np.asarray(starts, dtype=np.float64)), r)
                               .reshape(r * k, 1))
        inv_beta = ad.exp(ad.neg(self.log_beta))
        attenuation = ad.exp(ad.mul(neg_log_tau, inv_beta))
        combined = ad.add(self.psi(phi_out), ad.mul(attenuation, bilin))
        scores = ad.reshape(self.out(combined), (r, k))
        return ad.mean(scores, axis=1)


@dataclass
class StreamOutputs:
    """Scores of one batch: per-person, per-interaction, and their mix."""

    d_indiv: Variable | None  # (B, N) or None when the stream is off
    d_inter: Variable | None  # (B,) or None
    d_tot: Variable  # (B,)
    lambda_inter: float
    by_resolution: dict = field(default_factory=dict)  # stream -> [(length, Variable)]


class _Stream:
    """One discriminator stream: conditioning encoder + chunk scorers."""

    def __init__(self, store: ParamStore, prefix: str, n_actions: int, d_h: int,
                 d_phi: int, d_psi: int, kind: str, plan: ChunkPlan,
                 rng: np.random.Generator, spectral: bool):
        self.d_h = d_h
        self.kind = kind
        self.plan = plan
        self.cond_cell = LSTMCell(store, f"{prefix}.cond", n_actions, d_h, rng)
        self.cells: list[LSTMCell] = []
        self.heads: list[ProjectionHead] = []
        if kind == "local":
            for res in plan.resolutions:
                self.cells.append(LSTMCell(store, f"{prefix}.c{res.length}", n_actions,
                                           d_h, rng))
                self.heads.append(ProjectionHead(store, f"{prefix}.h{res.length}", d_h,
                                                 d_phi, d_psi, rng, spectral))
        else:
            self.cells.append(LSTMCell(store, f"{prefix}.seq", n_actions, d_h, rng))
            self.heads.append(ProjectionHead(store, f"{prefix}.head", d_h, d_phi,
                                             d_psi, rng, spectral))

    def spectral_layers(self) -> list[SpectralLinear]:
        return [layer for head in self.heads for layer in head.spectral_layers()]

    def _run_rows(self, cell: LSTMCell, seq: Variable, rows: int, length: int,
                  collect: bool = False):
        states = []
        h, c = cell.init_state(rows)
        for t in range(length):
            x = ad.reshape(ad.narrow(seq, 1, t, 1), (rows, seq.data.shape[-1]))
            h, c = cell.step(x, h, c)
            if collect:
                states.append(h)
        return states if collect else h

    def encode_condition(self, observed: Variable) -> Variable:
        """(B, N, t_obs, |A|) distribution rows -> (B, N, d_h) codes.

        Rows run in canonical person order (bit-exact equivariance)."""
        from .generator import canonical_person_order

        b, n, t_obs, a = observed.data.shape
        order, inverse = canonical_person_order(observed.data)
        ordered = ad.gather_persons(observed, order)
        flat = ad.reshape(ordered, (b * n, t_obs, a))
        h = self._run_rows(self.cond_cell, flat, b * n, t_obs)
        return ad.gather_persons(ad.reshape(h, (b, n, self.d_h)), inverse)

    def _chunk_codes(self, seq: Variable) -> list[tuple[Resolution, Variable]]:
        """Per resolution: (B, N, K, d_h) codes of every chunk."""
        b, n, t, a = seq.data.shape
        flat = ad.reshape(seq, (b * n, t, a))
        out = []
        if self.kind == "local":
            for res, cell in zip(self.plan.resolutions, self.cells):
                starts0 = np.asarray(res.starts) - 1
                win = ad.gather_windows(flat, starts0, res.length)
                win = ad.reshape(win, (b * n * res.count, res.length, a))
                h = self._run_rows(cell, win, b * n * res.count, res.length)
                out.append((res, ad.reshape(h, (b, n, res.count, self.d_h))))
        elif self.kind == "simple":
            h = self._run_rows(self.cells[0], flat, b * n, t)
            res = Resolution(length=t, stride=t, starts=(1,))
            out.append((res, ad.reshape(h, (b, n, 1, self.d_h))))
        else:  # dense
            states = self._run_rows(self.cells[0], flat, b * n, t, collect=True)
            h_all = ad.stack(states, axis=1)  # (B*N, T, d_h)
            res = Resolution(length=1, stride=1, starts=tuple(range(1, t + 1)))
            out.append((res, ad.reshape(h_all, (b, n, t, self.d_h))))
        return out

    def score(self, cond: Variable, seq: Variable,
              pooled: bool) -> tuple[Variable, list[tuple[int, Variable]]]:
        """Average chunk scores over resolutions.

        ``pooled=False``: per-person scores (B, N). ``pooled=True``:
        chunk codes and condition codes are max-pooled over persons
        before scoring, giving one score per interaction (B,).
        """
        b, n = cond.data.shape[:2]
        details = []
        parts = []
        chunked = self._chunk_codes(seq)
        if pooled:
            cond_use = ad.max_pool(cond, axis=1)  # (B, d_h)
        else:
            cond_use = ad.reshape(cond, (b * n, self.d_h))
        for idx, (res, codes) in enumerate(chunked):
            head = self.heads[idx if self.kind == "local" else 0]
            if pooled:
                codes_use = ad.max_pool(codes, axis=1)  # (B, K, d_h)
                s = head.score(cond_use, codes_use, res.starts)  # (B,)
            else:
                codes_use = ad.reshape(codes, (b * n, res.count, self.d_h))
                s = ad.reshape(head.score(cond_use, codes_use, res.starts), (b, n))
            details.append((res.length, s))
            parts.append(s)
        total = parts[0] if len(parts) == 1 else \
            ad.scale(sum_variables(parts), 1.0 / len(parts))
        return total, details


def sum_variables(parts: list[Variable]) -> Variable:
    acc = parts[0]
    for p in parts[1:]:
        acc = ad.add(acc, p)
    return acc


@dataclass
class DiscriminatorConfig:
    kind: str = "local"
    d_h: int = 64
    d_phi: int = 128
    d_psi: int = 128
    lambda_inter: float = 1.0
    horizon: int = 40
    chunks: tuple[int, ...] | None = None
    indiv_on: bool = True
    inter_on: bool = True
    spectral: bool = True

    def __post_init__(self):
        if self.kind not in DISC_KINDS:
            raise ConfigError(f"disc.kind must be one of {DISC_KINDS}, got {self.kind!r}")
        if self.lambda_inter < 0:
            raise ValidationError(f"lambda_inter must be >= 0, got {self.lambda_inter}")
        if not (self.indiv_on or self.inter_on):
            raise ValidationError("at least one discriminator stream must be enabled")


class Discriminator:
    """Two-stream scorer with a shared chunk plan."""

    def __init__(self, store: ParamStore, n_actions: int, cfg: DiscriminatorConfig,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.n_actions = n_actions
        self.store = store
        self.plan = plan_chunks(cfg.horizon, cfg.chunks) if cfg.kind == "local" else \
            ChunkPlan(horizon=cfg.horizon, resolutions=())
        self.streams: dict[str, _Stream] = {}
        if cfg.indiv_on:
            self.streams["indiv"] = _Stream(store, "disc.indiv", n_actions, cfg.d_h,
                                            cfg.d_phi, cfg.d_psi, cfg.kind, self.plan,
                                            rng, cfg.spectral)
        if cfg.inter_on:
            self.streams["inter"] = _Stream(store, "disc.inter", n_actions, cfg.d_h,
                                            cfg.d_phi, cfg.d_psi, cfg.kind, self.plan,
                                            rng, cfg.spectral)

    def power_iterate(self) -> None:
        for stream in self.streams.values():
            for layer in stream.spectral_layers():
                layer.power_iterate()

    def encode_conditions(self, observed: Variable | np.ndarray) -> dict[str, Variable]:
        observed = ad.as_variable(observed)
        return {name: s.encode_condition(observed) for name, s in self.streams.items()}

    def score_with_conditions(self, conds: dict[str, Variable],
                              seq: Variable | np.ndarray) -> StreamOutputs:
        from .generator import canonical_person_order

        seq = ad.as_variable(seq)
        if seq.data.ndim != 4 or seq.data.shape[2] != self.cfg.horizon:
            raise ShapeError(f"sequence shape {seq.data.shape} does not match "
                             f"horizon {self.cfg.horizon}")
        key_arrays = [seq.data] + [conds[k].data for k in sorted(conds)]
        order, inverse = canonical_person_order(*key_arrays)
        seq = ad.gather_persons(seq, order)
        conds = {k: ad.gather_persons(v, order) for k, v in conds.items()}
        by_res = {}
        d_indiv = d_inter = None
        if "indiv" in self.streams:
            d_indiv, det = self.streams["indiv"].score(conds["indiv"], seq, pooled=False)
            d_indiv = ad.gather_persons(d_indiv, inverse)
            by_res["indiv"] = [(length, ad.gather_persons(v, inverse))
                               for length, v in det]
        if "inter" in self.streams:
            d_inter, det = self.streams["inter"].score(conds["inter"], seq, pooled=True)
            by_res["inter"] = det
        parts = []
        if d_indiv is not None:
            parts.append(ad.mean(d_indiv, axis=1))
        if d_inter is not None:
            parts.append(ad.scale(d_inter, self.cfg.lambda_inter))
        d_tot = parts[0] if len(parts) == 1 else ad.add(parts[0], parts[1])
        if not np.isfinite(d_tot.data).all():
            raise DiscError("non-finite discriminator score")
        return StreamOutputs(d_indiv=d_indiv, d_inter=d_inter, d_tot=d_tot,
                             lambda_inter=self.cfg.lambda_inter, by_resolution=by_res)

    def score(self, observed: Variable | np.ndarray,
              seq: Variable | np.ndarray) -> StreamOutputs:
        return self.score_with_conditions(self.encode_conditions(observed), seq)
