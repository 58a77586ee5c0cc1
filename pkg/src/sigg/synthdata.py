"""Coupled-Markov simulator producing interaction datasets with known
statistics.

Each person follows a persona-specific Markov chain over token ids;
with probability ``coupling`` a step instead copies the most recent
action of a uniformly chosen other person. Persons update sequentially
within a frame, so "most recent" sees the current frame for persons
already updated — with full coupling a group collapses onto a shared
action stream. A dwell parameter floors the self-transition mass, which
controls how steady sequences are.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .actionspace import ActionDictionary, Interaction
from .errors import ConfigError


@dataclass
class SynthConfig:
    n_actions: int = 14
    n_persons: int = 3
    transitions: np.ndarray | None = None  # (personas, |A|, |A|) row-stochastic
    coupling: float = 0.15
    dwell: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.n_actions < 2:
            raise ConfigError(f"need >= 2 actions, got {self.n_actions}")
        if self.n_persons < 2:
            raise ConfigError(f"need >= 2 persons, got {self.n_persons}")
        if not 0.0 <= self.coupling <= 1.0:
            raise ConfigError(f"coupling must lie in [0, 1], got {self.coupling}")
        if not 0.0 <= self.dwell <= 1.0:
            raise ConfigError(f"dwell must lie in [0, 1], got {self.dwell}")
        if self.transitions is None:
            rng = np.random.default_rng(np.random.SeedSequence(
                entropy=self.seed, spawn_key=(0,)))
            self.transitions = persona_matrices(rng, self.n_persons, self.n_actions,
                                                self.dwell)
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        if self.transitions.ndim != 3 or self.transitions.shape[1:] != \
                (self.n_actions, self.n_actions):
            raise ConfigError(f"transitions shape {self.transitions.shape} invalid")
        rows = self.transitions.sum(axis=-1)
        if np.abs(rows - 1.0).max() > 1e-12 or (self.transitions < 0).any():
            raise ConfigError("transition rows must be non-negative and sum to 1")


def persona_matrices(rng: np.random.Generator, n_personas: int, n_actions: int,
                     dwell: float) -> np.ndarray:
    """Random row-stochastic matrices with self-transition floor ``dwell``."""
    base = rng.random((n_personas, n_actions, n_actions)) + 0.05
    base /= base.sum(axis=-1, keepdims=True)
    eye = np.eye(n_actions)
    mats = (1.0 - dwell) * base + dwell * eye
    # guard against accumulated rounding in the row sums
    mats /= mats.sum(axis=-1, keepdims=True)
    return mats


def stationary_distribution(matrix: np.ndarray, tol: float = 1e-13,
                            max_iters: int = 100000) -> np.ndarray:
    """Left fixed point of a row-stochastic matrix, by power iteration."""
    v = np.full(matrix.shape[0], 1.0 / matrix.shape[0])
    for _ in range(max_iters):
        nxt = v @ matrix
        nxt /= nxt.sum()
        if np.abs(nxt - v).max() < tol:
            return nxt
        v = nxt
    return v


def simulate(config: SynthConfig, n_samples: int, t_obs: int = 60,
             horizon: int = 40) -> list[Interaction]:
    """Seeded dataset of ``n_samples`` interactions in the standard format.

    Each sample uses its own derived seed, so generation order (or
    parallel evaluation per sample) cannot change the result.
    """
    length = t_obs + horizon
    n = config.n_persons
    n_personas = config.transitions.shape[0]
    samples = []
    for idx in range(n_samples):
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=config.seed, spawn_key=(1, idx)))
        tokens = np.zeros((n, length), dtype=np.int64)
        tokens[:, 0] = rng.integers(config.n_actions, size=n)
        for t in range(1, length):
            for i in range(n):
                if n > 1 and rng.random() < config.coupling:
                    j = int(rng.integers(n - 1))
                    j = j if j < i else j + 1
                    tokens[i, t] = tokens[j, t] if j < i else tokens[j, t - 1]
                else:
                    probs = config.transitions[i % n_personas, tokens[i, t - 1]]
                    tokens[i, t] = rng.choice(config.n_actions, p=probs)
        samples.append(Interaction(persons=n, t_obs=t_obs, horizon=horizon,
                                   tokens=tokens, sample_id=f"synth:{idx}"))
    return samples


def synthetic_dictionary(n_actions: int) -> ActionDictionary:
    """Placeholder dictionary giving synthetic token ids a serializable
    form: entry i is the composite with bitmask i, plus the catch-all."""
    if n_actions < 2 or n_actions > 256:
        raise ConfigError(f"n_actions {n_actions} outside [2, 256]")
    return ActionDictionary(entries=tuple(range(n_actions - 1)), coverage=1.0)
