"""Action vocabulary, annotation preprocessing, and dataset files.

Composite actions are bitmasks over the eight atomic actions. A
dictionary maps the most frequent composites to dense token ids, with a
final catch-all id absorbing everything rarer.

File formats (all JSON-lines, UTF-8):

* raw annotations: one line per group per frame,
  ``{"group": str, "frame": int, "persons": [{"id": str,
  "actions": [0/1 x 8], "occlusion": "none"|"partial"|"total"}]}``
* dataset: one line per sample,
  ``{"id": str, "t_obs": int, "horizon": int, "actions": [[int, ...]]}``
* dictionary (plain JSON, stored alongside a dataset):
  ``{"entries": [[atomic indices]], "coverage": float}``
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, ParseError, RangeError, ValidationError

ATOMIC_ACTIONS: tuple[str, ...] = (
    "walking",
    "stepping",
    "drinking",
    "hand gesture",
    "head gesture",
    "hair touching",
    "speaking",
    "laughing",
)

OCCLUSION_LEVELS: tuple[str, ...] = ("none", "partial", "total")
OCC_NONE, OCC_PARTIAL, OCC_TOTAL = 0, 1, 2

NO_ACTION_LABEL = "no action"
CATCH_ALL_LABEL = "other"


def bitmask_from_names(names: Iterable[str]) -> int:
    mask = 0
    for name in names:
        try:
            mask |= 1 << ATOMIC_ACTIONS.index(name)
        except ValueError:
            raise InputError(f"unknown atomic action {name!r}") from None
    return mask


def bitmask_to_label(mask: int) -> str:
    if mask == 0:
        return NO_ACTION_LABEL
    names = [a for i, a in enumerate(ATOMIC_ACTIONS) if mask >> i & 1]
    return " + ".join(names)


@dataclass(frozen=True)
class ActionDictionary:
    """Frequency-ranked composite actions plus one catch-all token.

    ``entries`` holds the bitmasks of the explicit (non-catch-all)
    entries in descending corpus-frequency order; their token ids are
    their positions. The catch-all always takes the last id, so the
    total token count is ``len(entries) + 1``.
    """

    entries: tuple[int, ...]
    coverage: float

    def __post_init__(self):
        if len(set(self.entries)) != len(self.entries):
            raise ValidationError("duplicate composite actions in dictionary")
        if not self.entries:
            raise ValidationError("dictionary needs at least one explicit entry")
        for m in self.entries:
            if not 0 <= m < 256:
                raise ValidationError(f"bitmask {m} out of range")
        if not 0.0 < self.coverage <= 1.0:
            raise ValidationError(f"coverage {self.coverage} outside (0, 1]")
        object.__setattr__(self, "_ids", {m: i for i, m in enumerate(self.entries)})

    @property
    def n_actions(self) -> int:
        return len(self.entries) + 1

    @property
    def catch_all_id(self) -> int:
        return len(self.entries)

    def encode(self, mask: int) -> int:
        """Total map: unknown composites go to the catch-all id."""
        return self._ids.get(mask, self.catch_all_id)

    def encode_array(self, masks: np.ndarray) -> np.ndarray:
        flat = np.fromiter((self.encode(int(m)) for m in masks.reshape(-1)),
                           dtype=np.int64, count=masks.size)
        return flat.reshape(masks.shape)

    def decode(self, token: int) -> int | None:
        """Bitmask for explicit entries, ``None`` for the catch-all."""
        if not 0 <= token < self.n_actions:
            raise RangeError(f"token {token} out of range for {self.n_actions} actions")
        if token == self.catch_all_id:
            return None
        return self.entries[token]

    def label(self, token: int) -> str:
        mask = self.decode(token)
        return CATCH_ALL_LABEL if mask is None else bitmask_to_label(mask)


def build_dictionary(annotations: Iterable[int], coverage: float) -> ActionDictionary:
    """Smallest frequency-ranked prefix of composites reaching ``coverage``.

    Frequencies are per frame-person occurrence. Ties break by ascending
    bitmask so the result is deterministic. A catch-all entry is always
    appended (it maps nothing when coverage is 1.0).
    """
    if not 0.0 < coverage <= 1.0:
        raise RangeError(f"coverage must be in (0, 1], got {coverage}")
    counts = Counter(int(m) for m in annotations)
    total = sum(counts.values())
    if total == 0:
        raise InputError("empty annotation stream")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    entries = []
    cum = 0
    for mask, cnt in ranked:
        entries.append(mask)
        cum += cnt
        if cum >= coverage * total - 1e-9:
            break
    return ActionDictionary(entries=tuple(entries), coverage=coverage)


@dataclass
class Interaction:
    """One sample: synchronized token rows split into observed and target."""

    persons: int
    t_obs: int
    horizon: int
    tokens: np.ndarray
    sample_id: str = ""

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.persons < 2:
            raise ValidationError(f"sample {self.sample_id!r}: needs >= 2 persons")
        if self.t_obs < 1 or self.horizon < 1:
            raise ValidationError(f"sample {self.sample_id!r}: non-positive lengths")
        if self.tokens.shape != (self.persons, self.t_obs + self.horizon):
            raise ValidationError(
                f"sample {self.sample_id!r}: token matrix {self.tokens.shape} != "
                f"({self.persons}, {self.t_obs + self.horizon})")
        if (self.tokens < 0).any():
            raise ValidationError(f"sample {self.sample_id!r}: negative token")

    @property
    def observed(self) -> np.ndarray:
        return self.tokens[:, :self.t_obs]

    @property
    def target(self) -> np.ndarray:
        return self.tokens[:, self.t_obs:]

    def validate_tokens(self, n_actions: int) -> None:
        if (self.tokens >= n_actions).any():
            bad = int(self.tokens.max())
            raise ValidationError(
                f"sample {self.sample_id!r}: token {bad} out of range for "
                f"{n_actions} actions")


@dataclass
class GroupStream:
    """Frame-aligned annotation stream for one interacting group."""

    group_id: str
    person_ids: tuple[str, ...]
    actions: np.ndarray  # (frames, persons) composite bitmasks
    occlusion: np.ndarray  # (frames, persons) occlusion level codes

    n_frames: int = field(init=False)

    def __post_init__(self):
        self.n_frames = self.actions.shape[0]


def read_annotations(path: str | Path) -> list[GroupStream]:
    """Parse the raw annotation file into per-group streams.

    Persons are ordered by id; every frame of a group must list exactly
    the same persons. Frames are sorted by frame number.
    """
    path = Path(path)
    per_group: dict[str, dict[int, dict]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                group = str(rec["group"])
                frame = int(rec["frame"])
                persons = rec["persons"]
                parsed = {}
                for p in persons:
                    bits = p["actions"]
                    if len(bits) != len(ATOMIC_ACTIONS) or any(b not in (0, 1) for b in bits):
                        raise ValueError("actions must be 8 binary flags")
                    occ = OCCLUSION_LEVELS.index(p["occlusion"])
                    mask = sum(b << i for i, b in enumerate(bits))
                    parsed[str(p["id"])] = (mask, occ)
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            frames = per_group.setdefault(group, {})
            if frame in frames:
                raise ParseError(f"{path}:{lineno}: duplicate frame {frame} in group {group!r}")
            frames[frame] = parsed

    streams = []
    for group in sorted(per_group):
        frames = per_group[group]
        order = sorted(frames)
        person_ids = tuple(sorted(frames[order[0]]))
        actions = np.zeros((len(order), len(person_ids)), dtype=np.int64)
        occlusion = np.zeros((len(order), len(person_ids)), dtype=np.int64)
        for fi, fnum in enumerate(order):
            rec = frames[fnum]
            if tuple(sorted(rec)) != person_ids:
                raise InputError(
                    f"group {group!r}: frame {fnum} lists persons {sorted(rec)} "
                    f"but group started with {list(person_ids)}")
            for pi, pid in enumerate(person_ids):
                actions[fi, pi], occlusion[fi, pi] = rec[pid]
        streams.append(GroupStream(group, person_ids, actions, occlusion))
    return streams


def segment_annotations(groups: Sequence[GroupStream], dictionary: ActionDictionary,
                        fps: float, seg_seconds: float, horizon: int,
                        occlusion_max: float) -> list[Interaction]:
    """Cut group streams into non-overlapping (observed, target) samples.

    Consecutive samples share no frames: sample k covers frames
    ``[k*(t_obs+horizon), (k+1)*(t_obs+horizon))`` of its group. Samples
    whose fraction of totally occluded person-frames exceeds
    ``occlusion_max`` are dropped. Occluded frames keep their annotated
    action bits.
    """
    if fps <= 0:
        raise InputError(f"fps must be positive, got {fps}")
    t_obs_f = fps * seg_seconds
    if abs(t_obs_f - round(t_obs_f)) > 1e-9 or round(t_obs_f) < 1:
        raise InputError(f"fps*seg_seconds must be a positive integer, got {t_obs_f}")
    t_obs = int(round(t_obs_f))
    if horizon < 1 or horizon != int(horizon):
        raise InputError(f"horizon must be a positive integer, got {horizon}")

    samples = []
    window = t_obs + horizon
    for g in groups:
        n_persons = len(g.person_ids)
        for k in range(g.n_frames // window):
            lo = k * window
            sl = slice(lo, lo + window)
            occ_frac = float((g.occlusion[sl] == OCC_TOTAL).mean())
            if occ_frac > occlusion_max:
                continue
            tokens = dictionary.encode_array(g.actions[sl]).T
            samples.append(Interaction(persons=n_persons, t_obs=t_obs, horizon=horizon,
                                       tokens=tokens, sample_id=f"{g.group_id}:{lo}"))
    return samples


# ---------------------------------------------------------------------------
# dataset files


def write_dataset(path: str | Path, samples: Iterable[Interaction]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in samples:
            rec = {"id": s.sample_id, "t_obs": s.t_obs, "horizon": s.horizon,
                   "actions": s.tokens.tolist()}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_dataset(path: str | Path, n_actions: int | None = None) -> list[Interaction]:
    path = Path(path)
    samples = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                actions = np.asarray(rec["actions"], dtype=np.int64)
                sample = Interaction(persons=actions.shape[0] if actions.ndim == 2 else 0,
                                     t_obs=int(rec["t_obs"]), horizon=int(rec["horizon"]),
                                     tokens=actions, sample_id=str(rec["id"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            if n_actions is not None:
                sample.validate_tokens(n_actions)
            samples.append(sample)
    return samples


def save_dictionary(path: str | Path, dictionary: ActionDictionary) -> None:
    entries = [[i for i in range(len(ATOMIC_ACTIONS)) if mask >> i & 1]
               for mask in dictionary.entries]
    Path(path).write_text(
        json.dumps({"entries": entries, "coverage": dictionary.coverage}) + "\n",
        encoding="utf-8")


def load_dictionary(path: str | Path) -> ActionDictionary:
    path = Path(path)
    try:
        rec = json.loads(path.read_text(encoding="utf-8"))
        masks = tuple(sum(1 << int(i) for i in idxs) for idxs in rec["entries"])
        coverage = float(rec["coverage"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return ActionDictionary(entries=masks, coverage=coverage)
