"""Flat ``key = value`` configuration with a typed key registry.

Unknown keys are rejected. Command-line ``--set key=value`` pairs
override file values; the env var ``SIG_SEED`` is the fallback for all
``*.seed`` keys. Every command logs its fully resolved configuration.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .discriminator import DISC_KINDS, DiscriminatorConfig
from .errors import ConfigError
from .generator import GeneratorConfig
from .metrics import InceptionTrainConfig
from .synthdata import SynthConfig
from .training import TrainConfig


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int_list(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(int(part) for part in raw.split(","))


def _parse_choice(options: tuple[str, ...]) -> Callable[[str], str]:
    def parse(raw: str) -> str:
        value = raw.strip()
        if value not in options:
            raise ValueError(f"must be one of {options}, got {raw!r}")
        return value
    return parse


@dataclass(frozen=True)
class Key:
    default: object
    parse: Callable[[str], object]


def _seed_default() -> int:
    raw = os.environ.get("SIG_SEED")
    return int(raw) if raw else 0


def registry() -> dict[str, Key]:
    seed = _seed_default()
    return {
        # preprocessing
        "data.fps": Key(20.0, float),
        "data.seg_seconds": Key(3.0, float),
        "data.horizon": Key(40, int),
        "data.occlusion_max": Key(0.1, float),
        "data.coverage": Key(0.9, float),
        # synthetic data
        "synth.actions": Key(14, int),
        "synth.persons": Key(3, int),
        "synth.samples": Key(600, int),
        "synth.t_obs": Key(60, int),
        "synth.horizon": Key(40, int),
        "synth.coupling": Key(0.15, float),
        "synth.dwell": Key(0.9, float),
        "synth.seed": Key(seed, int),
        # generator
        "gen.d_h": Key(64, int),
        "gen.d_embed": Key(64, int),
        "gen.noise_dim": Key(64, int),
        "gen.d_deep": Key(128, int),
        "gen.temperature": Key(0.1, float),
        "gen.spectral_out": Key(True, _parse_bool),
        # discriminator
        "disc.kind": Key("local", _parse_choice(DISC_KINDS)),
        "disc.d_h": Key(64, int),
        "disc.d_phi": Key(128, int),
        "disc.d_psi": Key(128, int),
        "disc.lambda_inter": Key(1.0, float),
        "disc.chunks": Key((), _parse_int_list),
        "disc.spectral": Key(True, _parse_bool),
        # training
        "train.epochs": Key(100, int),
        "train.batch_size": Key(32, int),
        "train.d_steps_per_g": Key(1, int),
        "train.lambda_sup": Key(1e-3, float),
        "train.lr_g": Key(1e-4, float),
        "train.lr_d": Key(4e-4, float),
        "train.beta1": Key(0.5, float),
        "train.beta2": Key(0.999, float),
        "train.adam_eps": Key(1e-8, float),
        "train.seed": Key(seed, int),
        "train.eval_interval": Key(10, int),
        "train.save_interval": Key(100, int),
        "train.adversarial": Key(True, _parse_bool),
        "train.indiv_stream": Key(True, _parse_bool),
        "train.inter_stream": Key(True, _parse_bool),
        # inception / metrics
        "metrics.lr": Key(1e-3, float),
        "metrics.batch_size": Key(64, int),
        "metrics.patience": Key(50, int),
        "metrics.min_delta": Key(1e-4, float),
        "metrics.max_epochs": Key(2000, int),
        "metrics.val_fraction": Key(0.1, float),
        "metrics.seed": Key(seed, int),
    }


def _set_value(cfg: dict, reg: dict[str, Key], key: str, raw: str, where: str) -> None:
    key = key.strip()
    if key not in reg:
        raise ConfigError(f"{where}: unknown configuration key {key!r}")
    try:
        cfg[key] = reg[key].parse(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from exc


def load_config(path: str | Path | None = None,
                overrides: list[str] | None = None) -> dict[str, object]:
    """Resolve defaults <- file <- overrides into a full key/value map."""
    reg = registry()
    cfg = {k: v.default for k, v in reg.items()}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = stripped.split("=", 1)
            _set_value(cfg, reg, key, raw, f"{path}:{lineno}")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set_value(cfg, reg, key, raw, "--set")
    return cfg


def format_config(cfg: dict[str, object]) -> str:
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# -- dataclass builders ------------------------------------------------------


def generator_config(cfg: dict) -> GeneratorConfig:
    return GeneratorConfig(d_h=cfg["gen.d_h"], d_embed=cfg["gen.d_embed"],
                           noise_dim=cfg["gen.noise_dim"], d_deep=cfg["gen.d_deep"],
                           temperature=cfg["gen.temperature"],
                           spectral_out=cfg["gen.spectral_out"])


def discriminator_config(cfg: dict, horizon: int) -> DiscriminatorConfig:
    chunks = cfg["disc.chunks"] or None
    lambda_inter = cfg["disc.lambda_inter"]
    if not cfg["train.inter_stream"]:
        lambda_inter = 0.0
    return DiscriminatorConfig(kind=cfg["disc.kind"], d_h=cfg["disc.d_h"],
                               d_phi=cfg["disc.d_phi"], d_psi=cfg["disc.d_psi"],
                               lambda_inter=lambda_inter, horizon=horizon,
                               chunks=chunks, indiv_on=cfg["train.indiv_stream"],
                               inter_on=cfg["train.inter_stream"],
                               spectral=cfg["disc.spectral"])


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(epochs=cfg["train.epochs"], batch_size=cfg["train.batch_size"],
                       d_steps_per_g=cfg["train.d_steps_per_g"],
                       lambda_sup=cfg["train.lambda_sup"], lr_g=cfg["train.lr_g"],
                       lr_d=cfg["train.lr_d"], beta1=cfg["train.beta1"],
                       beta2=cfg["train.beta2"], adam_eps=cfg["train.adam_eps"],
                       seed=cfg["train.seed"], eval_interval=cfg["train.eval_interval"],
                       save_interval=cfg["train.save_interval"],
                       adversarial_on=cfg["train.adversarial"])


def synth_config(cfg: dict) -> SynthConfig:
    return SynthConfig(n_actions=cfg["synth.actions"], n_persons=cfg["synth.persons"],
                       coupling=cfg["synth.coupling"], dwell=cfg["synth.dwell"],
                       seed=cfg["synth.seed"])


def inception_config(cfg: dict) -> InceptionTrainConfig:
    return InceptionTrainConfig(lr=cfg["metrics.lr"], batch_size=cfg["metrics.batch_size"],
                                patience=cfg["metrics.patience"],
                                min_delta=cfg["metrics.min_delta"],
                                max_epochs=cfg["metrics.max_epochs"],
                                val_fraction=cfg["metrics.val_fraction"],
                                seed=cfg["metrics.seed"])
