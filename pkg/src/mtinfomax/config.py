"""Run configuration: a flat ``key = value`` text file.

Blank lines and ``#`` comments are ignored. Every key is optional; unknown
keys, duplicates, unparsable values and out-of-range values are rejected
with the offending line number. List values are comma-separated.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .analysis import ClassifierThresholds
from .infotheory import FISHER_SPACES, InfoConfig
from .model import MotionModel
from .mt import init_mt_params
from .optimizer import TrainConfig
from .stimulus import TRAINING_SEPARATIONS_DEG, DirectionGrid, sample_training_set
from .v1 import V1Params


class ConfigError(ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


@dataclass(frozen=True)
class RunConfig:
    # stimulus grid and training set
    n_dirs: int = 24
    intensity: float = 1.0
    n_single: int = 180_000
    n_bidir: int = 36_000
    separations_deg: tuple = TRAINING_SEPARATIONS_DEG
    seed: int = 0
    # network
    m_cells: int = 24
    sigma: float = math.pi / 2
    k_cells: int = 12
    gain_A: float = 1.0
    norm_eps: float = 0.1
    # information
    n_population: float = 1000.0
    gamma_reg: float = 1e-3
    rate_floor: float = 1e-9
    fisher_space: str = "stimulus"
    # training
    lambda_energy: float = 10.0
    minibatch_size: int = 64
    max_iters: int = 20_000
    step_size: float = 0.01
    step_decay_iters: float = 5_000.0
    density_update_period: int = 200
    convergence_tol: float = 0.0
    checkpoint_every: int = 0
    # tuning-curve classification
    prominence_frac: float = 0.2
    bias_tol_deg: float = 7.5
    activity_floor_frac: float = 0.01
    reference_separation: float = 60.0
    classify_separations: tuple = (30.0, 60.0, 90.0)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def canonical_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]

    # builders -----------------------------------------------------------
    def grid(self) -> DirectionGrid:
        return DirectionGrid(self.n_dirs)

    def v1(self) -> V1Params:
        return V1Params(self.m_cells, self.sigma)

    def info(self) -> InfoConfig:
        return InfoConfig(self.n_population, self.gamma_reg, self.rate_floor, self.fisher_space)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lambda_energy=self.lambda_energy, minibatch_size=self.minibatch_size,
            max_iters=self.max_iters, step_size=self.step_size,
            step_decay_iters=self.step_decay_iters, seed=self.seed,
            density_update_period=self.density_update_period,
            convergence_tol=self.convergence_tol, checkpoint_every=self.checkpoint_every)

    def thresholds(self) -> ClassifierThresholds:
        return ClassifierThresholds(self.prominence_frac, self.bias_tol_deg,
                                    self.activity_floor_frac)

    def batch(self):
        return sample_training_set(self.grid(), self.n_single, self.n_bidir, self.seed,
                                   self.intensity, self.separations_deg)

    def initial_model(self) -> MotionModel:
        """Random initial network; uses a seed stream separate from minibatch sampling."""
        rng = np.random.default_rng(np.random.SeedSequence(self.seed).spawn(2)[1])
        mt = init_mt_params(self.k_cells, self.m_cells, rng, self.gain_A, self.norm_eps)
        return MotionModel(self.grid(), self.v1(), mt)


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


_CHECKS = {
    "n_dirs": (lambda v: v >= 2 and 360 % v == 0, "must be >= 2 and divide 360"),
    "intensity": (_positive, "must be > 0"),
    "n_single": (_nonneg, "must be >= 0"),
    "n_bidir": (_nonneg, "must be >= 0"),
    "separations_deg": (lambda v: len(v) > 0 and all(0 < s <= 180 for s in v),
                        "entries must lie in (0, 180]"),
    "m_cells": (_positive, "must be > 0"),
    "sigma": (_positive, "must be > 0"),
    "k_cells": (_positive, "must be > 0"),
    "gain_A": (_positive, "must be > 0"),
    "norm_eps": (_positive, "must be > 0"),
    "n_population": (lambda v: v >= 1, "must be >= 1"),
    "gamma_reg": (_nonneg, "must be >= 0"),
    "rate_floor": (_positive, "must be > 0"),
    "fisher_space": (lambda v: v in FISHER_SPACES, f"must be one of {', '.join(FISHER_SPACES)}"),
    "lambda_energy": (_nonneg, "must be >= 0"),
    "minibatch_size": (_positive, "must be > 0"),
    "max_iters": (_nonneg, "must be >= 0"),
    "step_size": (_positive, "must be > 0"),
    "step_decay_iters": (_positive, "must be > 0"),
    "density_update_period": (_positive, "must be > 0"),
    "convergence_tol": (_nonneg, "must be >= 0"),
    "checkpoint_every": (_nonneg, "must be >= 0"),
    "prominence_frac": (lambda v: 0 < v < 1, "must lie in (0, 1)"),
    "bias_tol_deg": (_nonneg, "must be >= 0"),
    "activity_floor_frac": (lambda v: 0 <= v < 1, "must lie in [0, 1)"),
    "reference_separation": (lambda v: 0 < v <= 180, "must lie in (0, 180]"),
    "classify_separations": (lambda v: len(v) > 0 and all(0 < s <= 180 for s in v),
                             "entries must lie in (0, 180]"),
}


def _parse_value(name, default, text):
    if isinstance(default, tuple):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(float(p) for p in parts)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        value = float(text)
        if not math.isfinite(value):
            raise ValueError("value must be finite")
        return value
    return text


def parse_config(text: str, path=None) -> RunConfig:
    defaults = {f.name: f.default for f in fields(RunConfig)}
    values, seen = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in defaults:
            raise ConfigError(f"unknown key {key!r}", lineno, path)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", lineno, path)
        try:
            parsed = _parse_value(key, defaults[key], value)
        except ValueError:
            raise ConfigError(f"cannot parse value {value!r} for {key}", lineno, path) from None
        check, why = _CHECKS.get(key, (lambda v: True, ""))
        if not check(parsed):
            raise ConfigError(f"{key} {why} (got {value})", lineno, path)
        values[key] = parsed
        seen[key] = lineno
    if "separations_deg" in values:
        values["separations_deg"] = tuple(int(s) if float(s).is_integer() else s
                                          for s in values["separations_deg"])
    cfg = RunConfig(**values)
    try:
        cfg.info()
        cfg.train_config()
        cfg.grid()
    except ValueError as exc:
        raise ConfigError(str(exc), None, path) from None
    if cfg.n_bidir and not cfg.grid().representable_separations(cfg.separations_deg):
        raise ConfigError(f"no training separation is representable on a {cfg.grid().spacing_deg} "
                          "deg grid", seen.get("separations_deg", seen.get("n_dirs")), path)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from None
    return parse_config(text, path)
