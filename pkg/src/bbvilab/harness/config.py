"""Strict flat ``key = value`` experiment configuration.

One setting per line, ``#`` starts a comment, lists are comma separated.
Unknown or repeated keys are errors.  :func:`serialize` writes the
canonical form: every key, in schema order, with shortest round-trip floats.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

EXPERIMENTS = ("variance-sweep", "converge", "bounds-check", "worst-case", "divergence-table")
TARGET_KINDS = ("spectrum", "equicorrelated")
FAMILIES = ("full-rank", "mean-field")
ESTIMATORS = ("cfe", "stl")
SCHEDULES = ("fixed", "decreasing")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = dataclasses.field(default="variance-sweep", metadata=dict(key="experiment", kind="str"))
    seed: int = dataclasses.field(default=0, metadata=dict(key="seed", kind="int"))
    target_kind: str = dataclasses.field(default="spectrum", metadata=dict(key="target.kind", kind="str"))
    d: int = dataclasses.field(default=30, metadata=dict(key="target.d", kind="int"))
    kappa: float = dataclasses.field(default=1.0, metadata=dict(key="target.kappa", kind="float"))
    rho: float = dataclasses.field(default=0.5, metadata=dict(key="target.rho", kind="float"))
    rotation_seed: int = dataclasses.field(default=0, metadata=dict(key="target.rotation_seed", kind="int"))
    families: tuple = dataclasses.field(default=("full-rank",), metadata=dict(key="families", kind="str*"))
    estimators: tuple = dataclasses.field(default=("cfe", "stl"), metadata=dict(key="estimators", kind="str*"))
    epsilons: tuple = dataclasses.field(default=(1e-2, 1e-4), metadata=dict(key="epsilons", kind="float*"))
    k_phi: float = dataclasses.field(default=3.0, metadata=dict(key="base.kurtosis", kind="float"))
    S: Optional[float] = dataclasses.field(default=None, metadata=dict(key="domain.S", kind="float?"))
    n_samples: int = dataclasses.field(default=1024, metadata=dict(key="mc.samples", kind="int"))
    sweep_points: int = dataclasses.field(default=20, metadata=dict(key="sweep.points", kind="int"))
    sweep_radius: float = dataclasses.field(default=2.0, metadata=dict(key="sweep.radius", kind="float"))
    sweep_scale_factor: float = dataclasses.field(default=2.0, metadata=dict(key="sweep.scale_factor", kind="float"))
    schedules: tuple = dataclasses.field(default=("fixed",), metadata=dict(key="sgd.schedules", kind="str*"))
    n_seeds: int = dataclasses.field(default=20, metadata=dict(key="sgd.seeds", kind="int"))
    batch: int = dataclasses.field(default=1, metadata=dict(key="sgd.batch", kind="int"))
    T: Optional[int] = dataclasses.field(default=None, metadata=dict(key="sgd.T", kind="int?"))
    gamma: Optional[float] = dataclasses.field(default=None, metadata=dict(key="sgd.gamma", kind="float?"))
    max_T: int = dataclasses.field(default=1_000_000, metadata=dict(key="sgd.max_T", kind="int"))
    record_every: int = dataclasses.field(default=1, metadata=dict(key="sgd.record_every", kind="int"))
    worst_dims: tuple = dataclasses.field(default=(2, 10), metadata=dict(key="worst.dims", kind="int*"))
    worst_L: tuple = dataclasses.field(default=(2.0, 10.0), metadata=dict(key="worst.L", kind="float*"))
    worst_samples: int = dataclasses.field(default=100_000, metadata=dict(key="worst.samples", kind="int"))
    rhos: tuple = dataclasses.field(default=(0.0, 0.1, 0.3, 0.5, 0.7, 0.9), metadata=dict(key="divergence.rhos", kind="float*"))

    def __post_init__(self):
        validate(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.metadata["key"]: f for f in dataclasses.fields(ExperimentConfig)}


def _finite(x: float, key: str) -> float:
    if not math.isfinite(x):
        raise ConfigError(f"{key}: value must be finite, got {x}")
    return x


def _convert(raw: str, kind: str, key: str):
    raw = raw.strip()
    if kind.endswith("?"):
        if raw.lower() in ("", "none"):
            return None
        kind = kind[:-1]
    if kind.endswith("*"):
        items = [x.strip() for x in raw.split(",")]
        if raw == "" or any(x == "" for x in items):
            raise ConfigError(f"{key}: empty list entry in {raw!r}")
        return tuple(_convert(x, kind[:-1], key) for x in items)
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return _finite(float(raw), key)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def _format(value, kind: str) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(_format(v, kind.rstrip("*?")) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def validate(cfg: ExperimentConfig) -> None:
    """Reject any value that would fail later; called on construction."""
    _require(cfg.experiment in EXPERIMENTS, f"experiment must be one of {EXPERIMENTS}, got {cfg.experiment!r}")
    _require(cfg.target_kind in TARGET_KINDS, f"target.kind must be one of {TARGET_KINDS}")
    _require(cfg.seed >= 0, "seed must be >= 0")
    _require(cfg.d >= 1, "target.d must be >= 1")
    _require(cfg.kappa >= 1, "target.kappa must be >= 1")
    _require(not (cfg.d == 1 and cfg.kappa != 1), "a one-dimensional target needs target.kappa = 1")
    _require(-1.0 / max(cfg.d - 1, 1) < cfg.rho < 1.0, f"target.rho={cfg.rho} is not positive definite for d={cfg.d}")
    _require(cfg.rotation_seed >= 0, "target.rotation_seed must be >= 0")
    _require(len(cfg.families) > 0 and all(f in FAMILIES for f in cfg.families), f"families must be drawn from {FAMILIES}")
    _require(len(cfg.estimators) > 0 and all(e in ESTIMATORS for e in cfg.estimators), f"estimators must be drawn from {ESTIMATORS}")
    _require(len(cfg.schedules) > 0 and all(s in SCHEDULES for s in cfg.schedules), f"sgd.schedules must be drawn from {SCHEDULES}")
    _require(all(e > 0 for e in cfg.epsilons), "epsilons must be positive")
    _require(cfg.k_phi >= 1, "base.kurtosis must be >= 1")
    _require(cfg.S is None or cfg.S > 0, "domain.S must be positive")
    _require(cfg.n_samples >= 2, "mc.samples must be >= 2")
    _require(cfg.sweep_points >= 2, "sweep.points must be >= 2")
    _require(cfg.sweep_radius >= 0, "sweep.radius must be >= 0")
    _require(cfg.sweep_scale_factor > 0, "sweep.scale_factor must be positive")
    _require(cfg.n_seeds >= 1, "sgd.seeds must be >= 1")
    _require(cfg.batch >= 1, "sgd.batch must be >= 1")
    _require(cfg.T is None or cfg.T >= 0, "sgd.T must be >= 0")
    _require(cfg.gamma is None or cfg.gamma >= 0, "sgd.gamma must be >= 0")
    _require(cfg.max_T >= 1, "sgd.max_T must be >= 1")
    _require(cfg.record_every >= 1, "sgd.record_every must be >= 1")
    _require(all(d >= 2 for d in cfg.worst_dims), "worst.dims entries must be >= 2")
    _require(all(L >= 1 for L in cfg.worst_L), "worst.L entries must be >= 1")
    _require(cfg.worst_samples >= 2, "worst.samples must be >= 2")
    _require(all(-1.0 / max(cfg.d - 1, 1) < r < 1.0 for r in cfg.rhos), "divergence.rhos entries must give positive definite matrices")


def parse(text: str, **defaults) -> ExperimentConfig:
    """Parse config text; ``defaults`` (field names) fill keys the text omits."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        f = _FIELDS[key]
        if f.name in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[f.name] = _convert(raw, f.metadata["kind"], key)
    return ExperimentConfig(**{**defaults, **values})


def load(path, **defaults) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse(fh.read(), **defaults)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def serialize(cfg: ExperimentConfig) -> str:
    lines = []
    for key, f in _FIELDS.items():
        lines.append(f"{key} = {_format(getattr(cfg, f.name), f.metadata['kind'])}")
    return "\n".join(lines) + "\n"


def as_dict(cfg: ExperimentConfig) -> dict:
    return {key: (list(v) if isinstance(v := getattr(cfg, f.name), tuple) else v) for key, f in _FIELDS.items()}
