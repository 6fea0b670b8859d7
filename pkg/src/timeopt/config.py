"""Experiment configuration: strict TOML with problem/numerics/search/output
blocks plus optional gamma/hjb extras. Unknown keys are rejected so configs
cannot drift silently.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dynamics import ControlGrid, VectorField
from .measures import EmpiricalMeasure, uniform_cloud
from .mean_drift import CONTROL_HI, CONTROL_LO, MeanDriftProblem
from .target import MomentHyperplane, TargetSet, WassersteinBall
from .value import SearchConfig


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ProblemBlock:
    dynamics: str = "mean_drift"
    dimension: int = 1
    rate: float = 2.0                       # exponential dynamics only
    target: str = "zero_mean"
    target_direction: tuple[float, ...] = (1.0,)
    target_level: float = 0.0
    target_center: Optional[str] = None     # csv path, wasserstein_ball only
    target_radius: float = 0.0
    initial: str = "cloud"
    initial_mean: tuple[float, ...] = (1.0,)
    initial_spread: float = 0.5
    initial_csv: Optional[str] = None
    simulate_control: Optional[float] = None


@dataclass(frozen=True)
class NumericsBlock:
    particles: int = 100
    dt: float = 1e-3
    horizon: float = 3.0
    control_points: int = 11
    control_lo: float = CONTROL_LO
    control_hi: float = CONTROL_HI
    membership_tol: float = 1e-6


@dataclass(frozen=True)
class SearchBlock:
    strategy: str = "constant"
    samples: int = 0
    segments: int = 1
    seed: int = 0
    workers: int = 1


@dataclass(frozen=True)
class OutputBlock:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "png")


@dataclass(frozen=True)
class GammaBlock:
    n_list: tuple[int, ...] = (5, 10, 20, 40, 80)
    slack: float = 2e-2


@dataclass(frozen=True)
class HjbBlock:
    num_measures: int = 50
    mean_lo: float = 0.0
    mean_hi: float = 3.0
    control_points: int = 101
    seed: int = 7
    analytic_tol: float = 1e-8
    numeric_tol: float = 1e-3


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemBlock
    numerics: NumericsBlock
    search: SearchBlock
    output: OutputBlock
    gamma: GammaBlock
    hjb: HjbBlock
    sha256: str
    path: str


_BLOCKS = {
    "problem": ProblemBlock,
    "numerics": NumericsBlock,
    "search": SearchBlock,
    "output": OutputBlock,
    "gamma": GammaBlock,
    "hjb": HjbBlock,
}

_DYNAMICS = ("mean_drift", "exponential")
_TARGETS = ("zero_mean", "moment_hyperplane", "wasserstein_ball")
_INITIALS = ("cloud", "csv")


def _coerce(name: str, raw, proto):
    if isinstance(proto, bool):
        if not isinstance(raw, bool):
            raise ConfigError(f"{name}: expected a boolean")
        return raw
    if isinstance(proto, float):
        if not isinstance(raw, (int, float)) or isinstance(raw, bool):
            raise ConfigError(f"{name}: expected a number")
        return float(raw)
    if isinstance(proto, int):
        if not isinstance(raw, int) or isinstance(raw, bool):
            raise ConfigError(f"{name}: expected an integer")
        return int(raw)
    if isinstance(proto, str) or proto is None:
        if proto is None and isinstance(raw, (int, float)) and not isinstance(raw, bool):
            return float(raw)
        if not isinstance(raw, str):
            raise ConfigError(f"{name}: expected a string")
        return raw
    if isinstance(proto, tuple):
        if not isinstance(raw, (list, tuple)):
            raise ConfigError(f"{name}: expected a list")
        kind = type(proto[0]) if proto else float
        return tuple(_coerce(f"{name}[]", v, kind()) for v in raw)
    raise ConfigError(f"{name}: unsupported value")  # pragma: no cover


def _parse_block(section: str, data: dict, cls):
    proto = cls()
    known = {f: getattr(proto, f) for f in cls.__dataclass_fields__}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"[{section}] has unknown keys: {sorted(unknown)}")
    values = {}
    for key, raw in data.items():
        values[key] = _coerce(f"[{section}] {key}", raw, known[key])
    return cls(**values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as err:
        raise ConfigError(f"config parse error: {err}") from err
    unknown = set(data) - set(_BLOCKS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    blocks = {}
    for section, cls in _BLOCKS.items():
        sub = data.get(section, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"[{section}] must be a table")
        blocks[section] = _parse_block(section, sub, cls)
    cfg = ExperimentConfig(sha256=hashlib.sha256(raw).hexdigest(), path=str(path), **blocks)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    p, n, s = cfg.problem, cfg.numerics, cfg.search
    if p.dynamics not in _DYNAMICS:
        raise ConfigError(f"unknown dynamics {p.dynamics!r}")
    if p.target not in _TARGETS:
        raise ConfigError(f"unknown target {p.target!r}")
    if p.initial not in _INITIALS:
        raise ConfigError(f"unknown initial kind {p.initial!r}")
    if p.dynamics == "mean_drift" and p.dimension != 1:
        raise ConfigError("mean_drift dynamics are one-dimensional")
    if p.target == "zero_mean" and p.dimension != 1:
        raise ConfigError("zero_mean target needs dimension 1")
    if p.target == "wasserstein_ball" and p.target_center is None:
        raise ConfigError("wasserstein_ball target needs target_center")
    if p.initial == "csv" and p.initial_csv is None:
        raise ConfigError("initial 'csv' needs initial_csv")
    if p.initial == "cloud" and len(p.initial_mean) != p.dimension:
        raise ConfigError("initial_mean length must match dimension")
    if n.particles < 1 or n.dt <= 0 or n.horizon <= 0 or n.control_points < 1:
        raise ConfigError("numerics block values must be positive")
    if n.membership_tol <= 0:
        raise ConfigError("membership_tol must be positive")
    if n.control_hi <= n.control_lo and n.control_points > 1:
        raise ConfigError("control interval is empty")
    if s.strategy not in ("constant", "shooting", "refine"):
        raise ConfigError(f"unknown search strategy {s.strategy!r}")
    if s.strategy == "shooting" and s.samples < 1:
        raise ConfigError("shooting needs samples >= 1")
    if cfg.hjb.mean_lo >= cfg.hjb.mean_hi:
        raise ConfigError("[hjb] needs mean_lo < mean_hi")
    if not cfg.gamma.n_list or any(m < 2 for m in cfg.gamma.n_list):
        raise ConfigError("[gamma] n_list entries must be >= 2")


@dataclass
class Setup:
    """Concrete objects built from a config (plus an optional seed override)."""

    mu: EmpiricalMeasure
    field: VectorField
    target: TargetSet
    grid: ControlGrid
    search: SearchConfig
    seed: int
    benchmark: Optional[MeanDriftProblem]


def _build_field(p: ProblemBlock, tol: float):
    if p.dynamics == "mean_drift":
        bench = MeanDriftProblem(tol)
        return bench.field(), bench
    rate = float(p.rate)

    def fn(points, m, u):
        return rate * points

    return VectorField(fn, lipschitz_L=max(rate, 1e-9), sublinear_C=max(rate, 1e-9),
                       name="exponential"), None


def build_setup(cfg: ExperimentConfig, seed_override: Optional[int] = None) -> Setup:
    p, n, s = cfg.problem, cfg.numerics, cfg.search
    seed = int(seed_override) if seed_override is not None else int(s.seed)
    rng = np.random.default_rng(seed)

    fieldv, bench = _build_field(p, n.membership_tol)

    if p.target == "zero_mean":
        target: TargetSet = MomentHyperplane([1.0], 0.0, n.membership_tol)
    elif p.target == "moment_hyperplane":
        target = MomentHyperplane(list(p.target_direction), p.target_level, n.membership_tol)
    else:
        base = Path(cfg.path).parent
        center = EmpiricalMeasure.from_csv(base / p.target_center)
        target = WassersteinBall(center, p.target_radius, n.membership_tol)

    if p.initial == "cloud":
        mu = uniform_cloud(np.asarray(p.initial_mean), p.initial_spread, n.particles, rng)
    else:
        mu = EmpiricalMeasure.from_csv(Path(cfg.path).parent / p.initial_csv)
    if mu.dim != p.dimension:
        raise ConfigError(f"initial measure has d={mu.dim}, config says {p.dimension}")

    if n.control_points == 1:
        grid = ControlGrid([[n.control_lo]])
    else:
        grid = ControlGrid.interval(n.control_lo, n.control_hi, n.control_points)

    search = SearchConfig(grid=grid, horizon=n.horizon, dt=n.dt, strategy=s.strategy,
                          samples=s.samples, segments=max(1, s.segments), seed=seed,
                          workers=max(1, s.workers))
    return Setup(mu, fieldv, target, grid, search, seed, bench)
