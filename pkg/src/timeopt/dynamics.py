"""Controlled nonlocal dynamics on particle clouds.

The state is a cloud of N particles advancing simultaneously under

    dx_i/dt = sum_u xi(u|t) * f(x_i, m(t), u),

where m(t) is the empirical measure of the cloud itself, so the particle
system is an exact (superposition) solution of the measure dynamics. Controls
are relaxed: piecewise-constant-in-time probability rows over a finite
control grid; one-hot rows recover ordinary controls.

Integration is classical fixed-step RK4 on the coupled system in R^{N*d},
with the measure argument rebuilt from the particle positions at every stage.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .measures import (
    EmpiricalMeasure,
    L2Field,
    second_moment,
    w2_distance,
)

BLOWUP_LIMIT = 1e12  # any coordinate beyond this aborts integration
ROW_SUM_ATOL = 1e-12


class IntegrationBlowUp(RuntimeError):
    """A particle coordinate left the finite range during integration."""

    def __init__(self, step: int, time: float):
        super().__init__(f"integration blew up at step {step} (t={time:.6g})")
        self.step = step
        self.time = time


@dataclass(frozen=True)
class VectorField:
    """Controlled velocity field f(x, m, u) with declared regularity constants.

    `fn` must accept a batch of points (N, d), the current measure, and one
    control point (as a 1-d array), and return an (N, d) velocity batch.
    `lipschitz_L` bounds ||f(x1,m1,u)-f(x2,m2,u)|| by L(||x1-x2|| + W2(m1,m2));
    `sublinear_C` bounds ||f(x,m,u)|| by C(1 + ||x|| + second_moment(m)).
    Both are declared, not inferred; `spot_check_*` below samples them.
    """

    fn: Callable[[np.ndarray, EmpiricalMeasure, np.ndarray], np.ndarray]
    lipschitz_L: float
    sublinear_C: float
    name: str = "field"

    def __post_init__(self):
        if self.lipschitz_L <= 0 or self.sublinear_C <= 0:
            raise ValueError("declared constants must be positive")

    def __call__(self, points: np.ndarray, m: EmpiricalMeasure, u: np.ndarray) -> np.ndarray:
        out = np.asarray(self.fn(points, m, u), dtype=float)
        if out.shape != points.shape:
            raise ValueError(f"field returned shape {out.shape}, expected {points.shape}")
        return out

    def at(self, x, m: EmpiricalMeasure, u) -> np.ndarray:
        """Evaluate at a single point, returning a (d,) vector."""
        pt = np.atleast_1d(np.asarray(x, dtype=float))[None, :]
        return self(pt, m, np.atleast_1d(np.asarray(u, dtype=float)))[0]


class ControlGrid:
    """Finite set of admissible control points (a discretized compact U)."""

    __slots__ = ("points",)

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("control grid needs at least one point")
        if len(np.unique(pts, axis=0)) != pts.shape[0]:
            raise ValueError("control grid points must be pairwise distinct")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __setattr__(self, name, value):  # pragma: no cover - guard only
        raise AttributeError("ControlGrid is immutable")

    @classmethod
    def interval(cls, lo: float, hi: float, m: int) -> "ControlGrid":
        return cls(np.linspace(lo, hi, m))

    def __len__(self) -> int:
        return self.points.shape[0]

    def __getitem__(self, j: int) -> np.ndarray:
        return self.points[j]


class RelaxedControl:
    """Time-gridded relaxed control: row k is a probability vector over the
    control grid, held constant on [k*dt, (k+1)*dt)."""

    __slots__ = ("dt", "rows", "grid")

    def __init__(self, grid: ControlGrid, rows, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        r = np.asarray(rows, dtype=float)
        if r.ndim != 2 or r.shape[1] != len(grid):
            raise ValueError(f"rows must be (K, {len(grid)}), got {r.shape}")
        if r.shape[0] > 0:
            if np.any(r < 0):
                raise ValueError("row weights must be nonnegative")
            if np.max(np.abs(r.sum(axis=1) - 1.0)) > ROW_SUM_ATOL:
                raise ValueError("each row must sum to 1")
        r = r.copy()
        r.setflags(write=False)
        object.__setattr__(self, "dt", float(dt))
        object.__setattr__(self, "rows", r)
        object.__setattr__(self, "grid", grid)

    def __setattr__(self, name, value):  # pragma: no cover - guard only
        raise AttributeError("RelaxedControl is immutable")

    @classmethod
    def constant(cls, grid: ControlGrid, index: int, steps: int, dt: float) -> "RelaxedControl":
        rows = np.zeros((steps, len(grid)))
        rows[:, index] = 1.0
        return cls(grid, rows, dt)

    @classmethod
    def from_step_indices(cls, grid: ControlGrid, indices: Sequence[int], dt: float) -> "RelaxedControl":
        idx = np.asarray(indices, dtype=int)
        rows = np.zeros((idx.shape[0], len(grid)))
        rows[np.arange(idx.shape[0]), idx] = 1.0
        return cls(grid, rows, dt)

    @classmethod
    def constant_mixture(cls, grid: ControlGrid, weights, steps: int, dt: float) -> "RelaxedControl":
        w = np.asarray(weights, dtype=float)
        return cls(grid, np.tile(w, (steps, 1)), dt)

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def duration(self) -> float:
        return self.n_rows * self.dt

    def covers(self, t: float) -> bool:
        return self.duration >= t - 1e-9 * max(1.0, abs(t))

    def row_index_at(self, t: float) -> int:
        j = int(np.floor(t / self.dt + 1e-9))
        return min(max(j, 0), self.n_rows - 1)

    def is_one_hot(self) -> bool:
        return bool(np.all(np.isin(self.rows, (0.0, 1.0))))

    # -- text serialization: header with dt and grid, then one row per line ----
    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("# relaxed-control\n")
        buf.write(f"dt={self.dt!r}\n")
        grid_txt = ";".join(",".join(repr(float(c)) for c in p) for p in self.grid.points)
        buf.write(f"grid={grid_txt}\n")
        for row in self.rows:
            buf.write(" ".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "RelaxedControl":
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        if len(lines) < 2 or not lines[0].startswith("dt=") or not lines[1].startswith("grid="):
            raise ValueError("malformed relaxed-control block")
        dt = float(lines[0][3:])
        pts = [[float(c) for c in p.split(",")] for p in lines[1][5:].split(";")]
        rows = [[float(v) for v in ln.split()] for ln in lines[2:]]
        return cls(ControlGrid(np.asarray(pts)), np.asarray(rows), dt)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RelaxedControl":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


class Trajectory:
    """Time grid, per-particle paths, and the measure curve they induce.

    `paths` has shape (N, K+1, d); `measures[k]` is the empirical measure of
    the particle positions at times[k] (same weights at every time).
    """

    __slots__ = ("times", "paths", "weights", "__dict__")

    def __init__(self, times, paths, weights):
        t = np.asarray(times, dtype=float)
        p = np.asarray(paths, dtype=float)
        w = np.asarray(weights, dtype=float)
        if p.ndim != 3 or p.shape[1] != t.shape[0] or p.shape[0] != w.shape[0]:
            raise ValueError("inconsistent trajectory arrays")
        if t.shape[0] > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        t.setflags(write=False)
        p.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "paths", p)
        object.__setattr__(self, "weights", w)

    @property
    def n_particles(self) -> int:
        return self.paths.shape[0]

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1

    def measure_at(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.paths[:, k, :], self.weights, _validate=False)

    @cached_property
    def measures(self) -> list[EmpiricalMeasure]:
        return [self.measure_at(k) for k in range(self.times.shape[0])]

    @property
    def final_measure(self) -> EmpiricalMeasure:
        return self.measure_at(self.times.shape[0] - 1)

    def means(self) -> np.ndarray:
        """Weighted particle mean at every grid time, shape (K+1, d)."""
        return np.einsum("n,nkd->kd", self.weights, self.paths)

    def to_csv(self, path) -> None:
        """Columns t, particle, x1..xd, one row per (time, particle)."""
        path = Path(path)
        d = self.dim
        with path.open("w", newline="", encoding="utf-8") as fh:
            fh.write("t,particle," + ",".join(f"x{i + 1}" for i in range(d)) + "\n")
            for k, t in enumerate(self.times):
                for i in range(self.n_particles):
                    coords = ",".join(repr(float(c)) for c in self.paths[i, k])
                    fh.write(f"{float(t)!r},{i},{coords}\n")


def _bare_measure(points: np.ndarray, weights: np.ndarray) -> EmpiricalMeasure:
    # stage measures are valid by construction; skip validation and copies
    m = object.__new__(EmpiricalMeasure)
    object.__setattr__(m, "points", points)
    object.__setattr__(m, "weights", weights)
    return m


def _active_entries(xi: RelaxedControl, steps: int, dt: float) -> list:
    """Per integration step: the control row's nonzero (weight, point) pairs."""
    entries = []
    for k in range(steps):
        row = xi.rows[xi.row_index_at(k * dt)]
        entries.append([(float(row[j]), xi.grid.points[j]) for j in np.flatnonzero(row)])
    return entries


def _drift(f: VectorField, points: np.ndarray, weights: np.ndarray, entries: list) -> np.ndarray:
    m = _bare_measure(points, weights)
    w0, u0 = entries[0]
    out = f(points, m, u0) if w0 == 1.0 else w0 * f(points, m, u0)
    for w, u in entries[1:]:
        out = out + w * f(points, m, u)
    return out


def _drift_pair(f: VectorField, points: np.ndarray, passenger: np.ndarray,
                weights: np.ndarray, entries: list):
    # passenger rides against the cloud's measure without contributing to it
    m = _bare_measure(points, weights)
    w0, u0 = entries[0]
    if w0 == 1.0:
        out, out_p = f(points, m, u0), f(passenger, m, u0)
    else:
        out, out_p = w0 * f(points, m, u0), w0 * f(passenger, m, u0)
    for w, u in entries[1:]:
        out = out + w * f(points, m, u)
        out_p = out_p + w * f(passenger, m, u)
    return out, out_p


def _resolve_steps(T: float, dt: float) -> int:
    if T < 0 or dt <= 0:
        raise ValueError("need T >= 0 and dt > 0")
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"dt={dt} does not divide T={T}")
    return steps


def integrate(mu: EmpiricalMeasure, xi: RelaxedControl, f: VectorField,
              T: float, dt: float) -> Trajectory:
    """Advance the whole cloud over [0, T] with fixed step dt (classical RK4).

    The control row is frozen over each step (looked up at the step's start),
    and the measure argument is rebuilt from the particle positions at every
    RK4 stage. Raises IntegrationBlowUp if any coordinate exceeds 1e12.
    """
    steps = _resolve_steps(T, dt)
    if steps > 0 and not xi.covers(T):
        raise ValueError(f"control covers [0,{xi.duration:.6g}] but T={T}")
    n, d = mu.points.shape
    paths = np.empty((n, steps + 1, d))
    y = mu.points.copy()
    paths[:, 0, :] = y
    w = mu.weights
    half = 0.5 * dt
    step_entries = _active_entries(xi, steps, dt)
    for k in range(steps):
        entries = step_entries[k]
        k1 = _drift(f, y, w, entries)
        k2 = _drift(f, y + half * k1, w, entries)
        k3 = _drift(f, y + half * k2, w, entries)
        k4 = _drift(f, y + dt * k3, w, entries)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.abs(y) < BLOWUP_LIMIT):
            raise IntegrationBlowUp(k + 1, (k + 1) * dt)
        paths[:, k + 1, :] = y
    times = np.arange(steps + 1) * dt
    return Trajectory(times, paths, w)


def flow_map(y, traj: Trajectory, xi: RelaxedControl, f: VectorField) -> np.ndarray:
    """Path of one extra particle carried by the measure curve of `traj`.

    The cloud's stage measures are reconstructed by re-running the same RK4
    recursion from traj's initial positions, so a support point of the initial
    measure reproduces its stored path. Returns a (K+1, d) array.
    """
    steps = traj.n_steps
    if steps == 0:
        return np.atleast_1d(np.asarray(y, dtype=float))[None, :].copy()
    dt = float(traj.times[1] - traj.times[0])
    T = float(traj.times[-1])
    if not xi.covers(T):
        raise ValueError(f"control covers [0,{xi.duration:.6g}] but trajectory runs to {T}")
    cloud = traj.paths[:, 0, :].copy()
    w = traj.weights
    p = np.atleast_1d(np.asarray(y, dtype=float))[None, :].astype(float)
    if p.shape[1] != traj.dim:
        raise ValueError("point dimension does not match trajectory")
    out = np.empty((steps + 1, traj.dim))
    out[0] = p[0]
    half = 0.5 * dt
    step_entries = _active_entries(xi, steps, dt)
    for k in range(steps):
        entries = step_entries[k]
        c1, p1 = _drift_pair(f, cloud, p, w, entries)
        c2, p2 = _drift_pair(f, cloud + half * c1, p + half * p1, w, entries)
        c3, p3 = _drift_pair(f, cloud + half * c2, p + half * p2, w, entries)
        c4, p4 = _drift_pair(f, cloud + dt * c3, p + dt * p3, w, entries)
        cloud = cloud + (dt / 6.0) * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        p = p + (dt / 6.0) * (p1 + 2.0 * p2 + 2.0 * p3 + p4)
        if not np.all(np.abs(p) < BLOWUP_LIMIT):
            raise IntegrationBlowUp(k + 1, (k + 1) * dt)
        out[k + 1] = p[0]
    return out


@dataclass
class BoundReport:
    """Gronwall-bound audit of a trajectory against declared growth constants.

    The constants are derived from the declared sublinear constant C and the
    horizon, not read from any table: c0 bounds the root second moment, c1 the
    W2 drift rate from the initial measure, c3/c4 the per-particle position
    and displacement. `margins[name][k]` is limit - value at grid time k
    (negative means violated).
    """

    constants: dict
    margins: dict
    violations: list

    @property
    def all_pass(self) -> bool:
        return not self.violations


def check_apriori_bounds(traj: Trajectory, f: VectorField, mu: EmpiricalMeasure) -> BoundReport:
    """Audit second-moment, W2-drift, and pointwise growth bounds on a trajectory."""
    C = f.sublinear_C
    T = float(traj.times[-1])
    sigma0 = second_moment(mu)
    c0 = (sigma0 + C * T) * np.exp(2.0 * C * T)
    c1 = C * (1.0 + 2.0 * c0)
    c3 = (1.0 + C * (1.0 + c0) * T) * np.exp(C * T)
    c4 = C * (1.0 + c3 + c0)
    constants = {"c0": float(c0), "c1": float(c1), "c3": float(c3), "c4": float(c4)}

    y0 = traj.paths[:, 0, :]
    base = 1.0 + np.linalg.norm(y0, axis=1)  # per-particle 1 + ||y||
    margins = {name: np.empty(traj.times.shape[0]) for name in ("second_moment", "w2_drift", "position", "displacement")}
    violations = []
    for k, t in enumerate(traj.times):
        mk = traj.measure_at(k)
        vals = {
            "second_moment": (second_moment(mk), c0),
            "w2_drift": (w2_distance(mk, mu)[0], c1 * t),
            "position": (float(np.max(np.linalg.norm(traj.paths[:, k, :], axis=1) / base)), c3),
            "displacement": (float(np.max(np.linalg.norm(traj.paths[:, k, :] - y0, axis=1) / base)), c4 * t),
        }
        for name, (value, limit) in vals.items():
            margin = limit - value + 1e-12  # exact-equality guard at t=0
            margins[name][k] = margin
            if margin < 0:
                violations.append((name, k, float(t), value, limit))
    return BoundReport(constants, margins, violations)


def averaged_velocity(mu: EmpiricalMeasure, xi: RelaxedControl, f: VectorField,
                      h: float, dt: Optional[float] = None) -> L2Field:
    """Mean velocity over [0, h] per support point: (X(h; y) - y) / h.

    Equals the time average of the driving field along the short trajectory.
    The integration step defaults to the control's dt and must not exceed h.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    step = xi.dt if dt is None else float(dt)
    if step > h * (1.0 + 1e-9):
        raise ValueError(f"h={h} is below the integration step resolution {step}")
    n_sub = max(1, int(round(h / step)))
    traj = integrate(mu, xi, f, h, h / n_sub)
    return L2Field(mu, (traj.paths[:, -1, :] - traj.paths[:, 0, :]) / h)


# -----------------------------------------------------------------------------
# Declared-constant spot checks (sampled, not exhaustive)
# -----------------------------------------------------------------------------
def spot_check_lipschitz(f: VectorField, grid: ControlGrid, dim: int,
                         rng: np.random.Generator, trials: int = 25,
                         scale: float = 2.0, cloud_size: int = 8) -> float:
    """Max sampled ratio ||f(x1,m1,u)-f(x2,m2,u)|| / (L * (||x1-x2|| + W2(m1,m2)))."""
    worst = 0.0
    for _ in range(trials):
        x1 = rng.normal(scale=scale, size=dim)
        x2 = rng.normal(scale=scale, size=dim)
        m1 = EmpiricalMeasure(rng.normal(scale=scale, size=(cloud_size, dim)))
        m2 = EmpiricalMeasure(rng.normal(scale=scale, size=(cloud_size, dim)))
        u = grid.points[rng.integers(len(grid))]
        denom = f.lipschitz_L * (float(np.linalg.norm(x1 - x2)) + w2_distance(m1, m2)[0])
        if denom <= 0:
            continue
        num = float(np.linalg.norm(f.at(x1, m1, u) - f.at(x2, m2, u)))
        worst = max(worst, num / denom)
    return worst


def spot_check_growth(f: VectorField, grid: ControlGrid, dim: int,
                      rng: np.random.Generator, trials: int = 25,
                      scale: float = 2.0, cloud_size: int = 8) -> float:
    """Max sampled ratio ||f(x,m,u)|| / (C * (1 + ||x|| + second_moment(m)))."""
    worst = 0.0
    for _ in range(trials):
        x = rng.normal(scale=scale, size=dim)
        m = EmpiricalMeasure(rng.normal(scale=scale, size=(cloud_size, dim)))
        u = grid.points[rng.integers(len(grid))]
        denom = f.sublinear_C * (1.0 + float(np.linalg.norm(x)) + second_moment(m))
        num = float(np.linalg.norm(f.at(x, m, u)))
        worst = max(worst, num / denom)
    return worst
