"""Empirical probability measures on R^d and exact optimal transport.

Measures are finitely supported particle clouds (points + probability
weights). Wasserstein-2 distances are computed exactly: equal-cardinality
uniform clouds go through the assignment solver, everything else through a
transportation linear program. Fields in L^2(m) are stored as one vector per
support point of their base measure.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

WEIGHT_SUM_ATOL = 1e-12      # accepted deviation of sum(weights) from 1 after renormalization
WEIGHT_RENORM_ATOL = 1e-9    # raw weight sums farther than this from 1 are rejected
PLAN_MARGINAL_ATOL = 1e-10   # row/column sums of a coupling must match marginals this tightly


class BaseMeasureMismatch(ValueError):
    """An L2 field or plan was used with a measure it is not based on."""


class DimensionMismatch(ValueError):
    """Operands live in different ambient dimensions."""


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ValueError(f"points must be an (N, d) array, got shape {pts.shape}")
    return pts


class EmpiricalMeasure:
    """Finitely supported probability measure: N points in R^d with weights.

    Weights within 1e-9 of summing to 1 are renormalized on construction;
    anything farther off is rejected. Instances are immutable.
    """

    __slots__ = ("points", "weights")

    def __init__(self, points, weights=None, *, _validate: bool = True):
        pts = _as_points(points)
        n = pts.shape[0]
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(weights, dtype=float).reshape(-1)
        if _validate:
            if n < 1:
                raise ValueError("a measure needs at least one support point")
            if w.shape[0] != n:
                raise ValueError(f"{n} points but {w.shape[0]} weights")
            if not np.all(np.isfinite(pts)):
                raise ValueError("support points must be finite")
            if np.any(w < 0):
                raise ValueError("weights must be nonnegative")
            total = float(w.sum())
            if abs(total - 1.0) > WEIGHT_RENORM_ATOL:
                raise ValueError(f"weights sum to {total!r}, too far from 1 to renormalize")
            w = w / total
            pts = pts.copy()
            w = w.copy()
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __setattr__(self, name, value):  # pragma: no cover - guard only
        raise AttributeError("EmpiricalMeasure is immutable")

    @classmethod
    def dirac(cls, x) -> "EmpiricalMeasure":
        return cls(np.atleast_2d(np.asarray(x, dtype=float)))

    @classmethod
    def uniform(cls, points) -> "EmpiricalMeasure":
        return cls(points)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(n={self.n}, d={self.dim}, mean={self.mean()})"

    # -- serialization: one row per particle, header `w,x1,...,xd` -------------
    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["w"] + [f"x{i + 1}" for i in range(self.dim)])
            for w, x in zip(self.weights, self.points):
                writer.writerow([repr(float(w))] + [repr(float(c)) for c in x])

    @classmethod
    def from_csv(cls, path) -> "EmpiricalMeasure":
        path = Path(path)
        with path.open("r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(row for row in fh if not row.startswith("#"))
            header = next(reader)
            if not header or header[0] != "w":
                raise ValueError(f"{path}: expected header starting with 'w', got {header}")
            rows = [[float(v) for v in row] for row in reader if row]
        data = np.asarray(rows, dtype=float)
        if data.size == 0:
            raise ValueError(f"{path}: no particles")
        return cls(data[:, 1:], data[:, 0])


def uniform_cloud(center, spread: float, n: int, rng: np.random.Generator) -> EmpiricalMeasure:
    """Equal-weight cloud of n points with mean exactly `center`.

    Gaussian jitter of scale `spread` is recentered so the empirical mean
    matches `center` to machine precision (the worked example's checks key on
    the exact mean).
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if n == 1:
        return EmpiricalMeasure.dirac(center)
    jitter = rng.normal(scale=spread, size=(n, center.shape[0]))
    jitter -= jitter.mean(axis=0)
    return EmpiricalMeasure(center[None, :] + jitter)


class L2Field:
    """A vector field in L^2(m): one vector per support point of `base`."""

    __slots__ = ("vectors", "base")

    def __init__(self, base: EmpiricalMeasure, vectors):
        vecs = _as_points(vectors)
        if vecs.shape != base.points.shape:
            raise BaseMeasureMismatch(
                f"field shape {vecs.shape} does not match base support {base.points.shape}"
            )
        if not np.all(np.isfinite(vecs)):
            raise ValueError("field vectors must be finite")
        vecs = vecs.copy()
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "base", base)

    def __setattr__(self, name, value):  # pragma: no cover - guard only
        raise AttributeError("L2Field is immutable")

    @classmethod
    def constant(cls, base: EmpiricalMeasure, vec) -> "L2Field":
        vec = np.atleast_1d(np.asarray(vec, dtype=float))
        return cls(base, np.tile(vec, (base.n, 1)))

    @classmethod
    def identity(cls, base: EmpiricalMeasure) -> "L2Field":
        return cls(base, base.points)

    @classmethod
    def from_callable(cls, base: EmpiricalMeasure, fn: Callable[[np.ndarray], np.ndarray]) -> "L2Field":
        return cls(base, np.stack([np.atleast_1d(fn(x)) for x in base.points]))

    def __neg__(self) -> "L2Field":
        return L2Field(self.base, -self.vectors)

    def __add__(self, other: "L2Field") -> "L2Field":
        _require_same_base(self, other)
        return L2Field(self.base, self.vectors + other.vectors)

    def scale(self, alpha: float) -> "L2Field":
        return L2Field(self.base, alpha * self.vectors)

    def norm(self) -> float:
        """L^2(m) norm: (sum_i w_i ||v_i||^2)^(1/2)."""
        return float(np.sqrt(self.base.weights @ np.sum(self.vectors**2, axis=1)))


def _require_same_base(s1: L2Field, s2: L2Field) -> None:
    if s1.base is not s2.base:
        raise BaseMeasureMismatch("fields are based on different measures")


class TransportPlan:
    """Coupling between two empirical measures: an N1 x N2 mass matrix."""

    __slots__ = ("matrix", "source", "target")

    def __init__(self, source: EmpiricalMeasure, target: EmpiricalMeasure, matrix):
        mat = np.asarray(matrix, dtype=float)
        if mat.shape != (source.n, target.n):
            raise ValueError(f"plan shape {mat.shape}, expected {(source.n, target.n)}")
        if np.any(mat < -PLAN_MARGINAL_ATOL):
            raise ValueError("plan entries must be nonnegative")
        mat = np.maximum(mat, 0.0)
        if np.max(np.abs(mat.sum(axis=1) - source.weights)) > PLAN_MARGINAL_ATOL:
            raise ValueError("plan row sums do not match source weights")
        if np.max(np.abs(mat.sum(axis=0) - target.weights)) > PLAN_MARGINAL_ATOL:
            raise ValueError("plan column sums do not match target weights")
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "target", target)

    def __setattr__(self, name, value):  # pragma: no cover - guard only
        raise AttributeError("TransportPlan is immutable")


# -----------------------------------------------------------------------------
# Operations
# -----------------------------------------------------------------------------
def second_moment(m: EmpiricalMeasure) -> float:
    """Root second moment (sum_i w_i ||x_i||^2)^(1/2)."""
    return float(np.sqrt(m.weights @ np.sum(m.points**2, axis=1)))


def push_forward(m: EmpiricalMeasure, mapping: L2Field, step: float) -> EmpiricalMeasure:
    """Push m forward along `mapping`: points become x_i + step * F_i."""
    if mapping.base is not m:
        raise BaseMeasureMismatch("mapping is not based on the measure being pushed")
    if not np.isfinite(step):
        raise ValueError("step must be finite")
    return EmpiricalMeasure(m.points + step * mapping.vectors, m.weights)


def inner_product_l2(s1: L2Field, s2: L2Field) -> float:
    """<s1, s2> in L^2(m): sum_i w_i <s1_i, s2_i>."""
    _require_same_base(s1, s2)
    return float(s1.base.weights @ np.sum(s1.vectors * s2.vectors, axis=1))


def _cost_matrix(m1: EmpiricalMeasure, m2: EmpiricalMeasure) -> np.ndarray:
    diff = m1.points[:, None, :] - m2.points[None, :, :]
    return np.sum(diff**2, axis=2)


def transport_cost(plan: TransportPlan) -> float:
    """Root transport cost of an arbitrary coupling: (sum pi_ij ||x_i-y_j||^2)^(1/2)."""
    sq = _cost_matrix(plan.source, plan.target)
    return float(np.sqrt(max(0.0, float(np.sum(plan.matrix * sq)))))


def w2_distance(m1: EmpiricalMeasure, m2: EmpiricalMeasure) -> tuple[float, TransportPlan]:
    """Exact Wasserstein-2 distance and an optimal coupling.

    Equal-cardinality uniform clouds are matched with the assignment solver;
    general weights go through a transportation LP (HiGHS, exact for this
    problem class at the scales used here).
    """
    if m1.dim != m2.dim:
        raise DimensionMismatch(f"d={m1.dim} vs d={m2.dim}")
    sq = _cost_matrix(m1, m2)
    uniform = (
        m1.n == m2.n
        and np.allclose(m1.weights, 1.0 / m1.n, rtol=0.0, atol=1e-14)
        and np.allclose(m2.weights, 1.0 / m2.n, rtol=0.0, atol=1e-14)
    )
    if uniform:
        rows, cols = linear_sum_assignment(sq)
        mat = np.zeros_like(sq)
        mat[rows, cols] = 1.0 / m1.n
        cost_sq = float(sq[rows, cols].sum() / m1.n)
    else:
        mat = _transport_lp(sq, m1.weights, m2.weights)
        cost_sq = float(np.sum(mat * sq))
    plan = TransportPlan(m1, m2, mat)
    return float(np.sqrt(max(0.0, cost_sq))), plan


def _transport_lp(sq: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    n1, n2 = sq.shape
    # marginal constraints: n1 row-sum equalities + n2 column-sum equalities
    a_eq = np.zeros((n1 + n2, n1 * n2))
    for i in range(n1):
        a_eq[i, i * n2 : (i + 1) * n2] = 1.0
    for j in range(n2):
        a_eq[n1 + j, j::n2] = 1.0
    b_eq = np.concatenate([w1, w2])
    res = linprog(sq.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0.0, None), method="highs")
    if not res.success:  # pragma: no cover - HiGHS does not fail on feasible transport
        raise RuntimeError(f"transport LP failed: {res.message}")
    mat = res.x.reshape(n1, n2)
    # clean LP round-off so the plan passes its marginal invariants
    mat = np.maximum(mat, 0.0)
    mat *= (w1 / np.maximum(mat.sum(axis=1), 1e-300))[:, None]
    return mat


def barycentric_displacement(plan: TransportPlan) -> L2Field:
    """Barycentric displacement of a plan: v_i = x_i - E_pi[y | x_i].

    Rows carrying zero mass get a zero vector.
    """
    row_mass = plan.matrix.sum(axis=1)
    cond_mean = plan.matrix @ plan.target.points
    safe = np.maximum(row_mass, 1e-300)[:, None]
    vectors = np.where(row_mass[:, None] > 0.0, plan.source.points - cond_mean / safe, 0.0)
    return L2Field(plan.source, vectors)
