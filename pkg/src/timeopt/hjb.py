"""Hamiltonian on measure space and numerical nonsmooth analysis.

Directional derivatives of functionals of measures are estimated along
push-forward perturbations (Id + h F)#m over a geometric h-schedule; sub- and
superdifferential membership are one-sided comparisons of <s, F> against
those estimates. The perturbed direction is kept fixed at F (no infimum over
nearby F'), which collapses to the exact directional derivative for the
smooth candidates certified here and keeps a pass a true pass of the
necessary condition.

Residuals of the stationary Dirichlet form H + 1 - phi are reported signed:
supersolutions need <= 0, subsolutions >= 0 (up to tolerance).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .dynamics import ControlGrid, VectorField
from .measures import BaseMeasureMismatch, EmpiricalMeasure, L2Field, inner_product_l2, push_forward

DEFAULT_TAIL = 4
MIN_SLACK = 1e-8


class DomainError(ValueError):
    """A functional was evaluated outside its guarded domain."""


@dataclass(frozen=True)
class MeasureFunctional:
    """Real-valued functional of a measure with an optional domain guard."""

    fn: Callable[[EmpiricalMeasure], float]
    guard: Optional[Callable[[EmpiricalMeasure], bool]] = None
    name: str = "phi"

    def __call__(self, m: EmpiricalMeasure) -> float:
        if self.guard is not None and not self.guard(m):
            raise DomainError(f"{self.name} is undefined at the requested measure")
        value = float(self.fn(m))
        if not math.isfinite(value):
            raise DomainError(f"{self.name} returned a non-finite value")
        return value


@dataclass(frozen=True)
class HamiltonianResult:
    value: float
    argmin: np.ndarray
    index: int


def hamiltonian(m: EmpiricalMeasure, s: L2Field, f: VectorField,
                grid: ControlGrid) -> HamiltonianResult:
    """min over grid controls of sum_i w_i <s_i, f(x_i, m, u)>.

    Ties resolve to the lowest grid index, so the argmin is invariant under
    positive scaling of s.
    """
    if s.base is not m:
        raise BaseMeasureMismatch("s must be based on m")
    if len(grid) == 0:  # pragma: no cover - ControlGrid enforces nonemptiness
        raise ValueError("empty control grid")
    values = np.empty(len(grid))
    for j in range(len(grid)):
        vel = f(m.points, m, grid.points[j])
        values[j] = m.weights @ np.sum(s.vectors * vel, axis=1)
    idx = int(np.argmin(values))
    return HamiltonianResult(float(values[idx]), grid.points[idx], idx)


@dataclass(frozen=True)
class DerivativeEstimate:
    """Difference-quotient record along a decreasing h-schedule.

    lower/upper are the min/max of the last `tail` quotients; for a
    directionally differentiable functional they agree up to the spread.
    """

    lower: float
    upper: float
    h_schedule: tuple[float, ...]
    quotients: tuple[float, ...]

    @property
    def spread(self) -> float:
        return self.upper - self.lower

    @property
    def slack(self) -> float:
        """Empirical o(h) allowance used by the membership tests."""
        return max(10.0 * self.spread, MIN_SLACK)


def default_schedule(h0: float = 0.1, levels: int = 11) -> tuple[float, ...]:
    return tuple(h0 * 2.0 ** (-k) for k in range(levels))


def hadamard_derivative(phi: MeasureFunctional, m: EmpiricalMeasure, F: L2Field,
                        schedule: Optional[Sequence[float]] = None,
                        tail: int = DEFAULT_TAIL) -> DerivativeEstimate:
    """Estimate the directional derivative of phi at m along F."""
    if F.base is not m:
        raise BaseMeasureMismatch("direction must be based on m")
    sched = tuple(schedule) if schedule is not None else default_schedule()
    if any(h <= 0 for h in sched) or len(sched) < tail:
        raise ValueError("schedule must be positive and at least as long as the tail")
    phi0 = phi(m)
    quotients = []
    for h in sched:
        try:
            ph = phi(push_forward(m, F, h))
        except DomainError as err:
            raise DomainError(f"{err} (perturbation h={h:g})") from err
        quotients.append((ph - phi0) / h)
    tail_q = quotients[-tail:]
    return DerivativeEstimate(min(tail_q), max(tail_q), sched, tuple(quotients))


Direction = Union[L2Field, tuple[str, L2Field]]


def _labeled(directions: Sequence[Direction]) -> list[tuple[str, L2Field]]:
    out = []
    for k, d in enumerate(directions):
        if isinstance(d, tuple):
            out.append(d)
        else:
            out.append((f"F{k}", d))
    return out


def default_directions(m: EmpiricalMeasure, f: Optional[VectorField] = None,
                       grid: Optional[ControlGrid] = None, n_random: int = 8,
                       seed: int = 0) -> list[tuple[str, L2Field]]:
    """Coordinate constants, +-identity, the dynamics' directions on the grid,
    and seeded random fields: the directions the membership arguments use."""
    dirs: list[tuple[str, L2Field]] = []
    for i in range(m.dim):
        e = np.zeros(m.dim)
        e[i] = 1.0
        dirs.append((f"axis[{i}]", L2Field.constant(m, e)))
    dirs.append(("identity", L2Field.identity(m)))
    dirs.append(("neg_identity", L2Field(m, -m.points)))
    if f is not None and grid is not None:
        for j in range(len(grid)):
            dirs.append((f"drift[u{j}]", L2Field(m, f(m.points, m, grid.points[j]))))
    rng = np.random.default_rng(seed)
    for i in range(n_random):
        dirs.append((f"random[{i}]", L2Field(m, rng.normal(size=m.points.shape))))
    return dirs


@dataclass(frozen=True)
class DirectionCheck:
    label: str
    lower: float
    upper: float
    inner: float
    slack: float
    margin: float
    passed: bool


@dataclass
class MembershipReport:
    """Outcome of a sub- or superdifferential membership test."""

    side: str  # "sub" or "super"
    checks: list[DirectionCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def worst_margin(self) -> float:
        return min(c.margin for c in self.checks)


def _membership(phi: MeasureFunctional, m: EmpiricalMeasure, s: L2Field,
                directions: Sequence[Direction], schedule, side: str) -> MembershipReport:
    checks = []
    for label, F in _labeled(directions):
        est = hadamard_derivative(phi, m, F, schedule)
        inner = inner_product_l2(s, F)
        if side == "sub":
            margin = (est.lower + est.slack) - inner
        else:
            margin = inner - (est.upper - est.slack)
        checks.append(DirectionCheck(label, est.lower, est.upper, inner,
                                     est.slack, margin, margin >= 0.0))
    return MembershipReport(side, checks)


def subdifferential_test(phi: MeasureFunctional, m: EmpiricalMeasure, s: L2Field,
                         directions: Sequence[Direction],
                         schedule: Optional[Sequence[float]] = None) -> MembershipReport:
    """Necessary condition for s in the subdifferential of phi at m:
    <s, F> <= lower derivative estimate + slack for every direction F."""
    return _membership(phi, m, s, directions, schedule, "sub")


def superdifferential_test(phi: MeasureFunctional, m: EmpiricalMeasure, s: L2Field,
                           directions: Sequence[Direction],
                           schedule: Optional[Sequence[float]] = None) -> MembershipReport:
    """Mirrored test: <s, F> >= upper derivative estimate - slack."""
    return _membership(phi, m, s, directions, schedule, "super")


def supersolution_residual(phi: MeasureFunctional, m: EmpiricalMeasure, s: L2Field,
                           f: VectorField, grid: ControlGrid) -> float:
    """H(m, s) + 1 - phi(m); a supersolution needs this <= 0 for s in the
    subdifferential."""
    return hamiltonian(m, s, f, grid).value + 1.0 - phi(m)


def subsolution_residual(phi: MeasureFunctional, m: EmpiricalMeasure, s: L2Field,
                         f: VectorField, grid: ControlGrid) -> float:
    """Same stationary form, opposite pass direction: a subsolution needs
    >= 0 for s in the superdifferential."""
    return hamiltonian(m, s, f, grid).value + 1.0 - phi(m)
