"""Closed-form benchmark: 1-d mean-drift dynamics with a zero-mean target.

Velocity u - mean(m) with controls in [-1, 0]. Every quantity of interest
reduces to the measure's mean mbar, which obeys d/dt mbar = u - mbar, so the
minimal hitting time, the optimal control, the Hamiltonian, and the
transformed value all have explicit formulas. These serve as two-sided ground
truth for the numerical pipeline.
"""
from __future__ import annotations

import math
from typing import Sequence, Union

import numpy as np

from .dynamics import ControlGrid, VectorField
from .measures import DimensionMismatch, EmpiricalMeasure, L2Field
from .target import DEFAULT_MEMBERSHIP_TOL, MomentHyperplane

CONTROL_LO = -1.0
CONTROL_HI = 0.0

Segments = Union[float, Sequence[tuple[float, float]]]


class MeanDriftProblem:
    """Bundles the benchmark's field, target, and control grid (no free
    parameters beyond the membership tolerance)."""

    dimension = 1

    def __init__(self, membership_tol: float = DEFAULT_MEMBERSHIP_TOL):
        self.membership_tol = float(membership_tol)

    def field(self) -> VectorField:
        return _shifted_field(0.0)

    def shifted_field(self, delta: float) -> VectorField:
        """The benchmark field with a constant extra drift (perturbed family)."""
        return _shifted_field(float(delta))

    def target(self) -> MomentHyperplane:
        return MomentHyperplane([1.0], 0.0, self.membership_tol)

    def control_grid(self, m: int = 11) -> ControlGrid:
        return ControlGrid.interval(CONTROL_LO, CONTROL_HI, m)


def _shifted_field(delta: float) -> VectorField:
    def fn(points, m, u):
        return np.full_like(points, float(u[0]) - float(m.mean()[0]) + delta)

    name = "mean_drift" if delta == 0.0 else f"mean_drift+{delta:g}"
    # |f(x1,m1,u)-f(x2,m2,u)| = |mbar2-mbar1| <= W2(m1,m2); |f| <= 1+|mbar|+|delta|
    return VectorField(fn, lipschitz_L=1.0, sublinear_C=1.0 + abs(delta), name=name)


def analytic_value(mean: float) -> float:
    """Minimal time to drive the mean to zero: ln(1+mean) for mean >= 0,
    +inf otherwise (controls in [-1,0] cannot raise a negative mean to 0)."""
    if mean >= 0.0:
        return math.log1p(mean)
    return math.inf


def analytic_mean(mean0: float, control: Segments, t: float) -> float:
    """Mean at time t under a piecewise-constant control.

    `control` is either a constant value or a sequence of (u, duration)
    segments; the last duration may be inf. On a segment with constant u the
    mean relaxes as (m0 - u) * exp(-tau) + u.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if isinstance(control, (int, float)):
        segments = [(float(control), math.inf)]
    else:
        segments = [(float(u), float(dur)) for u, dur in control]
    m = float(mean0)
    remaining = float(t)
    for u, dur in segments:
        if dur < 0:
            raise ValueError("segment durations must be nonnegative")
        step = min(remaining, dur)
        m = (m - u) * math.exp(-step) + u
        remaining -= step
        if remaining <= 0.0:
            return m
    raise ValueError(f"control covers only {t - remaining:g} of [0, {t:g}]")


def analytic_hamiltonian(m: EmpiricalMeasure, s: L2Field) -> float:
    """inf over u in [-1,0] of integral s(x) (u - mbar) dm: the infimum sits at
    u=-1 when the integral of s is positive and at u=0 otherwise."""
    if m.dim != 1:
        raise DimensionMismatch("the benchmark Hamiltonian is one-dimensional")
    if s.base is not m:
        raise ValueError("s must be based on m")
    total = float(m.weights @ s.vectors[:, 0])
    mbar = float(m.mean()[0])
    if total > 0.0:
        return (-1.0 - mbar) * total
    return -mbar * total


def analytic_phi(mean: float) -> float:
    """Transformed value 1 - exp(-analytic_value): mean/(1+mean) for mean >= 0,
    and 1 on the infeasible side."""
    if mean >= 0.0:
        return mean / (1.0 + mean)
    return 1.0


def shifted_analytic_value(mean: float, delta: float) -> float:
    """Minimal hitting time for the perturbed field (extra drift delta in
    [0, 1)). For mean >= 0 the best control is u=-1; for mean < 0 the mean can
    only reach 0 because the perturbation pushes it up, under u=0."""
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    if mean >= 0.0:
        return math.log((mean + 1.0 - delta) / (1.0 - delta))
    if delta == 0.0:
        return math.inf
    return math.log((delta - mean) / delta)
