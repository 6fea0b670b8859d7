"""Target sets in measure space, their dilations, and hitting times.

A target carries a signed distance signal: for sublevel-set targets (balls,
dilations, custom bounds) membership is `signed <= eta`, while level-set
targets (moment hyperplanes) are the zero set of the signal and membership is
`|signed| <= eta`. The explicit tolerance eta is unavoidable: exact
membership of a particle cloud in a closed continuum set is a measure-zero
event.

Hitting detection scans the signal on the time grid and refines by linear
interpolation inside the bracketing step; for level-set targets a sign change
between grid points certifies a crossing even when no grid point itself lands
within eta. A reported hit is therefore an interpolated bracket of the true
entry time (O(dt^2) on smooth signals), not a re-integrated point value.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import Trajectory
from .measures import EmpiricalMeasure, w2_distance

DEFAULT_MEMBERSHIP_TOL = 1e-6


class TargetSet:
    """Base class; subclasses provide `signed_distance` and may vectorize
    `signed_curve`. `level_set=True` means the target is the zero set of the
    signal rather than its sublevel set."""

    kind = "abstract"
    level_set = False
    certified = True  # False marks heuristic (non-certified) distance bounds

    def __init__(self, membership_tol: float = DEFAULT_MEMBERSHIP_TOL):
        if membership_tol <= 0:
            raise ValueError("membership tolerance must be positive")
        self.membership_tol = float(membership_tol)

    def signed_distance(self, m: EmpiricalMeasure) -> float:
        raise NotImplementedError

    def distance(self, m: EmpiricalMeasure) -> float:
        """W2 distance to the target (exact for the built-in kinds)."""
        s = self.signed_distance(m)
        return abs(s) if self.level_set else max(0.0, s)

    def member(self, m: EmpiricalMeasure) -> bool:
        return self.distance(m) <= self.membership_tol

    def signed_curve(self, traj: Trajectory) -> np.ndarray:
        """Signed signal at every grid time; subclasses may vectorize."""
        return np.array([self.signed_distance(traj.measure_at(k))
                         for k in range(traj.times.shape[0])])

    def distance_curve(self, traj: Trajectory) -> np.ndarray:
        s = self.signed_curve(traj)
        return np.abs(s) if self.level_set else np.maximum(0.0, s)


class MomentHyperplane(TargetSet):
    """Measures whose mean satisfies <a, mean(m)> = b.

    The W2 distance to this set equals |<a, mean(m)> - b| / ||a||: Jensen gives
    the lower bound and a translation along a attains it. The signed signal
    keeps the side information for crossing detection.
    """

    kind = "moment_hyperplane"
    level_set = True

    def __init__(self, direction, level: float, membership_tol: float = DEFAULT_MEMBERSHIP_TOL):
        super().__init__(membership_tol)
        a = np.atleast_1d(np.asarray(direction, dtype=float))
        norm = float(np.linalg.norm(a))
        if norm == 0.0:
            raise ValueError("hyperplane direction must be nonzero")
        self.direction = a
        self.level = float(level)
        self._norm = norm

    def signed_distance(self, m: EmpiricalMeasure) -> float:
        return (float(self.direction @ m.mean()) - self.level) / self._norm

    def signed_curve(self, traj: Trajectory) -> np.ndarray:
        return (traj.means() @ self.direction - self.level) / self._norm


class WassersteinBall(TargetSet):
    """Closed W2 ball around a reference measure (negative signal inside)."""

    kind = "wasserstein_ball"

    def __init__(self, center: EmpiricalMeasure, radius: float,
                 membership_tol: float = DEFAULT_MEMBERSHIP_TOL):
        super().__init__(membership_tol)
        if radius < 0:
            raise ValueError("radius must be nonnegative")
        self.center = center
        self.radius = float(radius)

    def signed_distance(self, m: EmpiricalMeasure) -> float:
        return w2_distance(m, self.center)[0] - self.radius


class CustomTarget(TargetSet):
    """User-supplied lower-bounding distance function (sublevel semantics);
    `certified=False` flags a merely heuristic bound so reports can say so."""

    kind = "custom"

    def __init__(self, distance_fn: Callable[[EmpiricalMeasure], float],
                 membership_tol: float = DEFAULT_MEMBERSHIP_TOL, certified: bool = False):
        super().__init__(membership_tol)
        self._distance_fn = distance_fn
        self.certified = bool(certified)

    def signed_distance(self, m: EmpiricalMeasure) -> float:
        return float(self._distance_fn(m))


class DilatedTarget(TargetSet):
    """All measures within W2 distance eps of the base target.

    Always a sublevel set (of the base's unsigned distance), even when the
    base is a level set: the dilation of a hyperplane is a band.
    """

    kind = "dilated"

    def __init__(self, base: TargetSet, eps: float):
        super().__init__(base.membership_tol)
        if eps < 0:
            raise ValueError("dilation radius must be nonnegative")
        self.base = base
        self.eps = float(eps)
        self.certified = base.certified

    def signed_distance(self, m: EmpiricalMeasure) -> float:
        return self.base.distance(m) - self.eps

    def signed_curve(self, traj: Trajectory) -> np.ndarray:
        return self.base.distance_curve(traj) - self.eps


def dilated_target(target: TargetSet, eps: float) -> TargetSet:
    return DilatedTarget(target, eps)


@dataclass(frozen=True)
class HittingResult:
    """First entry of a measure trajectory into a target.

    `status` is "hit" or "censored"; `time` is the interpolated entry time for
    hits and the horizon for censored runs. `bracket` gives the grid indices
    enclosing the crossing ((0, 0) when the initial measure is already
    inside, None when censored).
    """

    status: str
    time: float
    bracket: Optional[tuple[int, int]]

    @property
    def hit(self) -> bool:
        return self.status == "hit"


def _refine_to_level(t0: float, t1: float, s0: float, s1: float, level: float) -> float:
    # s0 and s1 straddle `level`; return the linear crossing time
    return t0 + (s0 - level) / (s0 - s1) * (t1 - t0)


def hitting_time(traj: Trajectory, target: TargetSet) -> HittingResult:
    """First time the measure curve enters the target, bracket-refined.

    Grid points inside the target are taken directly; for level-set targets a
    sign change of the signal across a step also certifies a crossing (the
    continuous curve passes through the zero set inside the step).
    """
    signal = target.signed_curve(traj)
    eta = target.membership_tol
    times = traj.times

    if target.level_set:
        inside = np.abs(signal) <= eta
    else:
        inside = signal <= eta
    hit_idx = np.flatnonzero(inside)
    first_inside = int(hit_idx[0]) if hit_idx.size else None

    first_cross = None
    if target.level_set:
        s0, s1 = signal[:-1], signal[1:]
        through = ((s0 > eta) & (s1 < -eta)) | ((s0 < -eta) & (s1 > eta))
        cross_idx = np.flatnonzero(through)
        if cross_idx.size:
            first_cross = int(cross_idx[0]) + 1  # right endpoint of the bracket

    if first_inside is None and first_cross is None:
        return HittingResult("censored", float(times[-1]), None)
    if first_cross is not None and (first_inside is None or first_cross < first_inside):
        k = first_cross
        t = _refine_to_level(float(times[k - 1]), float(times[k]),
                             float(signal[k - 1]), float(signal[k]), 0.0)
        return HittingResult("hit", t, (k - 1, k))

    k = first_inside
    if k == 0:
        return HittingResult("hit", 0.0, (0, 0))
    prev, cur = float(signal[k - 1]), float(signal[k])
    level = eta if prev > eta else -eta  # entered from above or (level sets) below
    t = _refine_to_level(float(times[k - 1]), float(times[k]), prev, cur, level)
    return HittingResult("hit", t, (k - 1, k))
