"""Target distances, dilations, and hitting-time detection."""
import math

import numpy as np
import pytest

from timeopt.dynamics import RelaxedControl, integrate
from timeopt.measures import EmpiricalMeasure, uniform_cloud, w2_distance
from timeopt.target import (
    CustomTarget,
    MomentHyperplane,
    WassersteinBall,
    dilated_target,
    hitting_time,
)

from conftest import make_rng


def zero_mean_candidates(rng, n_candidates, size):
    """Random measures with mean exactly zero (recentered clouds)."""
    out = []
    for _ in range(n_candidates):
        pts = rng.normal(scale=rng.uniform(0.1, 2.0), size=(size, 1))
        pts -= pts.mean(axis=0)
        out.append(EmpiricalMeasure(pts))
    return out


# -----------------------------------------------------------------------------
# distances
# -----------------------------------------------------------------------------
def test_hyperplane_distance_at_member():
    target = MomentHyperplane([1.0], 0.0)
    assert target.distance(EmpiricalMeasure.dirac([0.0])) == 0.0
    assert target.member(EmpiricalMeasure.dirac([0.0]))


def test_hyperplane_distance_is_attained_not_beaten():
    # no zero-mean measure gets closer than |mean| and a translate attains it
    target = MomentHyperplane([1.0], 0.0)
    rng = make_rng(0)
    m = uniform_cloud([0.7], 0.4, 12, rng)
    d = target.distance(m)
    assert d == pytest.approx(0.7, abs=1e-12)
    for cand in zero_mean_candidates(rng, 200, 12):
        assert w2_distance(m, cand)[0] >= d - 1e-9
    translate = EmpiricalMeasure(m.points - 0.7, m.weights)
    assert w2_distance(m, translate)[0] == pytest.approx(0.7, abs=1e-9)


def test_hyperplane_normalizes_direction():
    target = MomentHyperplane([2.0, 0.0], 1.0)
    m = EmpiricalMeasure.dirac([3.0, 5.0])
    assert target.distance(m) == pytest.approx(2.5, abs=1e-12)


def test_wasserstein_ball_distance():
    rng = make_rng(1)
    center = uniform_cloud([0.0], 1.0, 10, rng)
    target = WassersteinBall(center, 0.5)
    assert target.distance(center) == 0.0
    assert target.member(center)
    far = EmpiricalMeasure(center.points + 3.0, center.weights)
    assert target.distance(far) == pytest.approx(2.5, abs=1e-9)


def test_distance_is_one_lipschitz_in_w2():
    rng = make_rng(2)
    targets = [MomentHyperplane([1.0], 0.0),
               WassersteinBall(uniform_cloud([0.0], 1.0, 8, rng), 0.3)]
    targets.append(dilated_target(targets[0], 0.2))
    for _ in range(25):
        m1 = EmpiricalMeasure(rng.normal(size=(6, 1)), rng.dirichlet(np.ones(6)))
        m2 = EmpiricalMeasure(rng.normal(size=(5, 1)), rng.dirichlet(np.ones(5)))
        gap = w2_distance(m1, m2)[0]
        for tg in targets:
            assert abs(tg.distance(m1) - tg.distance(m2)) <= gap * (1.0 + 1e-6) + 1e-12


def test_custom_target_heuristic_flag():
    tg = CustomTarget(lambda m: abs(float(m.mean()[0])) * 0.5, certified=False)
    assert not tg.certified
    assert tg.distance(EmpiricalMeasure.dirac([2.0])) == pytest.approx(1.0)


# -----------------------------------------------------------------------------
# dilation
# -----------------------------------------------------------------------------
def test_dilation_subtracts_from_distance():
    target = MomentHyperplane([1.0], 0.0)
    m = uniform_cloud([0.7], 0.2, 10, make_rng(3))
    assert dilated_target(target, 0.2).distance(m) == pytest.approx(0.5, abs=1e-12)


def test_dilation_zero_keeps_membership():
    target = MomentHyperplane([1.0], 0.0)
    rng = make_rng(4)
    d0 = dilated_target(target, 0.0)
    for _ in range(50):
        m = uniform_cloud([float(rng.normal(scale=0.5))], 0.3, 8, rng)
        assert d0.member(m) == target.member(m)


def test_dilation_nesting():
    target = MomentHyperplane([1.0], 0.0)
    small, big = dilated_target(target, 0.1), dilated_target(target, 0.3)
    rng = make_rng(5)
    for _ in range(100):
        m = uniform_cloud([float(rng.normal(scale=0.3))], 0.2, 6, rng)
        if small.member(m):
            assert big.member(m)


def test_dilation_rejects_negative_radius():
    with pytest.raises(ValueError):
        dilated_target(MomentHyperplane([1.0], 0.0), -0.1)


# -----------------------------------------------------------------------------
# hitting times
# -----------------------------------------------------------------------------
def run_mean_drift(bench, mean0, u_index, T, dt, n=60, seed=6):
    f = bench.field()
    grid = bench.control_grid(11)
    mu = uniform_cloud([mean0], 0.4, n, make_rng(seed))
    xi = RelaxedControl.constant(grid, u_index, int(round(T / dt)), dt)
    return integrate(mu, xi, f, T, dt)


def test_hit_at_time_zero_for_initial_member(bench, zero_target):
    traj = run_mean_drift(bench, 0.0, 0, 0.1, 0.01)
    res = hitting_time(traj, zero_target)
    assert res.hit and res.time == 0.0 and res.bracket == (0, 0)


def test_mean_drift_hitting_time_matches_log2(bench, zero_target):
    traj = run_mean_drift(bench, 1.0, 0, 1.0, 1e-3)
    res = hitting_time(traj, zero_target)
    assert res.hit
    assert res.time == pytest.approx(math.log(2.0), abs=2e-3)


def test_negative_mean_is_censored(bench, zero_target):
    # mean -0.5 cannot reach zero under controls in [-1, 0]
    for u_index in (0, 5, 10):
        traj = run_mean_drift(bench, -0.5, u_index, 10.0, 0.01)
        res = hitting_time(traj, zero_target)
        assert res.status == "censored"
        assert res.time == pytest.approx(10.0)
        assert res.bracket is None


def test_refined_time_lies_in_bracket(bench, zero_target):
    traj = run_mean_drift(bench, 1.0, 2, 2.0, 0.05)
    res = hitting_time(traj, zero_target)
    assert res.hit
    lo, hi = res.bracket
    assert traj.times[lo] <= res.time <= traj.times[hi]


def test_hitting_monotone_under_dilation(bench, zero_target):
    traj = run_mean_drift(bench, 1.0, 0, 2.0, 0.01)
    times = []
    for eps in (0.0, 0.05, 0.1, 0.2):
        tg = dilated_target(zero_target, eps) if eps > 0 else zero_target
        res = hitting_time(traj, tg)
        assert res.hit
        times.append(res.time)
    assert all(a >= b for a, b in zip(times, times[1:]))


def test_censored_becomes_hit_under_horizon_extension(bench, zero_target):
    short = run_mean_drift(bench, 1.0, 0, 0.5, 0.01)
    assert not hitting_time(short, zero_target).hit
    longer = run_mean_drift(bench, 1.0, 0, 1.0, 0.01)
    assert hitting_time(longer, zero_target).hit


def test_sublevel_target_hitting_interpolates(bench):
    # the band |mean| <= 0.2 is entered when the mean decays to 0.2
    band = dilated_target(bench.target(), 0.2)
    traj = run_mean_drift(bench, 1.0, 0, 2.0, 0.01)
    res = hitting_time(traj, band)
    assert res.hit
    assert res.time == pytest.approx(math.log(2.0 / 1.2), abs=1e-3)
