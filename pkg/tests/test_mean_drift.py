"""Closed-form benchmark identities and their cross-checks."""
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from timeopt.hjb import hamiltonian
from timeopt.measures import DimensionMismatch, EmpiricalMeasure, L2Field, uniform_cloud
from timeopt.mean_drift import (
    analytic_hamiltonian,
    analytic_mean,
    analytic_phi,
    analytic_value,
    shifted_analytic_value,
)
from timeopt.value import kruzhkov

from conftest import make_rng


def test_analytic_value():
    assert analytic_value(0.0) == 0.0
    assert analytic_value(1.0) == pytest.approx(math.log(2.0), abs=1e-15)
    assert analytic_value(-0.5) == math.inf


def test_analytic_mean_free_decay():
    for t in (0.0, 0.3, 1.7):
        assert analytic_mean(0.8, 0.0, t) == pytest.approx(0.8 * math.exp(-t), rel=1e-14)


def test_analytic_mean_optimal_control_reaches_zero():
    assert analytic_mean(1.0, -1.0, math.log(2.0)) == pytest.approx(0.0, abs=1e-15)


def test_analytic_mean_two_segments_vs_ode_oracle():
    segments = [(-1.0, 0.1), (0.0, math.inf)]
    got = analytic_mean(1.0, segments, 0.2)

    def rhs(t, y):
        return (-1.0 if t < 0.1 else 0.0) - y

    sol = solve_ivp(rhs, (0.0, 0.2), [1.0], rtol=1e-11, atol=1e-13, max_step=0.05)
    assert got == pytest.approx(float(sol.y[0, -1]), abs=1e-9)


def test_analytic_mean_control_too_short():
    with pytest.raises(ValueError):
        analytic_mean(1.0, [(-1.0, 0.1)], 0.2)


def test_analytic_hamiltonian_branches():
    rng = make_rng(0)
    m = uniform_cloud([1.0], 0.4, 20, rng)
    zero_sum = L2Field(m, m.points - m.mean())  # integral of s is 0
    assert analytic_hamiltonian(m, zero_sum) == pytest.approx(0.0, abs=1e-12)
    assert analytic_hamiltonian(m, L2Field.constant(m, [1.0])) == pytest.approx(-2.0, abs=1e-12)
    assert analytic_hamiltonian(m, L2Field.constant(m, [-1.0])) == pytest.approx(1.0, abs=1e-12)


def test_analytic_hamiltonian_needs_1d():
    m = uniform_cloud([0.0, 0.0], 1.0, 5, make_rng(1))
    with pytest.raises(DimensionMismatch):
        analytic_hamiltonian(m, L2Field.constant(m, [1.0, 1.0]))


def test_analytic_phi():
    assert analytic_phi(0.0) == 0.0
    assert analytic_phi(1.0) == 0.5
    assert analytic_phi(-0.3) == 1.0


def test_phi_equals_kruzhkov_of_value():
    for mean in (-1.0, -0.2, 0.0, 0.4, 1.0, 2.5):
        assert analytic_phi(mean) == pytest.approx(kruzhkov(analytic_value(mean)), abs=1e-15)


def test_dpp_identity_along_optimal_flow():
    # value(mean at time t under u=-1) = value(mean0) - t
    mean0 = 1.4
    total = analytic_value(mean0)
    for t in np.linspace(0.0, total, 9):
        mt = analytic_mean(mean0, -1.0, float(t))
        assert analytic_value(mt) == pytest.approx(total - t, abs=1e-12)


def test_hamiltonian_grid_gap_bounded_by_spacing(bench, drift_field):
    rng = make_rng(2)
    for _ in range(10):
        m = uniform_cloud([float(rng.uniform(0.1, 2.0))], 0.3, 15, rng)
        s = L2Field(m, rng.normal(size=(15, 1)))
        integral = abs(float(m.weights @ s.vectors[:, 0]))
        exact = analytic_hamiltonian(m, s)
        for points in (3, 5, 9, 17):
            spacing = 1.0 / (points - 1)
            approx = hamiltonian(m, s, drift_field, bench.control_grid(points)).value
            assert approx >= exact - 1e-12  # grid infimum cannot undershoot
            assert abs(approx - exact) <= spacing * integral + 1e-12


def test_lower_semicontinuity_at_zero_mean():
    # liminf of values along any sequence of means tending to 0 is >= value(0)
    from_above = [analytic_value(1.0 / k) for k in range(1, 50)]
    from_below = [analytic_value(-1.0 / k) for k in range(1, 50)]
    assert min(from_above[-10:]) >= analytic_value(0.0)
    assert all(v == math.inf for v in from_below)


def test_shifted_value_reduces_to_base_at_zero_shift():
    for mean in (0.0, 0.5, 2.0):
        assert shifted_analytic_value(mean, 0.0) == pytest.approx(analytic_value(mean), abs=1e-14)
    assert shifted_analytic_value(-0.5, 0.0) == math.inf


def test_shifted_value_formulas():
    # mean 1, shift 1/n: log((2n-1)/(n-1)); mean -0.5, shift 1/n: log(1 + n/2)
    for n in (5, 10, 20, 40, 80):
        d = 1.0 / n
        assert shifted_analytic_value(1.0, d) == pytest.approx(
            math.log((2 * n - 1) / (n - 1)), rel=1e-12)
        assert shifted_analytic_value(-0.5, d) == pytest.approx(
            math.log(1 + n / 2), rel=1e-12)


def test_shifted_value_rejects_bad_shift():
    with pytest.raises(ValueError):
        shifted_analytic_value(1.0, 1.0)


def test_benchmark_field_and_target_shapes(bench):
    f = bench.field()
    grid = bench.control_grid(11)
    assert len(grid) == 11
    assert grid.points[0][0] == -1.0 and grid.points[-1][0] == 0.0
    m = EmpiricalMeasure.dirac([2.0])
    # velocity of a point mass at 2 under u = -1 is -1 - 2 = -3
    assert f.at([2.0], m, [-1.0])[0] == pytest.approx(-3.0, abs=1e-14)
    assert bench.target().member(EmpiricalMeasure.dirac([0.0]))
