"""Hamiltonian properties and numerical nonsmooth analysis."""
import numpy as np
import pytest

from timeopt.hjb import (
    DomainError,
    MeasureFunctional,
    default_directions,
    hadamard_derivative,
    hamiltonian,
    subdifferential_test,
    subsolution_residual,
    superdifferential_test,
    supersolution_residual,
)
from timeopt.measures import (
    BaseMeasureMismatch,
    EmpiricalMeasure,
    L2Field,
    second_moment,
    uniform_cloud,
)
from timeopt.mean_drift import analytic_phi

from conftest import make_rng


def mean_functional(slope):
    a = np.atleast_1d(np.asarray(slope, dtype=float))
    return MeasureFunctional(lambda m: float(a @ m.mean()), name="linear")


half_sq = MeasureFunctional(lambda m: 0.5 * second_moment(m) ** 2, name="half_sigma_sq")
phi_oracle = MeasureFunctional(lambda m: analytic_phi(float(m.mean()[0])), name="phi")


# -----------------------------------------------------------------------------
# Hamiltonian
# -----------------------------------------------------------------------------
def test_hamiltonian_zero_field_is_zero(drift_field, grid11):
    m = uniform_cloud([1.0], 0.5, 12, make_rng(0))
    res = hamiltonian(m, L2Field.constant(m, [0.0]), drift_field, grid11)
    assert res.value == 0.0
    assert res.index == 0  # tie broken to the lowest grid index


def test_hamiltonian_benchmark_branches(drift_field, grid11):
    m = uniform_cloud([1.0], 0.4, 25, make_rng(1))
    mbar = float(m.mean()[0])
    pos = hamiltonian(m, L2Field.constant(m, [2.0]), drift_field, grid11)
    assert pos.value == pytest.approx((-1.0 - mbar) * 2.0, rel=1e-12)
    assert pos.argmin[0] == -1.0
    neg = hamiltonian(m, L2Field.constant(m, [-2.0]), drift_field, grid11)
    assert neg.value == pytest.approx(-mbar * -2.0, rel=1e-12)
    assert neg.argmin[0] == 0.0


def test_hamiltonian_two_point_grid_is_direct_min(drift_field):
    from timeopt.dynamics import ControlGrid
    grid2 = ControlGrid([[-1.0], [0.0]])
    rng = make_rng(2)
    m = uniform_cloud([0.7], 0.5, 10, rng)
    s = L2Field(m, rng.normal(size=(10, 1)))
    vals = [float(m.weights @ (s.vectors * drift_field(m.points, m, u)).sum(axis=1))
            for u in grid2.points]
    assert hamiltonian(m, s, drift_field, grid2).value == min(vals)


def test_hamiltonian_positive_homogeneity(drift_field, grid11):
    rng = make_rng(3)
    for _ in range(100):
        m = uniform_cloud([float(rng.normal())], 0.5, 8, rng)
        s = L2Field(m, rng.normal(size=(8, 1)))
        alpha = float(rng.uniform(0.1, 5.0))
        base = hamiltonian(m, s, drift_field, grid11)
        scaled = hamiltonian(m, s.scale(alpha), drift_field, grid11)
        assert scaled.value == pytest.approx(alpha * base.value, rel=1e-10, abs=1e-12)
        assert scaled.index == base.index


def test_hamiltonian_superadditive(drift_field, grid11):
    rng = make_rng(4)
    for _ in range(50):
        m = uniform_cloud([float(rng.normal())], 0.5, 8, rng)
        s1 = L2Field(m, rng.normal(size=(8, 1)))
        s2 = L2Field(m, rng.normal(size=(8, 1)))
        h12 = hamiltonian(m, s1 + s2, drift_field, grid11).value
        h1 = hamiltonian(m, s1, drift_field, grid11).value
        h2 = hamiltonian(m, s2, drift_field, grid11).value
        assert h12 >= h1 + h2 - 1e-12


def test_hamiltonian_base_mismatch(drift_field, grid11):
    m1 = uniform_cloud([0.0], 1.0, 5, make_rng(5))
    m2 = uniform_cloud([0.0], 1.0, 5, make_rng(6))
    with pytest.raises(BaseMeasureMismatch):
        hamiltonian(m1, L2Field.identity(m2), drift_field, grid11)


# -----------------------------------------------------------------------------
# directional derivatives
# -----------------------------------------------------------------------------
def test_derivative_of_linear_functional_is_exact():
    m = uniform_cloud([0.5, -0.5], 0.7, 15, make_rng(7))
    a, c = np.array([2.0, -1.0]), np.array([0.3, 0.8])
    est = hadamard_derivative(mean_functional(a), m, L2Field.constant(m, c))
    assert est.lower == pytest.approx(float(a @ c), abs=1e-9)
    assert est.upper == pytest.approx(float(a @ c), abs=1e-9)
    for q in est.quotients:  # linear: every quotient equals the derivative
        assert q == pytest.approx(float(a @ c), abs=1e-9)


def test_derivative_of_half_second_moment_along_identity():
    m = uniform_cloud([1.0], 0.6, 20, make_rng(8))
    est = hadamard_derivative(half_sq, m, L2Field.identity(m))
    want = second_moment(m) ** 2
    assert est.lower == pytest.approx(want, rel=1e-3)
    assert est.upper == pytest.approx(want, rel=1e-3)
    assert est.lower <= est.upper


def test_derivative_of_constant_functional_is_zero():
    m = uniform_cloud([0.0], 1.0, 10, make_rng(9))
    const = MeasureFunctional(lambda _: 7.25, name="const")
    est = hadamard_derivative(const, m, L2Field.identity(m))
    assert est.lower == 0.0 and est.upper == 0.0


def test_derivative_domain_error_names_perturbation():
    m = uniform_cloud([0.05], 0.01, 10, make_rng(10))
    guarded = MeasureFunctional(lambda mm: float(mm.mean()[0]),
                                guard=lambda mm: float(mm.mean()[0]) >= 0.0,
                                name="guarded")
    with pytest.raises(DomainError, match="h="):
        hadamard_derivative(guarded, m, L2Field.constant(m, [-1.0]))


# -----------------------------------------------------------------------------
# sub/superdifferential membership
# -----------------------------------------------------------------------------
def test_linear_functional_slope_in_both_differentials():
    m = uniform_cloud([0.3, 0.1], 0.5, 12, make_rng(11))
    a = np.array([1.5, -0.7])
    s = L2Field.constant(m, a)
    dirs = default_directions(m)
    sub = subdifferential_test(mean_functional(a), m, s, dirs)
    sup = superdifferential_test(mean_functional(a), m, s, dirs)
    assert sub.passed and sup.passed
    for chk in sub.checks:  # linear case: inner product equals the derivative
        assert abs(chk.inner - chk.lower) <= 1e-8


def test_smooth_quadratic_passes_both_sides(drift_field, grid11):
    m = uniform_cloud([0.8], 0.5, 15, make_rng(12))
    s = L2Field.identity(m)
    dirs = default_directions(m, drift_field, grid11)
    assert subdifferential_test(half_sq, m, s, dirs).passed
    assert superdifferential_test(half_sq, m, s, dirs).passed


def test_kink_fails_subdifferential_test():
    # -second_moment has a kink at a point mass: the lower derivative along a
    # constant direction is -|c| < 0 = <s, F>
    d0 = EmpiricalMeasure.dirac([0.0])
    neg_sigma = MeasureFunctional(lambda m: -second_moment(m), name="-sigma")
    s0 = L2Field.constant(d0, [0.0])
    rep = subdifferential_test(neg_sigma, d0, s0, [("c", L2Field.constant(d0, [1.0]))])
    assert not rep.passed
    assert rep.worst_margin < -0.9  # lower derivative is -1


def test_subdifferential_sum_rule():
    m = uniform_cloud([0.4], 0.5, 12, make_rng(13))
    a = np.array([2.0])
    phi1, s1 = mean_functional(a), L2Field.constant(m, a)
    phi2, s2 = half_sq, L2Field.identity(m)
    phi_sum = MeasureFunctional(lambda mm: phi1(mm) + phi2(mm), name="sum")
    dirs = default_directions(m)
    assert subdifferential_test(phi1, m, s1, dirs).passed
    assert subdifferential_test(phi2, m, s2, dirs).passed
    assert subdifferential_test(phi_sum, m, s1 + s2, dirs).passed


# -----------------------------------------------------------------------------
# Dirichlet residuals
# -----------------------------------------------------------------------------
def test_oracle_residuals_vanish_at_smooth_points(drift_field, bench):
    rng = make_rng(14)
    fine = bench.control_grid(101)
    for _ in range(50):
        m = uniform_cloud([float(rng.uniform(0.02, 3.0))], 0.3, 20, rng)
        mbar = float(m.mean()[0])
        s = L2Field.constant(m, [1.0 / (1.0 + mbar) ** 2])
        sup = supersolution_residual(phi_oracle, m, s, drift_field, fine)
        sub = subsolution_residual(phi_oracle, m, s, drift_field, fine)
        assert abs(sup) <= 1e-8
        assert abs(sub) <= 1e-8


def test_oracle_residual_identity_at_high_precision():
    # (-1 - m)/(1 + m)^2 + 1 - m/(1 + m) == 0, re-verified at 50 digits
    import mpmath
    with mpmath.workdps(50):
        for mean in ("0.5", "1", "2"):
            mbar = mpmath.mpf(mean)
            residual = (-1 - mbar) / (1 + mbar) ** 2 + 1 - mbar / (1 + mbar)
            assert abs(residual) < mpmath.mpf("1e-45")


def test_constant_one_with_zero_gradient_is_stationary(drift_field, grid11):
    # phi = 1 is the transform of an unreachable point; H(m, 0) = 0
    m = uniform_cloud([-0.5], 0.3, 10, make_rng(15))
    one = MeasureFunctional(lambda _: 1.0)
    s0 = L2Field.constant(m, [0.0])
    assert supersolution_residual(one, m, s0, drift_field, grid11) == 0.0


def test_zero_function_is_not_a_supersolution(drift_field, grid11):
    m = uniform_cloud([0.5], 0.3, 10, make_rng(16))
    zero = MeasureFunctional(lambda _: 0.0)
    s0 = L2Field.constant(m, [0.0])
    res = supersolution_residual(zero, m, s0, drift_field, grid11)
    assert res == 1.0  # violates the <= 0 requirement
    assert subsolution_residual(zero, m, s0, drift_field, grid11) >= 0.0


def test_out_of_range_value_fails_subsolution(drift_field, grid11):
    m = uniform_cloud([0.5], 0.3, 10, make_rng(17))
    two = MeasureFunctional(lambda _: 2.0)
    s0 = L2Field.constant(m, [0.0])
    assert subsolution_residual(two, m, s0, drift_field, grid11) == -1.0
