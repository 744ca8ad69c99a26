import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from multicure.frailty import (
    FrailtySurvival,
    LagDistribution,
    QuadratureError,
    QuadratureSpec,
    box_probability,
    full_density,
    integrate_1d,
    joint_survival,
    lag_cdf,
    median_lag,
    neg_partial_density,
    stable_laplace,
)
from multicure.simulator import draw_frailty_stable

import oracles

rates_st = st.floats(0.01, 3.0)
alpha_st = st.floats(0.05, 1.0)
y_st = st.floats(0.0, 20.0)


def fs2(r1, r2, a, trunc=None):
    return FrailtySurvival.exponential((r1, r2), a, trunc)


# ---------------------------------------------------------------- laplace


def test_stable_laplace_examples():
    assert stable_laplace(0.0, 0.5) == 1.0
    for a in (0.1, 0.5, 0.9, 1.0):
        assert stable_laplace(1.0, a) == pytest.approx(math.exp(-1.0), rel=1e-15)
    assert stable_laplace(1.4, 0.9) == pytest.approx(math.exp(-(1.4 ** 0.9)), rel=1e-15)


def test_stable_laplace_matches_frailty_monte_carlo():
    rng = np.random.default_rng(11)
    z = oracles.stable_draws(0.9, 10**6, rng)
    v = np.exp(-1.4 * z)
    se = v.std() / math.sqrt(v.size)
    assert abs(v.mean() - stable_laplace(1.4, 0.9)) < 4 * se


@pytest.mark.parametrize("s,a", [(-0.1, 0.5), (1.0, 0.0), (1.0, 1.2)])
def test_stable_laplace_domain(s, a):
    with pytest.raises(ValueError):
        stable_laplace(s, a)


# ---------------------------------------------------------------- survival


def test_joint_survival_examples():
    assert joint_survival(fs2(0.5, 2.0, 1.0), (1, 1)) == pytest.approx(math.exp(-0.5) * math.exp(-2.0), rel=1e-14)
    assert joint_survival(fs2(0.7, 0.7, 0.9), (1, 1)) == pytest.approx(math.exp(-(1.4 ** 0.9)), rel=1e-14)
    assert joint_survival(fs2(0.7, 0.7, 0.3), (0, 0)) == 1.0


def test_joint_survival_frailty_monte_carlo():
    rng = np.random.default_rng(5)
    z = draw_frailty_stable(0.9, rng, 10**6)
    # conditional survival of both lags given z is exp(-z * 1.4)
    v = np.exp(-1.4 * z)
    assert abs(v.mean() - joint_survival(fs2(0.7, 0.7, 0.9), (1, 1))) < 4 * v.std() / 1e3


def test_joint_survival_errors():
    with pytest.raises(ValueError):
        joint_survival(fs2(1, 1, 0.5), (1.0,))
    with pytest.raises(ValueError):
        joint_survival(fs2(1, 1, 0.5), (1.0, -1.0))
    with pytest.raises(ValueError):
        FrailtySurvival.exponential((1.0,), 0.0)
    with pytest.raises(ValueError):
        LagDistribution(-1.0)
    with pytest.raises(ValueError):
        FrailtySurvival(())


@settings(max_examples=200, deadline=None)
@given(rates_st, rates_st, y_st, y_st)
def test_independence_reduction(r1, r2, y1, y2):
    got = joint_survival(fs2(r1, r2, 1.0), (y1, y2))
    want = math.exp(-r1 * y1) * math.exp(-r2 * y2)
    assert got == pytest.approx(want, rel=1e-12, abs=1e-300)


@settings(max_examples=200, deadline=None)
@given(rates_st, rates_st, alpha_st, y_st, y_st, st.floats(0.0, 5.0), st.integers(0, 1))
def test_joint_survival_monotone(r1, r2, a, y1, y2, dy, k):
    f = fs2(r1, r2, a)
    y = [y1, y2]
    z = list(y)
    z[k] += dy
    assert joint_survival(f, z) <= joint_survival(f, y)


# ---------------------------------------------------------------- densities


def test_neg_partial_examples():
    assert neg_partial_density(FrailtySurvival.exponential((0.5,)), (2.0,), 0) == pytest.approx(0.5 * math.exp(-1))
    got = neg_partial_density(fs2(0.7, 0.7, 0.9), (1, 1), 0)
    assert got == pytest.approx(0.9 * 0.7 * 1.4 ** -0.1 * math.exp(-(1.4 ** 0.9)), rel=1e-14)
    assert got == pytest.approx(oracles.fd_neg_partial((0.7, 0.7), (1, 1), 0.9, 0), rel=1e-9)


def test_neg_partial_origin_is_domain_error():
    with pytest.raises(ValueError):
        neg_partial_density(fs2(0.7, 0.7, 0.9), (0, 0), 0)


def test_full_density_examples():
    assert full_density(fs2(1, 1, 1.0), (1, 2)) == pytest.approx(math.exp(-3), rel=1e-14)
    got = full_density(fs2(0.5, 1.05, 0.9), (1, 1))
    assert got == pytest.approx(oracles.fd_mixed((0.5, 1.05), (1, 1), 0.9), rel=1e-5)
    assert full_density(FrailtySurvival.exponential((0.5,)), (2.0,)) == pytest.approx(0.5 * math.exp(-1))
    with pytest.raises(NotImplementedError):
        full_density(FrailtySurvival.exponential((1, 1, 1), 0.5), (1, 1, 1))
    with pytest.raises(ValueError):
        full_density(fs2(1, 1, 0.5), (0, 0))


@settings(max_examples=200, deadline=None)
@given(rates_st, rates_st, alpha_st, st.floats(1e-3, 20), st.floats(1e-3, 20))
def test_densities_nonnegative(r1, r2, a, y1, y2):
    f = fs2(r1, r2, a)
    assert full_density(f, (y1, y2)) >= 0
    assert neg_partial_density(f, (y1, y2), 1) >= 0


def test_full_density_integrates_to_box_mass():
    for r1, r2, a in [(0.7, 0.7, 0.9), (0.5, 1.05, 0.6), (0.02, 0.3, 0.95)]:
        L = 10.0
        mass = integrate.dblquad(lambda y2, y1: full_density(fs2(r1, r2, a), (y1, y2)) if y1 + y2 > 0 else 0.0,
                                 0, L, 0, L, epsabs=1e-12, epsrel=1e-10)[0]
        ie = box_probability(fs2(r1, r2, a), (0, 0), (L, L))
        assert mass == pytest.approx(ie, abs=1e-6)
        # truncated law puts all its mass on the box
        assert box_probability(fs2(r1, r2, a, L), (0, 0), (L, L)) == pytest.approx(1.0, abs=1e-15)


# ---------------------------------------------------------------- lag cdf / median


def test_lag_cdf_examples():
    assert lag_cdf(LagDistribution(0.1), 0.0) == 0.0
    assert lag_cdf(LagDistribution(0.7, 10.0), 10.0) == pytest.approx(1.0, abs=1e-15)
    want = (1 - math.exp(-0.7)) / (1 - math.exp(-7))
    assert lag_cdf(LagDistribution(0.7, 10.0), 1.0) == pytest.approx(want, rel=1e-14)


def test_lag_cdf_matches_rejection_sampling():
    rng = np.random.default_rng(3)
    y = rng.exponential(1 / 0.7, 400000)
    y = y[y <= 10]
    assert np.mean(y <= 1.0) == pytest.approx(lag_cdf(LagDistribution(0.7, 10.0), 1.0), abs=4e-3)


@settings(max_examples=100, deadline=None)
@given(rates_st, st.floats(0, 30), st.floats(0, 5), st.one_of(st.none(), st.floats(1, 15)))
def test_lag_cdf_monotone(r, t, dt, trunc):
    d = LagDistribution(r, trunc)
    assert 0.0 <= lag_cdf(d, t) <= lag_cdf(d, t + dt) <= 1.0


def test_truncated_univariate_density_normalises():
    r, L = 0.35, 10.0
    val = integrate_1d(lambda y: r * math.exp(-r * y) / -math.expm1(-r * L), 0.0, L)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_median_lag_examples():
    assert median_lag(FrailtySurvival.exponential((0.70,))) == pytest.approx(math.log(2) / 0.7)
    assert round(median_lag(FrailtySurvival.exponential((0.70,))), 0) == 1.0
    assert median_lag(FrailtySurvival.exponential((math.log(2),))) == pytest.approx(1.0)
    got = median_lag(FrailtySurvival.exponential((0.5, 1.05), 0.9), 1)
    assert got == pytest.approx(math.log(2) ** (1 / 0.9) / 1.05, rel=1e-12)
    # bisection on the joint survival with the other coordinate at zero
    f = fs2(0.5, 1.05, 0.9)
    lo, hi = 0.0, 10.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if joint_survival(f, (0, mid)) > 0.5 else (lo, mid)
    assert got == pytest.approx(lo, rel=1e-10)


def test_median_lag_truncated_solves_half():
    f = FrailtySurvival.exponential((0.5, 1.05), 0.9, 10.0)
    m = median_lag(f, 0)
    assert box_probability(f, (m, 0), (10, 10)) == pytest.approx(0.5, abs=1e-10)
    m1 = median_lag(FrailtySurvival.exponential((0.02,), 1.0, 10.0))
    assert lag_cdf(LagDistribution(0.02, 10.0), m1) == pytest.approx(0.5, abs=1e-10)


# ---------------------------------------------------------------- quadrature


@pytest.mark.parametrize("method", ["adaptive-simpson", "fixed-gauss-legendre"])
def test_integrate_examples(method):
    spec = QuadratureSpec(method=method)
    assert integrate_1d(lambda x: 1.0, 0, 3, spec) == pytest.approx(3.0, abs=1e-10)
    assert integrate_1d(lambda x: math.exp(-x), 0, 10, QuadratureSpec(method=method, node_count=64)) == \
        pytest.approx(1 - math.exp(-10), rel=1e-8)


def test_integrate_endpoint_singularity_never_evaluated():
    # x**-0.5 on (0, 1) integrates to 2; f(0) would raise
    got = integrate_1d(lambda x: x ** -0.5, 0.0, 1.0, QuadratureSpec(abs_tol=1e-9, rel_tol=1e-9))
    assert got == pytest.approx(2.0, rel=1e-7)


def test_integrate_deterministic():
    f = lambda x: math.sin(3 * x) ** 2 * math.exp(-x)
    assert integrate_1d(f, 0, 7) == integrate_1d(f, 0, 7)


def test_integrate_depth_error_carries_estimate():
    spec = QuadratureSpec(max_depth=4, abs_tol=1e-14, rel_tol=1e-14)
    with pytest.raises(QuadratureError) as err:
        integrate_1d(lambda x: math.sin(50 * x), 0, 3, spec)
    assert math.isfinite(err.value.estimate) and err.value.error > 0


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(method="trapezoid")
    with pytest.raises(ValueError):
        QuadratureSpec(abs_tol=0)
    with pytest.raises(ValueError):
        QuadratureSpec(node_count=4)
