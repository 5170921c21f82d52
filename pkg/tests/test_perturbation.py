import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize

from relsa.distributions import Gumbel, Normal, Triangular, Truncated, Uniform
from relsa.perturbation import (
    ConstraintInfeasibleError,
    DomainError,
    MomentConstraint,
    PolynomialBasis,
    SolverError,
    build_perturbed_density,
    check_feasible,
    kl_divergence,
    likelihood_ratio,
    mean_shift,
    mean_shift_sigma,
    newton_minimize_lagrange,
    psi_normalizer,
    solve_mean_shift,
    solve_variance_shift,
    variance_shift,
)


def _quad(fn, lo, hi, points=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return integrate.quad(fn, lo, hi, points=points, limit=400, epsabs=0, epsrel=1e-11)[0]


def _moments(pd):
    d = pd.base
    lo, hi = d.support.lo, d.support.hi
    pts = [b for b in d.breakpoints if lo < b < hi] or None
    f = lambda x: float(pd.pdf(x))  # noqa: E731
    if math.isfinite(lo) and math.isfinite(hi):
        q = lambda g: _quad(lambda x: g(x) * f(x), lo, hi, pts)  # noqa: E731
    else:
        m = d.mean
        q = lambda g: _quad(lambda x: g(x) * f(x), lo, m) + _quad(lambda x: g(x) * f(x), m, hi)  # noqa: E731
    mass = q(lambda x: 1.0)
    mean = q(lambda x: x) / mass
    var = q(lambda x: (x - mean) ** 2) / mass
    return mass, mean, var


# --- mean shift -------------------------------------------------------------------

def test_normal_mean_shift_closed_form():
    c = solve_mean_shift(Normal(1.0, 2.0), 2.0)
    assert c.lambdas[0] == pytest.approx(0.25, rel=1e-15)
    assert c.psi == pytest.approx(0.25 * 1.0 + 0.5 * 4 * 0.0625, rel=1e-15)


def test_uniform_mean_shift_against_independent_root():
    # coth(λπ)·π - 1/λ = 1 solved directly
    lam_ref = optimize.brentq(lambda l: math.pi / math.tanh(l * math.pi) - 1 / l - 1.0, 1e-3, 10, xtol=1e-15)
    lam = solve_mean_shift(Uniform(-math.pi, math.pi), 1.0).lambdas[0]
    assert lam == pytest.approx(lam_ref, rel=1e-12)
    assert lam == pytest.approx(0.324415, abs=1e-6)


def test_null_mean_shift_gives_zero_multiplier():
    c = solve_mean_shift(Triangular(0.0, 1.0, 4.0), 5.0 / 3.0)
    assert c.lambdas == (0.0,) and c.psi == 0.0 and c.is_null


@pytest.mark.parametrize(
    "dist,delta",
    [
        (Uniform(-math.pi, math.pi), -3.0),
        (Triangular(49.0, 50.0, 51.0), 50.9),
        (Gumbel(1013.0, 558.0), 500.0),
        (Gumbel(1013.0, 558.0), 4000.0),
        (Truncated(Normal(30.0, 7.5), 1.0), 12.0),
        (Truncated(Gumbel(1013.0, 558.0), 0.0), 300.0),
    ],
)
def test_mean_shift_moments_by_independent_quadrature(dist, delta):
    pd = build_perturbed_density(dist, mean_shift(delta))
    mass, mean, _ = _moments(pd)
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert mean == pytest.approx(delta, rel=1e-8)


@pytest.mark.parametrize("delta", [-math.pi, math.pi, 4.0])
def test_mean_outside_open_support_is_infeasible(delta):
    with pytest.raises(ConstraintInfeasibleError):
        solve_mean_shift(Uniform(-math.pi, math.pi), delta)


def test_truncated_normal_mean_shift_matches_closed_form():
    dist = Truncated(Normal(30.0, 7.5), 1.0)
    pd = build_perturbed_density(dist, mean_shift(36.0))
    assert pd.closed_form is not None
    x = np.linspace(1.0, 90.0, 301)
    np.testing.assert_allclose(pd.pdf(x), pd.closed_form.pdf(x), rtol=1e-10, atol=1e-300)


def test_mean_shift_sigma_constraint():
    d = Truncated(Normal(30.0, 7.5), 1.0)
    c = mean_shift_sigma(d, -0.5)
    assert c.value == pytest.approx(d.mean - 0.5 * d.std)


@settings(max_examples=40, deadline=None)
@given(frac=st.floats(0.02, 0.98), idx=st.integers(0, 2))
def test_mean_shift_residual_property(frac, idx):
    dist = [Uniform(-1.0, 3.0), Triangular(0.0, 1.0, 4.0), Triangular(49.0, 50.0, 51.0)][idx]
    lo, hi = dist.support.lo, dist.support.hi
    delta = lo + frac * (hi - lo)
    if abs(delta - dist.mean) < 1e-9:
        return
    c = solve_mean_shift(dist, delta)
    assert dist.tilted_mean(c.lambdas[0]) == pytest.approx(delta, abs=1e-9 * (hi - lo))
    # the multiplier has the sign of the shift
    assert math.copysign(1.0, c.lambdas[0]) == math.copysign(1.0, delta - dist.mean)


@settings(max_examples=25, deadline=None)
@given(d1=st.floats(-2.5, 2.5), d2=st.floats(-2.5, 2.5))
def test_mean_shift_multiplier_is_monotone(d1, d2):
    dist = Uniform(-math.pi, math.pi)
    if abs(d1 - d2) < 1e-6 or min(abs(d1), abs(d2)) < 1e-9:
        return
    l1 = solve_mean_shift(dist, d1).lambdas[0]
    l2 = solve_mean_shift(dist, d2).lambdas[0]
    assert (l1 - l2) * (d1 - d2) > 0


# --- variance shift ---------------------------------------------------------------

def test_normal_variance_shift_closed_form():
    c = solve_variance_shift(Normal(0.0, 1.0), 2.0)
    assert c.lambdas[0] == pytest.approx(0.0, abs=1e-15)
    assert c.lambdas[1] == pytest.approx(0.25, rel=1e-14)
    assert c.psi == pytest.approx(0.5 * math.log(2.0), rel=1e-14)


def test_generic_newton_agrees_with_normal_closed_form():
    g = PolynomialBasis(2).functions()
    res = newton_minimize_lagrange(Normal(0.0, 1.0), [(g[0], 0.0), (g[1], 2.0)])
    np.testing.assert_allclose(res.lambdas, [0.0, 0.25], atol=1e-10)
    assert res.psi == pytest.approx(0.5 * math.log(2.0), abs=1e-10)
    assert res.history[-1] <= 1e-10


@pytest.mark.parametrize(
    "dist,v",
    [
        (Uniform(-math.pi, math.pi), 1.0),
        (Uniform(-math.pi, math.pi), 8.0),
        (Triangular(49.0, 50.0, 51.0), 0.05),
        (Triangular(0.0, 1.0, 4.0), 1.5),
        (Truncated(Normal(30.0, 7.5), 1.0), 20.0),
        (Truncated(Gumbel(1013.0, 558.0), 0.0), 2.0e5),
        (Truncated(Gumbel(1013.0, 558.0), 0.0), 4.0e5),
    ],
)
def test_variance_shift_moments_by_independent_quadrature(dist, v):
    pd = build_perturbed_density(dist, variance_shift(v))
    mass, mean, var = _moments(pd)
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert mean == pytest.approx(dist.mean, abs=1e-7 * dist.std)
    assert var == pytest.approx(v, rel=1e-7)


def test_variance_targets_outside_the_attainable_set():
    with pytest.raises(ConstraintInfeasibleError):
        solve_variance_shift(Uniform(-1.0, 1.0), 1.0)  # max is (m-a)(b-m) = 1
    with pytest.raises(ConstraintInfeasibleError):
        solve_variance_shift(Normal(0.0, 1.0), 0.0)
    with pytest.raises(ConstraintInfeasibleError):
        check_feasible(Triangular(0.0, 1.0, 4.0), variance_shift(-1.0))


def test_variance_increase_for_gumbel_tail_fails_cleanly():
    # exp(λ2 x²) with λ2 > 0 is not integrable against an exponential tail,
    # so a larger variance at fixed mean has no exponential-family solution.
    with pytest.raises(SolverError):
        solve_variance_shift(Truncated(Gumbel(1013.0, 558.0), 0.0), 6.0e5)


def test_newton_reports_unattainable_target():
    g = PolynomialBasis(2).functions()
    with pytest.raises(SolverError):
        newton_minimize_lagrange(Uniform(-1.0, 1.0), [(g[0], 0.0), (g[1], 1.5)])


def test_raw_coefficients_reproduce_the_exponent():
    pd = build_perturbed_density(Triangular(0.0, 1.0, 4.0), variance_shift(1.2))
    raw = pd.coeffs.raw()
    x = np.linspace(0.0, 4.0, 57)
    np.testing.assert_allclose(raw.exponent(x), pd.coeffs.exponent(x), atol=1e-11)


# --- normaliser, weights, KL ----------------------------------------------------------

@pytest.mark.parametrize("lambdas", [[0.4], [0.3, -0.2], [-1.0, 0.1]])
def test_psi_normalizer_against_quad(lambdas):
    d = Triangular(0.0, 1.0, 4.0)
    poly = lambda x: sum(l * x ** (k + 1) for k, l in enumerate(lambdas))  # noqa: E731
    ref = math.log(_quad(lambda x: float(d.pdf(x)) * math.exp(poly(x)), 0.0, 4.0, [1.0]))
    assert psi_normalizer(d, lambdas) == pytest.approx(ref, abs=1e-11)


def test_psi_normalizer_outside_domain():
    with pytest.raises(DomainError):
        psi_normalizer(Gumbel(0.0, 1.0), [1.0])
    assert psi_normalizer(Normal(0.0, 1.0), [0.0, 0.0]) == 0.0


def test_likelihood_ratio_properties():
    d = Uniform(-math.pi, math.pi)
    pd = build_perturbed_density(d, mean_shift(1.0))
    x = np.linspace(-math.pi, math.pi, 11)
    np.testing.assert_allclose(likelihood_ratio(pd, x), pd.pdf(x) / d.pdf(x), rtol=1e-13)
    with pytest.raises(ValueError):
        likelihood_ratio(pd, np.array([4.0]))
    null = build_perturbed_density(d, mean_shift(0.0))
    assert np.all(likelihood_ratio(null, x) == 1.0)


def test_kl_divergence_normal_closed_forms():
    d = Normal(0.0, 1.0)
    assert kl_divergence(build_perturbed_density(d, mean_shift(0.8))) == pytest.approx(0.32, rel=1e-10)
    v = 2.5
    ref = 0.5 * (v - 1 - math.log(v))
    assert kl_divergence(build_perturbed_density(d, variance_shift(v))) == pytest.approx(ref, rel=1e-9)


def test_kl_divergence_is_positive_and_grows_with_shift():
    d = Triangular(49.0, 50.0, 51.0)
    kls = [kl_divergence(build_perturbed_density(d, mean_shift(m))) for m in (50.1, 50.3, 50.6)]
    assert 0 < kls[0] < kls[1] < kls[2]


def test_gaussian_closed_form_agrees_pointwise():
    d = Normal(2.0, 3.0)
    for c in (mean_shift(0.5), variance_shift(4.0)):
        pd = build_perturbed_density(d, c)
        x = np.linspace(-25, 29, 401)
        assert np.max(np.abs(pd.pdf(x) - pd.closed_form.pdf(x))) <= 1e-10


def test_constraint_validation():
    with pytest.raises(ValueError):
        MomentConstraint("quantile", 0.5)
    with pytest.raises(ValueError):
        MomentConstraint("mean_shift", math.inf)
    assert mean_shift(0.0).is_null(Normal(0.0, 1.0))
    assert variance_shift(1.0).is_null(Normal(0.0, 1.0))
    assert not variance_shift(1.1).is_null(Normal(0.0, 1.0))
