import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize, special, stats
from scipy.spatial.distance import cdist

from drifthurdle.errors import FitError, InvalidArgument
from drifthurdle.gpfield import (KrigingModel, MaternParams, _Likelihood, fit_kriging, krige_predict,
                                 matern_correlation, matern_cov, simulate_gp)


def bessel_matern(h, nu, kappa, sigma2):
    """Textbook Matern covariance via scipy's unscaled K_nu."""
    x = kappa * np.asarray(h, dtype=float)
    with np.errstate(invalid="ignore"):
        out = sigma2 * 2 ** (1 - nu) / special.gamma(nu) * x ** nu * special.kv(nu, x)
    return np.where(x == 0, sigma2, out)


def test_zero_distance_is_variance():
    assert matern_cov(0.0, MaternParams(1.0, 10.0, 2.5)) == 2.5


def test_exponential_special_case():
    assert matern_cov(0.4, MaternParams(0.5, 3.0, 2.0)) == pytest.approx(2 * math.exp(-1.2), abs=1e-12)
    # 1.20478 is the same closed form with sigma = 2, i.e. sigma2 = 4
    assert matern_cov(0.4, MaternParams(0.5, 3.0, 4.0)) == pytest.approx(1.20478, abs=1e-5)
    h = np.linspace(0, 10 / 3.0, 100)
    np.testing.assert_allclose(matern_cov(h, MaternParams(0.5, 3.0, 2.0)), 2 * np.exp(-3 * h),
                               atol=1e-10, rtol=0)


def test_range_relation():
    p = MaternParams(1.0, 10.0)
    assert p.range == pytest.approx(math.sqrt(8) / 10)
    assert MaternParams.from_range(1.0, p.range).kappa == pytest.approx(10.0)


@pytest.mark.parametrize("nu", [0.5, 1.0, 1.5, 2.5, 0.3])
def test_matches_bessel_oracle(nu):
    h = np.linspace(1e-4, 2.0, 200)
    np.testing.assert_allclose(matern_cov(h, MaternParams(nu, 4.0, 1.3)),
                               bessel_matern(h, nu, 4.0, 1.3), rtol=1e-10)


@given(st.floats(0.5, 3.0), st.floats(0.1, 50.0))
def test_monotone_and_continuous_at_zero(nu, kappa):
    h = np.linspace(0, 5 / kappa, 400)
    c = matern_cov(h, MaternParams(nu, kappa))
    assert np.all(np.diff(c) <= 1e-15)
    assert matern_cov(1e-12 / kappa, MaternParams(nu, kappa)) == pytest.approx(1.0, abs=1e-5)


def test_negative_distance_rejected():
    with pytest.raises(InvalidArgument):
        matern_cov(-1.0, MaternParams(1.0, 1.0))
    with pytest.raises(InvalidArgument):
        MaternParams(1.0, 0.0)


def test_simulate_single_site_and_variance():
    draws = simulate_gp([[0.3, 0.3]], MaternParams(1.0, 10.0, 2.0), seed=1, size=10_000)
    assert draws.shape == (10_000, 1)
    assert draws.var() == pytest.approx(2.0, rel=0.05)
    assert simulate_gp([[0.0, 0.0]], MaternParams(1.0, 10.0), seed=2).shape == (1,)


def test_correlation_at_range():
    rho = 0.14
    p = MaternParams.from_range(1.0, rho)
    loc = np.array([[0.0, 0.0], [rho, 0.0]])
    draws = simulate_gp(loc, p, seed=3, size=20_000)
    expected = bessel_matern(rho, 1.0, p.kappa, 1.0)
    assert expected == pytest.approx(0.1399, abs=1e-3)
    assert np.corrcoef(draws.T)[0, 1] == pytest.approx(expected, abs=0.05)


def test_sample_covariance_converges():
    rng = np.random.default_rng(5)
    loc = rng.uniform(size=(20, 2))
    p = MaternParams.from_range(1.0, 0.3, 1.5)
    draws = simulate_gp(loc, p, seed=6, size=10_000)
    sigma = matern_cov(cdist(loc, loc), p)
    emp = np.cov(draws.T)
    assert np.linalg.norm(emp - sigma) / np.linalg.norm(sigma) < 0.1


def gls_loglik_oracle(dist, y, nu, s2, kappa, nug):
    k = s2 * matern_correlation(dist, nu, kappa) + nug * np.eye(len(dist))
    kinv = np.linalg.inv(k)
    ones = np.ones(len(dist))
    beta = np.sum(ones @ kinv @ y.T) / (len(y) * ones @ kinv @ ones)
    return sum(stats.multivariate_normal(np.full(len(dist), beta), k).logpdf(r) for r in y), beta


def test_likelihood_and_gradient_against_oracles():
    rng = np.random.default_rng(8)
    loc = rng.uniform(size=(30, 2))
    d = cdist(loc, loc)
    y = rng.normal(size=(3, 30))
    lik = _Likelihood(d, y, 1.0)
    theta = np.log([0.8, 6.0, 0.2])
    ll, g, beta = lik.evaluate(theta)
    ref, ref_beta = gls_loglik_oracle(d, y, 1.0, *np.exp(theta))
    assert ll == pytest.approx(ref, rel=1e-10)
    assert beta == pytest.approx(ref_beta, rel=1e-10)
    fd = optimize.approx_fprime(theta, lambda t: lik.evaluate(t, grad=False)[0], 1e-6)
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-5)


def field_data(n=200, rho=0.2, sigma=1.0, eps=0.05, seed=0, beta0=2.0):
    rng = np.random.default_rng(seed)
    loc = rng.uniform(size=(n, 2))
    f = simulate_gp(loc, MaternParams.from_range(1.0, rho, sigma ** 2), seed=rng)
    return loc, beta0 + f + eps * rng.standard_normal(n)


def test_fit_is_permutation_invariant():
    loc, y = field_data(120, seed=1)
    a = fit_kriging(loc, y)
    perm = np.random.default_rng(2).permutation(len(y))
    b = fit_kriging(loc[perm], y[perm])
    assert b.kappa == pytest.approx(a.kappa, rel=1e-4)
    assert b.sigma2 == pytest.approx(a.sigma2, rel=1e-4)
    assert b.beta0 == pytest.approx(a.beta0, rel=1e-4, abs=1e-6)


def test_scaling_data_scales_sigma_only():
    loc, y = field_data(120, seed=4)
    a = fit_kriging(loc, y)
    b = fit_kriging(loc, 7.0 * y)
    assert b.kappa == pytest.approx(a.kappa, rel=1e-4)
    assert math.sqrt(b.sigma2) == pytest.approx(7 * math.sqrt(a.sigma2), rel=1e-4)


def test_constant_data_collapses_field():
    loc = np.random.default_rng(3).uniform(size=(40, 2))
    try:
        model = fit_kriging(loc, np.full(40, 3.25))
    except FitError as exc:
        model = exc.best
    assert model.beta0 == pytest.approx(3.25, abs=1e-8)
    assert model.sigma2 < 1e-4


def test_too_few_sites_and_bad_values():
    with pytest.raises(InvalidArgument):
        fit_kriging(np.zeros((5, 2)) + np.arange(5)[:, None], np.ones(5))
    loc = np.random.default_rng(0).uniform(size=(20, 2))
    with pytest.raises(InvalidArgument):
        fit_kriging(loc, np.r_[np.ones(19), np.nan])


def fixed_model(loc, y, nugget, sigma2=1.0, kappa=10.0, beta0=0.0):
    return KrigingModel(loc, np.atleast_2d(y), 1.0, beta0, sigma2, kappa, nugget, 0.0, True)


def test_interpolates_with_tiny_nugget():
    loc, y = field_data(60, seed=5, eps=0.0)
    model = fixed_model(loc, y, 1e-8, beta0=float(y.mean()))
    mean, sd = krige_predict(model, loc)
    np.testing.assert_allclose(mean, y, atol=1e-4)
    assert np.all(sd >= 0)


def test_reverts_to_prior_far_away():
    loc, y = field_data(60, seed=6)
    model = fixed_model(loc, y, 0.01, sigma2=1.7, beta0=2.0)
    mean, sd = krige_predict(model, [[50.0, 50.0]])
    assert mean[0] == pytest.approx(2.0, abs=1e-10)
    assert sd[0] == pytest.approx(math.sqrt(1.7), rel=1e-10)


@given(st.integers(0, 2 ** 32 - 1))
def test_predictive_variance_bounded(seed):
    rng = np.random.default_rng(seed)
    loc = rng.uniform(size=(25, 2))
    model = fixed_model(loc, rng.normal(size=25), 0.05, sigma2=0.8)
    _, sd = krige_predict(model, rng.uniform(-0.5, 1.5, size=(40, 2)))
    assert np.all(sd >= 0)
    assert np.all(sd ** 2 <= 0.8 + 0.05 + 1e-12)
