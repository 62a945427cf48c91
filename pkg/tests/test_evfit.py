import math

import numpy as np
import pytest
from scipy import stats

from extremis.errors import (
    BudgetExceededError,
    DegenerateSampleError,
    DomainError,
)
from extremis.evfit import (
    EULER_GAMMA,
    ShortTermFit,
    ev_cdf,
    ev_loglik,
    ev_loglik_grad,
    ev_pdf,
    ev_quantile,
    ev_sample,
    fit_mle,
    gaussian_likelihood_approx,
    mcmc_posterior_samples,
)
from extremis.rng import substream


# -- distribution functions ---------------------------------------------------

def test_gumbel_quantile_closed_form():
    # [DERIVED] median of standard Gumbel is -ln(ln 2)
    assert ev_quantile("gumbel", (0.0, 1.0), 0.5) == pytest.approx(
        0.36651292058166435, rel=1e-12
    )
    assert ev_quantile("gumbel", (2.0, 3.0), 0.5) == pytest.approx(
        2.0 + 3.0 * 0.36651292058166435, rel=1e-12
    )


def test_gumbel_matches_scipy():
    params = (1.5, 0.8)
    ref = stats.gumbel_r(loc=1.5, scale=0.8)
    y = np.linspace(-2.0, 8.0, 33)
    np.testing.assert_allclose(ev_cdf("gumbel", params, y), ref.cdf(y), rtol=1e-12)
    np.testing.assert_allclose(ev_pdf("gumbel", params, y), ref.pdf(y), rtol=1e-12)
    p = np.array([0.01, 0.5, 0.99, 0.999999])
    np.testing.assert_allclose(ev_quantile("gumbel", params, p), ref.ppf(p),
                               rtol=1e-10)


def test_gev_matches_scipy():
    # scipy's genextreme uses the opposite shape sign convention
    for gamma in (-0.3, -0.01, 0.01, 0.25):
        params = (1.0, 2.0, gamma)
        ref = stats.genextreme(-gamma, loc=1.0, scale=2.0)
        y = np.linspace(-4.0, 20.0, 41)
        np.testing.assert_allclose(ev_cdf("gev", params, y), ref.cdf(y),
                                   rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(ev_pdf("gev", params, y), ref.pdf(y),
                                   rtol=1e-9, atol=1e-12)
        p = np.array([0.05, 0.5, 0.95])
        np.testing.assert_allclose(ev_quantile("gev", params, p), ref.ppf(p),
                                   rtol=1e-8)


def test_gev_cdf_saturates_outside_support():
    # gamma > 0: lower endpoint at alpha - beta/gamma
    assert ev_cdf("gev", (0.0, 1.0, 0.5), -3.0) == 0.0
    # gamma < 0: upper endpoint at alpha + beta/|gamma|
    assert ev_cdf("gev", (0.0, 1.0, -0.5), 3.0) == 1.0
    assert ev_pdf("gev", (0.0, 1.0, 0.5), -3.0) == 0.0


def test_ev_sample_moments():
    rng = substream(3, "evs")
    y = ev_sample("gumbel", (5.0, 2.0), rng, 200_000)
    assert np.mean(y) == pytest.approx(5.0 + EULER_GAMMA * 2.0, abs=0.02)
    assert np.std(y) == pytest.approx(math.pi * 2.0 / math.sqrt(6.0), rel=0.01)


def test_ev_sample_scalar_and_inverse_cdf_identity():
    rng = substream(4, "evs2")
    v = ev_sample("gumbel", (0.0, 1.0), rng)
    assert isinstance(v, float)
    rng2 = substream(4, "evs2")
    p = rng2.random()
    assert v == pytest.approx(ev_quantile("gumbel", (0.0, 1.0), p), rel=1e-12)


def test_param_validation():
    with pytest.raises(DomainError):
        ev_quantile("gumbel", (0.0, -1.0), 0.5)
    with pytest.raises(DomainError):
        ev_quantile("gumbel", (0.0, 1.0), 1.0)
    with pytest.raises(DomainError):
        ev_cdf("gev", (0.0, 1.0), 0.5)  # missing shape
    with pytest.raises(ValueError):
        ev_quantile("frechet", (0.0, 1.0), 0.5)


# -- likelihood and gradient -----------------------------------------------------

def test_loglik_matches_scipy():
    rng = substream(5, "ll")
    y = ev_sample("gumbel", (2.0, 1.5), rng, 200)
    ll = ev_loglik(np.array([2.0, 1.5]), y, "gumbel")
    assert ll == pytest.approx(np.sum(stats.gumbel_r.logpdf(y, 2.0, 1.5)), rel=1e-12)
    llg = ev_loglik(np.array([2.0, 1.5, 0.1]), y, "gev")
    assert llg == pytest.approx(
        np.sum(stats.genextreme.logpdf(y, -0.1, 2.0, 1.5)), rel=1e-10
    )


def test_loglik_outside_support_is_minus_inf():
    y = np.array([0.0, 1.0, 10.0])
    assert ev_loglik(np.array([0.0, 1.0, -0.2]), y, "gev") == -math.inf
    assert ev_loglik(np.array([0.0, -1.0]), y, "gumbel") == -math.inf


@pytest.mark.parametrize("family,params", [
    ("gumbel", np.array([1.0, 2.0])),
    ("gev", np.array([1.0, 2.0, 0.2])),
    ("gev", np.array([1.0, 2.0, -0.2])),
    ("gev", np.array([1.0, 2.0, 1e-6])),
    ("gev", np.array([1.0, 2.0, 1e-4])),
])
def test_gradient_matches_finite_difference(family, params):
    rng = substream(6, "grad", family, str(len(params)))
    y = ev_sample(family, params, rng, 150)
    g = ev_loglik_grad(params, y, family)
    h = 1e-6
    for j in range(len(params)):
        pp, pm = params.copy(), params.copy()
        pp[j] += h
        pm[j] -= h
        fd = (ev_loglik(pp, y, family) - ev_loglik(pm, y, family)) / (2 * h)
        assert g[j] == pytest.approx(fd, rel=2e-4, abs=1e-5)


# -- MLE ----------------------------------------------------------------------

def test_mle_recovers_gumbel_within_one_percent():
    rng = substream(7, "mle")
    y = ev_sample("gumbel", (10.0, 2.0), rng, 100_000)
    alpha, beta = fit_mle(y, "gumbel")
    assert alpha == pytest.approx(10.0, rel=0.01)
    assert beta == pytest.approx(2.0, rel=0.01)


def test_mle_recovers_gev():
    rng = substream(8, "mle-gev")
    y = ev_sample("gev", (5.0, 1.5, 0.15), rng, 100_000)
    alpha, beta, gamma = fit_mle(y, "gev")
    assert alpha == pytest.approx(5.0, rel=0.01)
    assert beta == pytest.approx(1.5, rel=0.01)
    assert gamma == pytest.approx(0.15, abs=0.01)


def test_mle_matches_scipy_fit():
    rng = substream(9, "mle-x")
    y = ev_sample("gumbel", (3.0, 0.7), rng, 2_000)
    alpha, beta = fit_mle(y, "gumbel")
    a_ref, b_ref = stats.gumbel_r.fit(y)
    assert alpha == pytest.approx(a_ref, rel=1e-4)
    assert beta == pytest.approx(b_ref, rel=1e-4)


def test_mle_small_sample_validation():
    with pytest.raises(DegenerateSampleError):
        fit_mle([1.0, 2.0], "gumbel")
    with pytest.raises(DegenerateSampleError):
        fit_mle([1.0, 1.0, 1.0, 1.0], "gumbel")
    with pytest.raises(DegenerateSampleError):
        fit_mle([1.0, np.nan, 2.0, 3.0], "gumbel")
    with pytest.raises(DegenerateSampleError):
        fit_mle(np.ones(10) * 5.0, "gev")


def test_mle_shape_bounds_respected():
    rng = substream(10, "mle-b")
    y = ev_sample("gev", (0.0, 1.0, 0.45), rng, 5_000)
    _, _, gamma = fit_mle(y, "gev", shape_bounds=(-0.2, 0.2))
    assert -0.2 <= gamma <= 0.2


# -- MCMC -----------------------------------------------------------------------

def test_mcmc_posterior_centres_on_mle():
    rng = substream(11, "mcmc")
    y = ev_sample("gumbel", (4.0, 1.2), substream(11, "mcmc-data"), 400)
    draws = mcmc_posterior_samples(y, "gumbel", 2_000, rng)
    assert draws.shape == (2_000, 2)
    alpha_hat, beta_hat = fit_mle(y, "gumbel")
    # posterior mean within ~3 posterior sds of the MLE
    assert abs(np.mean(draws[:, 0]) - alpha_hat) < 3 * np.std(draws[:, 0])
    assert abs(np.mean(draws[:, 1]) - beta_hat) < 3 * np.std(draws[:, 1])
    assert np.all(draws[:, 1] > 0)


def test_mcmc_posterior_sd_scales_like_fisher():
    # asymptotic sd of the Gumbel location is ~ beta*sqrt(1+6(1-g)^2/pi^2)/sqrt(n)
    y = ev_sample("gumbel", (0.0, 1.0), substream(12, "mcmc-d2"), 900)
    draws = mcmc_posterior_samples(y, "gumbel", 3_000, substream(12, "mcmc-c2"))
    sd_alpha = np.std(draws[:, 0])
    approx = 1.0 / math.sqrt(900) * math.sqrt(1.0 + 6.0 * (1 - EULER_GAMMA) ** 2 / math.pi**2)
    assert sd_alpha == pytest.approx(approx, rel=0.35)


def test_mcmc_deterministic_per_stream():
    y = ev_sample("gumbel", (4.0, 1.2), substream(13, "m-data"), 120)
    a = mcmc_posterior_samples(y, "gumbel", 500, substream(13, "m-chain"))
    b = mcmc_posterior_samples(y, "gumbel", 500, substream(13, "m-chain"))
    np.testing.assert_array_equal(a, b)


# -- Gaussian likelihood approximation ---------------------------------------------

def test_gaussian_approx_basic():
    y = ev_sample("gumbel", (20.0, 3.0), substream(14, "gla-data"), 60)
    fit = gaussian_likelihood_approx(y, "gumbel", rng=substream(14, "gla"))
    assert fit.family == "gumbel"
    assert fit.mean.shape == (2,)
    assert fit.cov.shape == (2, 2)
    assert fit.n_obs == 60
    assert fit.mcmc_draws_used > 0
    assert 0.01 < fit.diagnostics["acceptance_rate"] < 0.99
    alpha_hat, beta_hat = fit_mle(y, "gumbel")
    assert fit.mean[0] == pytest.approx(alpha_hat, abs=3 * math.sqrt(fit.cov[0, 0]))
    assert fit.mean[1] == pytest.approx(beta_hat, abs=3 * math.sqrt(fit.cov[1, 1]))


def test_gaussian_approx_stopping_rule():
    # the documented rule: stop at the first batch k where estimates
    # k-2, k-1, k agree pairwise elementwise within rel_tol
    y = ev_sample("gumbel", (10.0, 2.0), substream(15, "sr-data"), 80)
    fit = gaussian_likelihood_approx(y, "gumbel", rel_tol=0.5,
                                     rng=substream(15, "sr"), batch=500)
    # a loose tolerance stops at the minimum possible three batches
    assert fit.diagnostics["batches"] == 3
    assert fit.mcmc_draws_used == 3 * 500

    tight = gaussian_likelihood_approx(y, "gumbel", rel_tol=0.005,
                                       rng=substream(15, "sr2"), batch=500)
    assert tight.diagnostics["batches"] >= 3
    assert tight.mcmc_draws_used == tight.diagnostics["batches"] * 500


def test_gaussian_approx_budget_error():
    y = ev_sample("gumbel", (10.0, 2.0), substream(16, "bud-data"), 40)
    with pytest.raises(BudgetExceededError, match="after"):
        gaussian_likelihood_approx(y, "gumbel", rel_tol=1e-9, batch=200,
                                   rng=substream(16, "bud"), max_draws=1_000)


def test_gaussian_approx_covariance_shrinks_with_n():
    tr_small = None
    tr_big = None
    y_small = ev_sample("gumbel", (10.0, 2.0), substream(17, "n6"), 6)
    y_big = ev_sample("gumbel", (10.0, 2.0), substream(17, "n90"), 90)
    tr_small = np.trace(
        gaussian_likelihood_approx(y_small, rng=substream(17, "f6")).cov
    )
    tr_big = np.trace(
        gaussian_likelihood_approx(y_big, rng=substream(17, "f90")).cov
    )
    assert tr_big < tr_small


# -- ShortTermFit -------------------------------------------------------------------

def test_short_term_fit_roundtrip(tmp_path):
    fit = ShortTermFit(
        family="gumbel",
        mean=np.array([5.0, 1.0]),
        cov=np.array([[0.1, 0.01], [0.01, 0.05]]),
        n_obs=36,
        mcmc_draws_used=3000,
        diagnostics={"acceptance_rate": 0.3},
    )
    p = tmp_path / "fit.json"
    fit.save(p)
    clone = ShortTermFit.load(p)
    np.testing.assert_array_equal(clone.mean, fit.mean)
    np.testing.assert_array_equal(clone.cov, fit.cov)
    assert clone.family == "gumbel"
    assert clone.n_obs == 36


def test_short_term_fit_validation():
    with pytest.raises(ValueError):
        ShortTermFit("gumbel", np.array([5.0, -1.0]), np.eye(2), 10, 100)
    with pytest.raises(ValueError):
        ShortTermFit("gumbel", np.array([5.0, 1.0]), np.eye(3), 10, 100)
    with pytest.raises(ValueError):
        ShortTermFit("gumbel", np.array([5.0, 1.0]),
                     np.array([[1.0, 0.5], [0.0, 1.0]]), 10, 100)
    with pytest.raises(np.linalg.LinAlgError):
        ShortTermFit("gumbel", np.array([5.0, 1.0]),
                     np.array([[1.0, 2.0], [2.0, 1.0]]), 10, 100)
