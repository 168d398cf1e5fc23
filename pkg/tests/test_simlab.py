"""Data-generating scenarios, covariate surfaces, and scoring metrics."""

import math

import numpy as np
import pytest
from scipy import stats

from transreg.simlab import (
    SCENARIO_KINDS,
    DataScenario,
    coverage,
    covariate_surfaces,
    crps,
    gaussian_logpdf_draws,
    gaussian_reference_fit,
    gen_residuals,
    kld,
    mad,
    simulate_dataset,
    waic,
)


def test_scenario_validation():
    with pytest.raises(ValueError):
        DataScenario("cauchy", 100)
    with pytest.raises(ValueError):
        DataScenario("gaussian", -1)
    DataScenario("gaussian", 0)  # empty datasets are allowed


@pytest.mark.parametrize("kind", SCENARIO_KINDS)
def test_residuals_are_standardized(kind):
    n = 40_000
    r, pdf, cdf = gen_residuals(DataScenario(kind, n, seed=5), np.random.default_rng(5))
    assert r.shape == (n,)
    assert abs(np.mean(r)) < 4.0 / math.sqrt(n) * max(1.0, np.std(r))
    assert abs(np.var(r) - 1.0) < 10.0 / math.sqrt(n)
    # the analytic cdf matches the empirical one
    ks = stats.kstest(r, lambda t: np.asarray(cdf(t)))
    assert ks.statistic < 2.5 / math.sqrt(n)
    # pdf integrates to ~1 (the arcsine case has integrable endpoint
    # singularities, so the trapezoid rule converges slowly there)
    grid = np.linspace(-8, 8, 4001)
    dens = np.asarray(pdf(grid))
    tol = 0.02 if kind == "ushaped" else 2e-3
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=tol)


def test_skewnorm_matches_scipy(oracles):
    alpha = oracles["skewnorm_moments"]["alpha"]
    m = oracles["skewnorm_moments"]["mean"]
    s = math.sqrt(oracles["skewnorm_moments"]["var"])
    _, pdf, cdf = gen_residuals(DataScenario("skewnorm", 10, seed=0), np.random.default_rng(0))
    t = np.linspace(-3, 3, 31)
    # un-standardize: r = (z - m)/s with z ~ skewnorm(alpha)
    np.testing.assert_allclose(pdf(t), s * stats.skewnorm.pdf(s * t + m, alpha), atol=1e-12)
    np.testing.assert_allclose(cdf(t), stats.skewnorm.cdf(s * t + m, alpha), atol=1e-12)


def test_mixture_moments_match_oracle(oracles):
    # the generator standardizes with these closed-form moments
    assert oracles["mixture_moments"]["mean"] == -0.5
    assert oracles["mixture_moments"]["var"] == 2.875
    r, pdf, _ = gen_residuals(DataScenario("mixture", 50_000, seed=1), np.random.default_rng(1))
    # bimodality survives standardization: density dips between the modes
    grid = np.linspace(-3, 3, 601)
    dens = np.asarray(pdf(grid))
    peaks = (dens[1:-1] > dens[:-2]) & (dens[1:-1] > dens[2:])
    assert peaks.sum() == 2


def test_ushaped_cdf_is_arcsine():
    _, pdf, cdf = gen_residuals(DataScenario("ushaped", 10, seed=0), np.random.default_rng(0))
    s = math.sqrt(0.125)
    t = np.linspace(-1.3, 1.3, 21)
    ref = stats.beta(0.5, 0.5).cdf(s * t + 0.5)
    np.testing.assert_allclose(cdf(t), ref, atol=1e-12)


def test_surfaces_reference_points():
    x = np.array([0.0, 1.0, 2.0, 0.2, -2.0])
    np.testing.assert_allclose(covariate_surfaces(x, 1), x)
    assert covariate_surfaces(np.array([2.0]), 2)[0] == pytest.approx(2.0 + 16.0 / 5.5)
    # s3(1) = -1 + pi sin(pi) = -1
    assert covariate_surfaces(np.array([1.0]), 3)[0] == pytest.approx(-1.0, abs=1e-12)
    s4 = covariate_surfaces(np.array([0.2]), 4)[0]
    ref = 0.1 + 15.0 * stats.norm.pdf(0.0) - stats.norm.pdf(0.6)
    assert s4 == pytest.approx(ref, abs=1e-12)
    with pytest.raises(ValueError):
        covariate_surfaces(x, 5)


def test_simulate_unconditional_frame():
    frame, pdf, cdf = simulate_dataset(DataScenario("skewnorm", 200, seed=9))
    assert list(frame.columns) == ["y", "r"]
    np.testing.assert_array_equal(frame["y"], frame["r"])
    assert callable(pdf) and callable(cdf)


def test_simulate_conditional_frame():
    frame, _, _ = simulate_dataset(DataScenario("gaussian", 300, seed=9), surface=3)
    assert set(frame.columns) == {"y", "x", "mu", "log_sigma", "r"}
    np.testing.assert_allclose(frame["mu"], covariate_surfaces(frame["x"].values, 3))
    np.testing.assert_allclose(frame["log_sigma"], 0.1 * frame["mu"])
    recon = frame["mu"] + np.exp(frame["log_sigma"]) * frame["r"]
    np.testing.assert_allclose(frame["y"], recon, atol=1e-12)
    assert np.all(np.abs(frame["x"]) <= 2.0)


def test_simulate_same_seed_reproduces():
    a, _, _ = simulate_dataset(DataScenario("mixture", 100, seed=4), surface=1)
    b, _, _ = simulate_dataset(DataScenario("mixture", 100, seed=4), surface=1)
    np.testing.assert_array_equal(a.values, b.values)


# ---------------------------------------------------------------------------
# Metrics


def test_kld_zero_for_truth(rng):
    pts = rng.normal(size=500)
    lf = stats.norm.logpdf(pts)
    assert kld(stats.norm.logpdf, np.tile(lf, (20, 1)), pts) == pytest.approx(0.0, abs=1e-12)


def test_kld_gaussian_shift_matches_oracle(oracles, rng):
    # KL(N(0,1) || N(shift,1)) = shift^2 / 2, estimated at draws from truth
    shift = oracles["kld_gaussian_shift"]["shift"]
    pts = rng.normal(size=400_000)
    lhat = stats.norm.logpdf(pts, loc=shift)[None, :]
    got = kld(stats.norm.logpdf, lhat, pts)
    assert got == pytest.approx(oracles["kld_gaussian_shift"]["kld"], abs=5e-4)


def test_mad_constant_offset(rng):
    pts = rng.normal(size=100)
    f = stats.norm.cdf(pts)
    est = np.tile(f, (7, 1)) + 0.03
    assert mad(stats.norm.cdf, est, pts) == pytest.approx(0.03, abs=1e-12)


def test_crps_point_forecast_is_absolute_error():
    assert crps(np.array([1.7]), 0.5) == pytest.approx(1.2, abs=1e-14)


def test_crps_gaussian_matches_closed_form(oracles, rng):
    draws = rng.standard_normal(100_000)
    ref = oracles["crps_gaussian_y0"]
    assert crps(draws, 0.0) == pytest.approx(ref, rel=0.01)
    assert crps(draws, 0.0, method="quantile") == pytest.approx(ref, rel=0.05)
    with pytest.raises(ValueError, match="unknown CRPS method"):
        crps(draws, 0.0, method="energy")


def test_crps_methods_agree(rng):
    draws = rng.normal(1.0, 2.0, 20_000)
    a = crps(draws, 0.3)
    b = crps(draws, 0.3, method="quantile")
    assert b == pytest.approx(a, rel=0.05)


def test_waic_identical_draws_has_zero_penalty(rng):
    ld = np.tile(stats.norm.logpdf(rng.normal(size=50)), (10, 1))
    lppd = ld[0].sum()
    assert waic(ld) == pytest.approx(-2.0 * lppd, abs=1e-8)


def test_waic_rejects_single_draw():
    with pytest.raises(ValueError):
        waic(np.zeros((1, 10)))


def test_coverage_basics(rng):
    truth = np.zeros(2000)
    draws = rng.normal(size=(5000, 2000))
    cov, width = coverage(truth, draws, level=0.90)
    assert cov == pytest.approx(1.0)  # truth at the center of every interval
    assert width == pytest.approx(2 * 1.645, abs=0.05)
    cov_far, _ = coverage(truth + 100.0, draws)
    assert cov_far == 0.0


def test_coverage_calibrated_intervals(rng):
    # truth drawn from the same distribution as the draws: coverage ~ level
    truth = rng.normal(size=3000)
    draws = rng.normal(size=(2000, 3000))
    cov, _ = coverage(truth, draws, level=0.8)
    assert cov == pytest.approx(0.8, abs=0.03)


def test_gaussian_reference_fit_recovers_moments(rng):
    y = rng.normal(3.0, 2.0, 400)
    mu_d, sig_d = gaussian_reference_fit(y, 20_000, rng)
    assert mu_d.shape == sig_d.shape == (20_000,)
    assert np.mean(mu_d) == pytest.approx(np.mean(y), abs=0.01)
    assert np.mean(sig_d) == pytest.approx(np.std(y, ddof=1), rel=0.02)
    # posterior sd of mu ~ s/sqrt(n)
    assert np.std(mu_d) == pytest.approx(np.std(y, ddof=1) / 20.0, rel=0.05)


def test_gaussian_logpdf_draws_shape(rng):
    mat = gaussian_logpdf_draws(np.array([0.0, 1.0]), np.array([1.0, 2.0]), np.array([0.0, 0.5, 1.0]))
    assert mat.shape == (2, 3)
    np.testing.assert_allclose(mat[0], stats.norm.logpdf([0.0, 0.5, 1.0]))
    np.testing.assert_allclose(mat[1], stats.norm.logpdf([0.0, 0.5, 1.0], loc=1.0, scale=2.0))
