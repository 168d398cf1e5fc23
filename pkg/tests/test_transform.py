"""Monotone slope-normalized transformation: invariants and oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from transreg.splinecore import GeometryError
from transreg.transform import (
    average_slope,
    deriv_batch,
    forward_batch,
    identity_params,
    inverse_batch,
    make_config,
    refresh_cache,
    second_deriv_batch,
    with_lambda,
)


@pytest.fixture(scope="module")
def cfg():
    return make_config(n_bases=16)


def test_default_geometry():
    c = make_config()
    assert (c.grid.a, c.grid.b, c.grid.n_bases) == (-4.0, 4.0, 31)
    assert c.lam == pytest.approx(0.8)
    assert c.mode == "smooth"
    assert c.n_coef == 30


def test_lambda_sentinels():
    assert make_config(lam=0.0).mode == "identity_tails"
    assert make_config(lam=np.inf).mode == "linear_tails"
    assert with_lambda(make_config(), 0.0).mode == "identity_tails"


def test_oracle_values(oracles):
    for key in ("transform_fixed", "transform_fixed_2"):
        o = oracles[key]
        c = make_config(a=o["a"], b=o["b"], n_bases=o["n_bases"], lam=o["lam"])
        p = refresh_cache(np.array(o["delta"]), c)
        h = forward_batch(np.array(o["points"]), p, c, exact=True)
        np.testing.assert_allclose(h, o["h"], atol=1e-12)
        assert p.s == pytest.approx(o["s"], abs=1e-12)
        assert p.slope_a == pytest.approx(o["slope_a"], abs=1e-12)
        assert p.slope_b == pytest.approx(o["slope_b"], abs=1e-12)


def test_average_slope_examples(oracles):
    o = oracles["avg_slope_constant"]
    c = make_config(a=o["a"], b=o["b"], n_bases=o["n_bases"])
    assert average_slope(np.zeros(c.n_coef), c.grid) == pytest.approx(o["value"], abs=1e-14)
    rng = np.random.default_rng(5)
    d = rng.normal(size=c.n_coef)
    ratio = average_slope(d + 0.7, c.grid) / average_slope(d, c.grid)
    assert ratio == pytest.approx(np.exp(0.7), rel=1e-12)


def test_identity_when_delta_constant(cfg):
    grid = np.linspace(-7, 7, 1001)
    for const in (0.0, -1.3, 2.2):
        p = refresh_cache(np.full(cfg.n_coef, const), cfg)
        np.testing.assert_allclose(forward_batch(grid, p, cfg), grid, atol=1e-8)
        assert np.max(np.abs(forward_batch(grid, identity_params(cfg), cfg) - grid)) < 1e-8


def test_boundary_anchoring(cfg, rng):
    ab = np.array([cfg.grid.a, cfg.grid.b])
    for _ in range(20):
        p = refresh_cache(rng.normal(0, 1.5, cfg.n_coef), cfg)
        np.testing.assert_allclose(forward_batch(ab, p, cfg), ab, atol=1e-8)
        np.testing.assert_allclose(forward_batch(ab, p, cfg, exact=True), ab, atol=1e-10)


def test_shift_cancellation(cfg, rng):
    grid = np.linspace(-6, 6, 301)
    d = rng.normal(size=cfg.n_coef)
    h0 = forward_batch(grid, refresh_cache(d, cfg), cfg)
    for eta in (-4.0, 0.3, 7.0):
        h1 = forward_batch(grid, refresh_cache(d + eta, cfg), cfg)
        np.testing.assert_allclose(h1, h0, atol=1e-10)


@pytest.mark.parametrize("lam", [None, 0.0, np.inf])
def test_monotone_and_c1(lam, rng):
    c = make_config(n_bases=16, lam=lam)
    lam_hat = c.lam if np.isfinite(c.lam) else 0.8
    grid = np.linspace(c.grid.a - 2 * lam_hat, c.grid.b + 2 * lam_hat, 2001)
    for _ in range(10):
        p = refresh_cache(rng.normal(0, 1.2, c.n_coef), c)
        h = forward_batch(grid, p, c)
        assert np.all(np.diff(h) > 0)
        assert np.all(deriv_batch(grid, p, c) > 0)


@pytest.mark.parametrize("lam", [None, 0.0, np.inf])
def test_derivative_matches_fd(lam, rng):
    c = make_config(n_bases=16, lam=lam)
    p = refresh_cache(rng.normal(0, 1.0, c.n_coef), c)
    pts = rng.uniform(c.grid.a - 1.5, c.grid.b + 1.5, 400)
    if c.mode == "identity_tails":
        # keep clear of the slope kink at the boundary
        pts = pts[(np.abs(pts - c.grid.a) > 1e-4) & (np.abs(pts - c.grid.b) > 1e-4)]
    eps = 1e-5
    fd = (forward_batch(pts + eps, p, c, exact=True) - forward_batch(pts - eps, p, c, exact=True)) / (2 * eps)
    d = deriv_batch(pts, p, c, exact=True)
    np.testing.assert_allclose(d, fd, rtol=1e-6)


def test_second_derivative_matches_fd(cfg, rng):
    p = refresh_cache(rng.normal(0, 1.0, cfg.n_coef), cfg)
    # stay away from knots (h'' kinks there) and the transition joins
    pts = cfg.grid.knots[3:-4][:, None] + cfg.grid.d * np.array([0.25, 0.5, 0.75])[None, :]
    pts = pts.ravel()
    eps = 1e-5
    fd = (deriv_batch(pts + eps, p, cfg, exact=True) - deriv_batch(pts - eps, p, cfg, exact=True)) / (2 * eps)
    np.testing.assert_allclose(second_deriv_batch(pts, p, cfg), fd, rtol=1e-5, atol=1e-8)


def test_tails_have_unit_slope_and_zero_curvature(cfg, rng):
    p = refresh_cache(rng.normal(0, 1.0, cfg.n_coef), cfg)
    far = np.array([cfg.grid.a - 5.0, cfg.grid.b + 5.0])
    np.testing.assert_allclose(deriv_batch(far, p, cfg), 1.0, atol=1e-12)
    np.testing.assert_allclose(second_deriv_batch(far, p, cfg), 0.0, atol=1e-12)


def test_inverse_roundtrip(rng):
    for lam in (None, 0.0, np.inf):
        c = make_config(n_bases=16, lam=lam)
        p = refresh_cache(rng.normal(0, 1.0, c.n_coef), c)
        r = rng.uniform(-7, 7, 200)
        z = forward_batch(r, p, c)
        np.testing.assert_allclose(inverse_batch(z, p, c), r, atol=1e-8)


def test_inverse_scalar_extremes(cfg, rng):
    p = refresh_cache(rng.normal(0, 1.0, cfg.n_coef), cfg)
    z = np.array([-30.0, 30.0])
    r = inverse_batch(z, p, cfg)
    np.testing.assert_allclose(forward_batch(r, p, cfg), z, atol=1e-8)


def test_bad_geometry():
    with pytest.raises(GeometryError):
        make_config(a=2.0, b=-2.0)
    with pytest.raises(GeometryError):
        make_config(lam=-0.5)


@settings(max_examples=40, deadline=None)
@given(
    delta=arrays(np.float64, 15, elements=st.floats(-3, 3, allow_nan=False)),
    r=st.floats(min_value=-8, max_value=8, allow_nan=False),
)
def test_forward_is_strictly_increasing_property(delta, r):
    c = make_config(n_bases=16)
    p = refresh_cache(delta, c)
    h1, h2 = forward_batch(np.array([r, r + 1e-3]), p, c)
    assert h2 > h1
