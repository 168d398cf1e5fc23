"""Leapfrog integrator, adaptation pieces, and the NUTS kernel itself."""

import math

import numpy as np
import pytest

from transreg.nuts import (
    DualAveraging,
    NutsConfig,
    NutsKernel,
    WarmupSchedule,
    WelfordVar,
    find_reasonable_epsilon,
    leapfrog,
)


def _std_normal(q):
    return -0.5 * float(q @ q), -q


def test_leapfrog_reverses(rng):
    q = rng.normal(size=4)
    p = rng.normal(size=4)
    inv_mass = np.array([1.0, 0.5, 2.0, 1.3])
    logp, grad = _std_normal(q)
    q1, p1, logp1, grad1 = leapfrog(q, p, grad, 0.1, inv_mass, _std_normal)
    # integrate back with flipped momentum
    q2, p2, _, _ = leapfrog(q1, -p1, grad1, 0.1, inv_mass, _std_normal)
    np.testing.assert_allclose(q2, q, atol=1e-12)
    np.testing.assert_allclose(-p2, p, atol=1e-12)


def test_leapfrog_energy_error_scales_with_eps(rng):
    q = rng.normal(size=3)
    p = rng.normal(size=3)
    inv_mass = np.ones(3)

    def energy_drift(eps, n_steps):
        qq, pp = q.copy(), p.copy()
        logp, grad = _std_normal(qq)
        h0 = -logp + 0.5 * float(pp @ pp)
        for _ in range(n_steps):
            qq, pp, logp, grad = leapfrog(qq, pp, grad, eps, inv_mass, _std_normal)
        return abs(-logp + 0.5 * float(pp @ pp) - h0)

    # halving the step size over a fixed time span cuts the error ~4x
    coarse = energy_drift(0.2, 50)
    fine = energy_drift(0.1, 100)
    assert fine < coarse / 2.5


def test_dual_averaging_converges_to_target():
    da = DualAveraging(eps0=1.0, target=0.8)
    eps = 1.0
    for _ in range(2000):
        # toy response curve: acceptance falls as the step grows
        accept = min(1.0, math.exp(-2.0 * (eps - 0.3)))
        eps = da.update(accept)
    final = min(1.0, math.exp(-2.0 * (da.adapted_eps - 0.3)))
    assert final == pytest.approx(0.8, abs=0.05)


def test_dual_averaging_restart():
    da = DualAveraging(eps0=1.0, target=0.8)
    for _ in range(50):
        da.update(0.2)
    da.restart(0.5)
    assert da.eps == pytest.approx(0.5)


def test_welford_matches_numpy(rng):
    xs = rng.normal(2.0, 3.0, size=(500, 4))
    w = WelfordVar(4)
    for x in xs:
        w.push(x)
    np.testing.assert_allclose(w.mean, xs.mean(axis=0), atol=1e-10)
    np.testing.assert_allclose(w.variance(), xs.var(axis=0, ddof=1), rtol=1e-10)
    reg = w.regularized()
    assert np.all(reg > 0)
    np.testing.assert_allclose(reg, w.variance(), rtol=0.02)


def test_welford_degenerate_returns_ones():
    w = WelfordVar(3)
    w.push(np.zeros(3))
    np.testing.assert_array_equal(w.variance(), 1.0)


def test_warmup_schedule_windows():
    s = WarmupSchedule(1000)
    assert not s.collecting(10)  # init buffer
    assert s.collecting(75)
    assert s.collecting(949)
    assert not s.collecting(950)  # term buffer
    # doubling windows 25, 50, 100, ... with remainder absorbed
    ends = sorted(s.window_ends)
    assert ends[0] == 100
    assert ends[1] == 150
    assert ends[-1] == 950
    sizes = np.diff([75] + ends)
    assert all(b >= a for a, b in zip(sizes, sizes[1:]))


def test_warmup_schedule_short_run_still_valid():
    s = WarmupSchedule(60)
    assert s.init_buffer >= 1
    assert len(s.window_ends) >= 1
    assert max(s.window_ends) <= 60


def test_find_reasonable_epsilon_scale(rng):
    q = np.zeros(5)
    logp, grad = _std_normal(q)
    eps = find_reasonable_epsilon(q, logp, grad, np.ones(5), _std_normal, rng)
    assert 0.05 < eps < 4.0


def test_kernel_samples_correlated_gaussian(rng):
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    prec = np.linalg.inv(cov)

    def target(q):
        return -0.5 * float(q @ prec @ q), -prec @ q

    kernel = NutsKernel(2, NutsConfig(target_accept=0.9))
    kernel.eps = 0.5
    q = np.zeros(2)
    logp, grad = target(q)
    draws = []
    for i in range(3000):
        q, logp, grad, _ = kernel.step(q, logp, grad, target, rng)
        if i >= 500:
            draws.append(q.copy())
    draws = np.asarray(draws)
    np.testing.assert_allclose(draws.mean(axis=0), 0.0, atol=0.15)
    np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.3)
    assert kernel.stats.divergences == 0


def test_kernel_counts_divergences(rng):
    # a cliff: the density is -inf on one side, huge curvature otherwise
    def target(q):
        if abs(q[0]) > 1.0:
            return -math.inf, np.zeros(1)
        return -0.5 * float(q @ q) * 1e6, -q * 1e6

    kernel = NutsKernel(1)
    kernel.eps = 2.0  # deliberately far too large
    q = np.zeros(1)
    logp, grad = target(q)
    for _ in range(20):
        q, logp, grad, _ = kernel.step(q, logp, grad, target, rng)
    assert kernel.stats.divergences > 0


def test_kernel_respects_max_depth(rng):
    kernel = NutsKernel(2, NutsConfig(max_tree_depth=3))
    kernel.eps = 1e-4  # forces deep trees on an easy target
    q = np.zeros(2)
    logp, grad = _std_normal(q)
    for _ in range(5):
        q, logp, grad, _ = kernel.step(q, logp, grad, _std_normal, rng)
    assert kernel.stats.max_depth_hits == 5
    assert kernel.stats.n_leapfrog <= 5 * (2**3 + 3)


def test_set_mass_sanitizes():
    kernel = NutsKernel(3)
    kernel.set_mass(np.array([4.0, -1.0, np.nan]))
    np.testing.assert_array_equal(kernel.inv_mass, [4.0, 1.0, 1.0])
