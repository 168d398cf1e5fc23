"""Penalty matrices, the whitened reparameterization, and hyperpriors.

Smoothness of coefficient blocks is controlled by partially improper Gaussian
priors with precision ``K / tau2`` where ``K`` is a difference penalty (or the
identity for exchangeable random intercepts).  The transformation block is
additionally rewritten in whitened coordinates: the penalty null space is
removed and the remaining directions are scaled so the prior becomes iid
``N(0, tau2)`` — the form required by the gradient-based sampler.

Log-densities for variance parameters are provided on the log scale (with the
change-of-variables term included) because the samplers and the initializer
work with ``v = ln tau2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

__all__ = [
    "diff_penalty",
    "Reparam",
    "whiten_penalty",
    "weibull_log_tau2",
    "invgamma_log_tau2",
    "uniform_log_tau2",
    "sample_weibull_tau2",
    "softclip",
    "softclip_inv",
    "softclip_log_jac",
    "softclip_log_jac_grad",
    "QuadratureError",
    "transformation_moments",
    "tv_distance",
    "prior_predictive_tv",
]


def diff_penalty(n: int, order: int = 1) -> np.ndarray:
    """Penalty ``K = D'D`` from the ``order``-th difference matrix on n coefficients.

    ``K`` has rank ``n - order``; its null space contains the polynomials the
    penalty leaves free (constants for order 1, linear trends for order 2).
    """
    if n <= order:
        raise ValueError(f"need more than {order} coefficients, got {n}")
    d = np.diff(np.eye(n), n=order, axis=0)
    return d.T @ d


@dataclass(frozen=True)
class Reparam:
    """Whitening basis for a rank-deficient penalty.

    ``basis`` maps whitened coefficients to natural ones; by construction
    ``basis.T @ K @ basis`` is the identity, so an iid normal prior on the
    whitened block is exactly the singular Gaussian prior on the natural one.
    """

    basis: np.ndarray = field(repr=False)
    rank: int


def whiten_penalty(K: np.ndarray) -> Reparam:
    """Eigen-factor ``K``, drop the null space, scale to unit prior precision."""
    vals, vecs = np.linalg.eigh(K)
    keep = vals > vals[-1] * 1e-10
    rank = int(np.count_nonzero(keep))
    basis = vecs[:, keep] / np.sqrt(vals[keep])
    return Reparam(basis=basis, rank=rank)


def weibull_log_tau2(v: float, scale: float, shape: float = 0.5) -> tuple[float, float]:
    """Weibull log-density of ``tau2 = exp(v)`` as a function of v, with gradient.

    Includes the Jacobian of the log transform.  Returns ``(logpdf, dlogpdf/dv)``.
    """
    k = shape
    z = math.exp(k * (v - math.log(scale)))
    logp = math.log(k) - k * math.log(scale) + k * v - z
    return logp, k - k * z


def invgamma_log_tau2(v: float, a: float, b: float) -> tuple[float, float]:
    """Inverse-gamma log-density of ``tau2 = exp(v)`` in v, with gradient."""
    bexp = b * math.exp(-v)
    logp = a * math.log(b) - gammaln(a) - a * v - bexp
    return logp, -a + bexp


def uniform_log_tau2(v: float, lo: float, hi: float) -> tuple[float, float]:
    """Uniform(lo, hi) log-density of ``tau2 = exp(v)`` in v, with gradient."""
    x = math.exp(v)
    if not lo < x < hi:
        return -math.inf, 0.0
    return v - math.log(hi - lo), 1.0


def sample_weibull_tau2(u: float, scale: float, shape: float = 0.5) -> float:
    """Inverse-CDF draw: ``tau2 = scale * (-log(1 - u)) ** (1/shape)``."""
    return scale * (-math.log1p(-u)) ** (1.0 / shape)


def _softplus(t):
    t = np.asarray(t, dtype=float)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _softplus_inv(u):
    u = np.asarray(u, dtype=float)
    small = u < 0.693
    out = np.empty_like(u)
    out[small] = np.log(np.expm1(u[small]))
    out[~small] = u[~small] + np.log1p(-np.exp(-u[~small]))
    return out


def _log_sigmoid(t):
    return -_softplus(-np.asarray(t, dtype=float))


def softclip(z, lo: float, hi: float):
    """Smooth, strictly increasing map from the real line into (about lo, hi).

    Away from the boundaries the map is indistinguishable from the identity;
    near them it saturates smoothly.  Used by the initializer to optimize
    variance parameters over an unconstrained coordinate.
    """
    return hi - _softplus(hi - (lo + _softplus(np.asarray(z, dtype=float) - lo)))


def softclip_inv(x, lo: float, hi: float):
    """Inverse of :func:`softclip` for x strictly inside (lo, hi)."""
    y = hi - _softplus_inv(hi - np.asarray(x, dtype=float))
    return lo + _softplus_inv(y - lo)


def softclip_log_jac(z, lo: float, hi: float):
    """Log-derivative of :func:`softclip` (the change-of-variables term)."""
    z = np.asarray(z, dtype=float)
    inner = lo + _softplus(z - lo)
    return _log_sigmoid(z - lo) + _log_sigmoid(hi - inner)


def softclip_log_jac_grad(z, lo: float, hi: float):
    """d/dz of :func:`softclip_log_jac` (needed by the ascent in the initializer)."""
    z = np.asarray(z, dtype=float)
    sig_lo = np.exp(_log_sigmoid(z - lo))
    inner = lo + _softplus(z - lo)
    sig_hi = np.exp(_log_sigmoid(hi - inner))
    return (1.0 - sig_lo) - (1.0 - sig_hi) * sig_lo


# ---------------------------------------------------------------------------
# Prior-predictive calibration via total variation distance


class QuadratureError(RuntimeError):
    """Numeric mass of the transformation density strayed too far from one."""


_TV_LO, _TV_HI, _TV_POINTS = -9.0, 9.0, 4001


def _transformation_density(delta, tconfig):
    """Trapezoid grid and raw residual density phi(h(r)) h'(r) on it."""
    from .transform import deriv_batch, forward_batch, refresh_cache

    grid = np.linspace(_TV_LO, _TV_HI, _TV_POINTS)
    params = refresh_cache(np.asarray(delta, dtype=float), tconfig)
    h = forward_batch(grid, params, tconfig)
    hp = deriv_batch(grid, params, tconfig)
    f = np.exp(-0.5 * h * h) / math.sqrt(2.0 * math.pi) * hp
    return grid, f


def transformation_moments(delta, tconfig) -> tuple[float, float, float]:
    """Quadrature (mass, mean, variance) of the raw transformation density."""
    grid, f = _transformation_density(delta, tconfig)
    mass = float(np.trapezoid(f, grid))
    m = float(np.trapezoid(grid * f, grid))
    s2 = float(np.trapezoid(grid * grid * f, grid)) - m * m
    return mass, m, s2


def tv_distance(delta, tconfig) -> float:
    """Total variation between the standardized residual density and the
    standard normal: half the integrated absolute difference.

    The raw density is standardized to mean zero and unit variance using its
    own quadrature moments.  Raises :class:`QuadratureError` when the grid
    misses more than 1e-4 of the mass (degenerate coefficient draws).
    """
    mass, m, s2 = transformation_moments(delta, tconfig)
    if abs(mass - 1.0) > 1e-4 or s2 <= 0.0:
        raise QuadratureError(f"density mass {mass:.6f} (needs |mass - 1| <= 1e-4)")
    from .transform import deriv_batch, forward_batch, refresh_cache

    s = math.sqrt(s2)
    grid = np.linspace(_TV_LO, _TV_HI, _TV_POINTS)
    params = refresh_cache(np.asarray(delta, dtype=float), tconfig)
    z = s * grid + m
    h = forward_batch(z, params, tconfig)
    hp = deriv_batch(z, params, tconfig)
    f_std = s * np.exp(-0.5 * h * h) / math.sqrt(2.0 * math.pi) * hp
    ref = np.exp(-0.5 * grid * grid) / math.sqrt(2.0 * math.pi)
    return 0.5 * float(np.trapezoid(np.abs(f_std - ref), grid))


def prior_predictive_tv(
    psi: float,
    n_tau: int,
    n_delta: int,
    rng: np.random.Generator,
    tconfig=None,
) -> np.ndarray:
    """Sample the prior predictive distribution of the TV distance.

    Hierarchical draws: ``tau2`` from the Weibull prior, then iid normal
    whitened coefficients mapped to ``delta``.  Draws whose density mass
    falls outside the quadrature window are resampled.
    """
    from .transform import make_config

    if tconfig is None:
        tconfig = make_config()
    basis = whiten_penalty(diff_penalty(tconfig.n_coef, order=1)).basis
    out = np.empty(n_tau * n_delta)
    k = 0
    for _ in range(n_tau):
        tau = math.sqrt(sample_weibull_tau2(rng.uniform(), psi))
        for _ in range(n_delta):
            for _attempt in range(100):
                delta = basis @ (tau * rng.standard_normal(basis.shape[1]))
                try:
                    out[k] = tv_distance(delta, tconfig)
                    break
                except QuadratureError:
                    continue
            else:
                raise QuadratureError("no valid draw in 100 attempts")
            k += 1
    return out
