"""The monotone residual transformation h and its derivative and inverse.

``h`` maps standardized residuals onto a standard-normal reference scale.  It
is built from five pieces: a slope-normalized increasing cubic spline on the
core interval [a, b], smooth C1 transition segments of width ``lam`` on both
sides, and unit-slope linear tails.  Because the average slope of the core is
normalized to one, ``h(a) = a`` and ``h(b) = b`` hold for every coefficient
vector, and a constant coefficient vector collapses ``h`` to the identity.

Two evaluation paths are exposed: the exact basis recursion (oracle, slow) and
the precomputed-grid interpolation used inside the sampler.  Both share the
same cached segment constants.

``lam`` supports two sentinel modes, implemented as exact limits rather than
extreme finite widths: ``lam = 0`` drops the transitions and extends the
identity beyond [a, b]; ``lam = inf`` extrapolates linearly with the boundary
slopes of the core spline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .splinecore import (
    GeometryError,
    GridBasis,
    KnotGrid,
    build_grid_basis,
    build_knots,
    dot_cubic_grid,
    dot_quad_grid,
    eval_cubic,
    eval_quadratic,
)

__all__ = [
    "TransformConfig",
    "TransformParams",
    "make_config",
    "average_slope",
    "refresh_cache",
    "forward",
    "forward_batch",
    "deriv",
    "deriv_batch",
    "second_deriv_batch",
    "inverse",
    "inverse_batch",
    "identity_params",
    "with_lambda",
]


class InverseConvergenceError(RuntimeError):
    """Numeric inversion failed to reach tolerance (pathological cache)."""


@dataclass(frozen=True)
class TransformConfig:
    """Knot geometry, transition width and the precomputed evaluation grid."""

    grid: KnotGrid
    lam: float
    grid_basis: GridBasis = field(repr=False)

    @property
    def n_coef(self) -> int:
        """Number of log-increment coefficients (one less than bases)."""
        return self.grid.n_bases - 1

    @property
    def mode(self) -> str:
        if self.lam == 0.0:
            return "identity_tails"
        if math.isinf(self.lam):
            return "linear_tails"
        return "smooth"


def make_config(
    a: float = -4.0, b: float = 4.0, n_bases: int = 31, lam: float | None = None
) -> TransformConfig:
    """Build a transform configuration; ``lam`` defaults to ``0.1 * (b - a)``."""
    grid = build_knots(a, b, n_bases)
    if lam is None:
        lam = 0.1 * (b - a)
    if lam < 0:
        raise GeometryError(f"transition width must be >= 0, got {lam}")
    return TransformConfig(grid=grid, lam=float(lam), grid_basis=build_grid_basis(grid))


def _slope_weights(n_coef: int) -> np.ndarray:
    """Quadrature weights w with s(delta) = w @ exp(delta) / (b - a).

    Each of the ``n_coef - 2`` core segments contributes (1/6, 2/3, 1/6) to
    three consecutive coefficients.
    """
    w = np.zeros(n_coef)
    seg = np.array([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0])
    for j in range(n_coef - 2):
        w[j : j + 3] += seg
    return w


def average_slope(delta: np.ndarray, grid: KnotGrid) -> float:
    """Average slope of the un-normalized core spline over [a, b].

    Computed segment by segment:
    ``(1/(b-a)) * sum_j [(e_j + e_{j+2})/6 + 2 e_{j+1}/3]`` with
    ``e = exp(delta)``.  Strictly positive for finite ``delta``.
    """
    e = np.exp(np.asarray(delta, dtype=float))
    n = e.size - 2
    segs = (e[:n] + e[2 : n + 2]) / 6.0 + 2.0 * e[1 : n + 1] / 3.0
    return float(np.sum(segs) / (grid.b - grid.a))


@dataclass(frozen=True)
class TransformParams:
    """Coefficients plus every cached constant needed to evaluate h.

    The cached arrays use exponentials centered at ``max(delta)``; every
    evaluated quantity is a ratio in which the centering cancels exactly, so
    the transformation is invariant (bit for bit) under adding a constant to
    ``delta`` — which is also the analytic shift-invariance property of the
    slope normalization.
    """

    delta: np.ndarray = field(repr=False)
    s: float
    alpha: float
    slope_a: float
    slope_b: float
    shift_left_trans: float  # added to the left transition segment
    shift_left: float  # added to the left linear tail
    shift_right_trans: float
    shift_right: float
    e_centered: np.ndarray = field(repr=False)
    omega_centered: np.ndarray = field(repr=False)
    s_centered: float


def _left_raw(r, lam: float, a: float, slope_a: float):
    p = (a - 0.5 * r) / lam
    return r * p + r * (1.0 - p) * slope_a


def _right_raw(r, lam: float, b: float, slope_b: float):
    q = (0.5 * r - b) / lam
    return r * q + r * (1.0 - q) * slope_b


def refresh_cache(delta: np.ndarray, config: TransformConfig) -> TransformParams:
    """Recompute all segment constants for a new coefficient vector."""
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (config.n_coef,):
        raise ValueError(f"expected {config.n_coef} coefficients, got shape {delta.shape}")
    grid = config.grid
    center = float(np.max(delta))
    e_c = np.exp(delta - center)
    omega_c = np.concatenate(([0.0], np.cumsum(e_c)))
    s_c = float(_slope_weights(config.n_coef) @ e_c) / (grid.b - grid.a)

    row_a, row_b = eval_cubic(grid.a, grid), eval_cubic(grid.b, grid)
    u_a = float(row_a.weights @ omega_c[row_a.offset : row_a.offset + 4])
    u_b = float(row_b.weights @ omega_c[row_b.offset : row_b.offset + 4])
    alpha = grid.a - u_a / s_c
    spline_b = alpha + u_b / s_c

    qrow_a, qrow_b = eval_quadratic(grid.a, grid), eval_quadratic(grid.b, grid)
    slope_a = float(qrow_a.weights @ e_c[qrow_a.offset : qrow_a.offset + 3]) / (s_c * grid.d)
    slope_b = float(qrow_b.weights @ e_c[qrow_b.offset : qrow_b.offset + 3]) / (s_c * grid.d)

    lam = config.lam
    if config.mode == "smooth":
        shift_lt = grid.a - _left_raw(grid.a, lam, grid.a, slope_a)
        shift_rt = spline_b - _right_raw(grid.b, lam, grid.b, slope_b)
        shift_l = _left_raw(grid.a - lam, lam, grid.a, slope_a) - (grid.a - lam) + shift_lt
        shift_r = _right_raw(grid.b + lam, lam, grid.b, slope_b) - (grid.b + lam) + shift_rt
    else:
        shift_lt = shift_rt = shift_l = shift_r = 0.0

    return TransformParams(
        delta=delta,
        s=average_slope(delta, grid),
        alpha=alpha,
        slope_a=slope_a,
        slope_b=slope_b,
        shift_left_trans=shift_lt,
        shift_left=shift_l,
        shift_right_trans=shift_rt,
        shift_right=shift_r,
        e_centered=e_c,
        omega_centered=omega_c,
        s_centered=s_c,
    )


def _core_value(r: np.ndarray, params: TransformParams, config: TransformConfig, exact: bool):
    if exact:
        u = np.empty(r.size)
        for i, ri in enumerate(r):
            row = eval_cubic(float(ri), config.grid)
            u[i] = row.weights @ params.omega_centered[row.offset : row.offset + 4]
    else:
        u = dot_cubic_grid(r, config.grid_basis, params.omega_centered)
    return params.alpha + u / params.s_centered


def _core_deriv(r: np.ndarray, params: TransformParams, config: TransformConfig, exact: bool):
    if exact:
        q = np.empty(r.size)
        for i, ri in enumerate(r):
            row = eval_quadratic(float(ri), config.grid)
            q[i] = row.weights @ params.e_centered[row.offset : row.offset + 3]
    else:
        q = dot_quad_grid(r, config.grid_basis, params.e_centered)
    return q / (params.s_centered * config.grid.d)


def forward_batch(
    rs: np.ndarray, params: TransformParams, config: TransformConfig, exact: bool = False
) -> np.ndarray:
    """Evaluate h elementwise; strictly increasing for any coefficients."""
    r = np.atleast_1d(np.asarray(rs, dtype=float))
    out = np.empty_like(r)
    a, b, lam = config.grid.a, config.grid.b, config.lam
    core = (r >= a) & (r <= b)
    if np.any(core):
        out[core] = _core_value(r[core], params, config, exact)
    lo, hi = r < a, r > b
    if config.mode == "identity_tails":
        out[lo] = r[lo]
        out[hi] = r[hi]
    elif config.mode == "linear_tails":
        out[lo] = a + params.slope_a * (r[lo] - a)
        out[hi] = b + params.slope_b * (r[hi] - b)
    else:
        ltr = lo & (r >= a - lam)
        rtr = hi & (r <= b + lam)
        ltail = r < a - lam
        rtail = r > b + lam
        out[ltr] = _left_raw(r[ltr], lam, a, params.slope_a) + params.shift_left_trans
        out[rtr] = _right_raw(r[rtr], lam, b, params.slope_b) + params.shift_right_trans
        out[ltail] = r[ltail] + params.shift_left
        out[rtail] = r[rtail] + params.shift_right
    return out


def deriv_batch(
    rs: np.ndarray, params: TransformParams, config: TransformConfig, exact: bool = False
) -> np.ndarray:
    """Elementwise dh/dr; positive everywhere, exactly 1 on the linear tails."""
    r = np.atleast_1d(np.asarray(rs, dtype=float))
    out = np.empty_like(r)
    a, b, lam = config.grid.a, config.grid.b, config.lam
    core = (r >= a) & (r <= b)
    if np.any(core):
        out[core] = _core_deriv(r[core], params, config, exact)
    lo, hi = r < a, r > b
    if config.mode == "identity_tails":
        out[lo | hi] = 1.0
    elif config.mode == "linear_tails":
        out[lo] = params.slope_a
        out[hi] = params.slope_b
    else:
        ltr = lo & (r >= a - lam)
        rtr = hi & (r <= b + lam)
        t_l = (a - r[ltr]) / lam
        out[ltr] = (1.0 - t_l) * params.slope_a + t_l
        t_r = (r[rtr] - b) / lam
        out[rtr] = (1.0 - t_r) * params.slope_b + t_r
        out[r < a - lam] = 1.0
        out[r > b + lam] = 1.0
    return out


def second_deriv_batch(
    rs: np.ndarray, params: TransformParams, config: TransformConfig
) -> np.ndarray:
    """Elementwise d2h/dr2 (exact piecewise form; used for scoring steps).

    Piecewise linear in r on the core (the quadratic basis differentiated once
    more), constant on the transitions, zero on the tails.
    """
    r = np.atleast_1d(np.asarray(rs, dtype=float))
    out = np.zeros_like(r)
    grid = config.grid
    a, b, lam, d = grid.a, grid.b, config.lam, grid.d
    e, s_c = params.e_centered, params.s_centered
    core = (r >= a) & (r <= b)
    if np.any(core):
        rc = r[core]
        seg = np.minimum(np.floor((rc - a) / d).astype(np.intp), grid.n_segments - 1)
        t = (rc - (a + seg * d)) / d
        val = -(1.0 - t) * e[seg] + (1.0 - 2.0 * t) * e[seg + 1] + t * e[seg + 2]
        out[core] = val / (s_c * d * d)
    if config.mode == "smooth":
        ltr = (r < a) & (r >= a - lam)
        rtr = (r > b) & (r <= b + lam)
        out[ltr] = (params.slope_a - 1.0) / lam
        out[rtr] = (1.0 - params.slope_b) / lam
    return out


def forward(r: float, params: TransformParams, config: TransformConfig, exact: bool = False) -> float:
    return float(forward_batch(np.asarray([r]), params, config, exact)[0])


def deriv(r: float, params: TransformParams, config: TransformConfig, exact: bool = False) -> float:
    return float(deriv_batch(np.asarray([r]), params, config, exact)[0])


_BISECT_STEPS = 40
_NEWTON_STEPS = 30
_VALUE_TOL = 1e-10


def inverse_batch(
    zs: np.ndarray, params: TransformParams, config: TransformConfig, exact: bool = False
) -> np.ndarray:
    """Invert h elementwise: bisection to a tight bracket, then Newton polish.

    Points on the linear tails are inverted in closed form.  Raises
    ``InverseConvergenceError`` if any point misses |h(r) - z| <= 1e-10.
    """
    z = np.atleast_1d(np.asarray(zs, dtype=float))
    out = np.empty_like(z)
    a, b, lam = config.grid.a, config.grid.b, config.lam
    if config.mode == "identity_tails":
        blo, bhi = a, b
        zlo, zhi = a, b
        out[z < zlo] = z[z < zlo]
        out[z > zhi] = z[z > zhi]
    elif config.mode == "linear_tails":
        blo, bhi = a, b
        zlo, zhi = a, b
        out[z < zlo] = a + (z[z < zlo] - a) / params.slope_a
        out[z > zhi] = b + (z[z > zhi] - b) / params.slope_b
    else:
        blo, bhi = a - lam, b + lam
        zlo = blo + params.shift_left
        zhi = bhi + params.shift_right
        out[z < zlo] = z[z < zlo] - params.shift_left
        out[z > zhi] = z[z > zhi] - params.shift_right

    mid = (z >= zlo) & (z <= zhi)
    if np.any(mid):
        target = z[mid]
        lo = np.full(target.shape, blo)
        hi = np.full(target.shape, bhi)
        for _ in range(_BISECT_STEPS):
            m = 0.5 * (lo + hi)
            too_low = forward_batch(m, params, config, exact) < target
            lo = np.where(too_low, m, lo)
            hi = np.where(too_low, hi, m)
            if np.max(hi - lo) < 1e-6:
                break
        r = 0.5 * (lo + hi)
        err = forward_batch(r, params, config, exact) - target
        for _ in range(_NEWTON_STEPS):
            if np.max(np.abs(err)) <= _VALUE_TOL:
                break
            step = err / deriv_batch(r, params, config, exact)
            r = np.clip(r - step, lo, hi)
            err = forward_batch(r, params, config, exact) - target
        if np.max(np.abs(err)) > _VALUE_TOL:
            raise InverseConvergenceError(
                f"inverse residual {np.max(np.abs(err)):.3e} above tolerance {_VALUE_TOL}"
            )
        out[mid] = r
    return out


def inverse(z: float, params: TransformParams, config: TransformConfig, exact: bool = False) -> float:
    return float(inverse_batch(np.asarray([z]), params, config, exact)[0])


def identity_params(config: TransformConfig) -> TransformParams:
    """Parameters with all-zero coefficients (h is exactly the identity)."""
    return refresh_cache(np.zeros(config.n_coef), config)


def with_lambda(config: TransformConfig, lam: float) -> TransformConfig:
    """A copy of ``config`` with a different transition width."""
    return replace(config, lam=float(lam))
