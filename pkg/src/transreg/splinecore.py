"""Equidistant-knot B-spline bases (cubic and quadratic) and the grid approximation.

The transformation core is a cubic spline on an equidistant knot vector; its
derivative lives on the quadratic bases of the same knots.  Exact evaluation
goes through the classic order-by-order recursion and serves as the oracle
path; the sampler uses a precomputed 1000-point grid with linear interpolation
between rows, which is accurate to ~1e-3 and an order of magnitude cheaper.

All basis rows are sparse: a row is (offset, weights) where ``offset`` is the
index of the first active basis function.  For a point in the interior of
segment ``s`` (0-based), the active cubic bases are ``s .. s+3`` and the
active quadratic bases are ``s .. s+2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRID_SIZE = 1000

__all__ = [
    "KnotGrid",
    "BasisRow",
    "GridBasis",
    "build_knots",
    "eval_cubic",
    "eval_quadratic",
    "build_grid_basis",
    "interp_basis",
]


class GeometryError(ValueError):
    """Invalid knot geometry (a >= b or too few bases)."""


class DomainError(ValueError):
    """Evaluation point outside the supported interval."""


@dataclass(frozen=True)
class KnotGrid:
    """Equidistant knot vector for ``n_bases`` cubic B-splines on [a, b].

    The knot vector has ``n_bases + 4`` entries; the boundary knots of the
    interior interval are ``knots[3] = a`` and ``knots[n_bases] = b``, and the
    spacing is ``d = (b - a) / (n_bases - 3)``.
    """

    a: float
    b: float
    n_bases: int
    knots: np.ndarray = field(repr=False)
    d: float

    @property
    def n_segments(self) -> int:
        return self.n_bases - 3


def build_knots(a: float, b: float, n_bases: int) -> KnotGrid:
    """Construct the equidistant knot grid for ``n_bases`` cubic bases on [a, b].

    Raises
    ------
    GeometryError
        If ``a >= b`` or ``n_bases < 5`` (need at least one interior segment).
    """
    if not (np.isfinite(a) and np.isfinite(b)) or a >= b:
        raise GeometryError(f"need finite a < b, got a={a}, b={b}")
    if n_bases < 5:
        raise GeometryError(f"need at least 5 bases, got {n_bases}")
    d = (b - a) / (n_bases - 3)
    # index i holds the knot a + (i - 3) * d, so knots[3] == a exactly
    knots = a + (np.arange(n_bases + 4) - 3.0) * d
    return KnotGrid(a=float(a), b=float(b), n_bases=n_bases, knots=knots, d=d)


@dataclass(frozen=True)
class BasisRow:
    """Sparse basis evaluation: ``weights[k]`` multiplies basis ``offset + k``."""

    offset: int
    weights: np.ndarray

    def densify(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        out[self.offset : self.offset + self.weights.size] = self.weights
        return out


def _segment_index(r: float, grid: KnotGrid) -> int:
    if not (grid.a <= r <= grid.b):
        raise DomainError(f"r={r} outside [{grid.a}, {grid.b}]")
    s = int(np.floor((r - grid.a) / grid.d))
    return min(s, grid.n_segments - 1)


def _local_recursion(r: float, grid: KnotGrid, order: int) -> np.ndarray:
    """Order-by-order recursion restricted to the active window of ``r``.

    Returns the ``order + 1`` active basis values for the segment containing
    ``r``.  ``vals[k]`` at level p is the basis with index ``segment + k`` in
    the 0-based cubic numbering (supports ``[k_{j-p}, k_{j+1}]`` relative to
    that numbering).
    """
    s = _segment_index(r, grid)
    # knot position of the left end of segment s: knots[s + 3]
    vals = np.array([1.0])
    for p in range(1, order + 1):
        prev = vals
        vals = np.zeros(p + 1)
        for k in range(p + 1):
            j = s + k  # 0-based basis index at this level
            left_knot = grid.knots[j + 3 - p]
            right_knot = grid.knots[j + 4]
            acc = 0.0
            if k > 0:
                acc += (r - left_knot) / (p * grid.d) * prev[k - 1]
            if k < p:
                acc += (right_knot - r) / (p * grid.d) * prev[k]
            vals[k] = acc
    return vals


def eval_cubic(r: float, grid: KnotGrid) -> BasisRow:
    """Exact cubic basis row at ``r`` in [a, b] via the order-3 recursion."""
    s = _segment_index(r, grid)
    return BasisRow(offset=s, weights=_local_recursion(r, grid, 3))


def eval_quadratic(r: float, grid: KnotGrid) -> BasisRow:
    """Exact quadratic basis row at ``r``, indexed on the parent cubic knots.

    The offset is aligned so that weight ``k`` multiplies the derivative
    coefficient ``exp(delta[offset + k])``: the derivative of the cubic spline
    with increasing coefficients ``omega`` is a quadratic spline whose j-th
    coefficient is the increment ``omega[j+1] - omega[j]``.
    """
    s = _segment_index(r, grid)
    return BasisRow(offset=s, weights=_local_recursion(r, grid, 2))


@dataclass(frozen=True)
class GridBasis:
    """Precomputed cubic and quadratic rows on a 1000-point grid over [a, b].

    ``step = (b - a) / 999`` (1000 points including both endpoints).  Arrays
    ``cum_cubic``/``scatter_quad`` are dense (grid, n_bases - 1) matrices used
    by the sampler's gradient path: ``cum_cubic[g, l]`` is the sum of cubic
    weights over bases ``l+1 ..`` at grid point ``g`` and ``scatter_quad[g, l]``
    the quadratic weight attached to coefficient ``l``.
    """

    grid: KnotGrid
    points: np.ndarray = field(repr=False)
    step: float
    cubic_offsets: np.ndarray = field(repr=False)
    cubic_weights: np.ndarray = field(repr=False)
    quad_offsets: np.ndarray = field(repr=False)
    quad_weights: np.ndarray = field(repr=False)
    cum_cubic: np.ndarray = field(repr=False)
    scatter_quad: np.ndarray = field(repr=False)


def build_grid_basis(grid: KnotGrid) -> GridBasis:
    """Evaluate both bases exactly on the 1000-point equidistant grid."""
    if grid.n_segments > GRID_SIZE - 1:
        raise GeometryError("more spline segments than grid intervals")
    points = np.linspace(grid.a, grid.b, GRID_SIZE)
    step = (grid.b - grid.a) / (GRID_SIZE - 1)
    c_off = np.empty(GRID_SIZE, dtype=np.intp)
    c_w = np.empty((GRID_SIZE, 4))
    q_off = np.empty(GRID_SIZE, dtype=np.intp)
    q_w = np.empty((GRID_SIZE, 3))
    n_coef = grid.n_bases - 1
    cum = np.zeros((GRID_SIZE, n_coef))
    quad = np.zeros((GRID_SIZE, n_coef))
    for g, r in enumerate(points):
        row_c = eval_cubic(r, grid)
        row_q = eval_quadratic(r, grid)
        c_off[g], c_w[g] = row_c.offset, row_c.weights
        q_off[g], q_w[g] = row_q.offset, row_q.weights
        dense = row_c.densify(grid.n_bases)
        # cumulative sum over bases l+1.. equals the weight scatter for the
        # cumulative-coefficient representation of the spline
        cum[g] = np.cumsum(dense[::-1])[::-1][1:]
        quad[g, row_q.offset : row_q.offset + 3] = row_q.weights
    return GridBasis(
        grid=grid,
        points=points,
        step=step,
        cubic_offsets=c_off,
        cubic_weights=c_w,
        quad_offsets=q_off,
        quad_weights=q_w,
        cum_cubic=cum,
        scatter_quad=quad,
    )


def _bracket(r: np.ndarray, gb: GridBasis) -> tuple[np.ndarray, np.ndarray]:
    idx = np.floor((r - gb.grid.a) / gb.step).astype(np.intp)
    idx = np.clip(idx, 0, GRID_SIZE - 2)
    w = (r - gb.points[idx]) / gb.step
    return idx, w


def interp_basis(r: float, gb: GridBasis) -> BasisRow:
    """Linear interpolation of the two bracketing precomputed cubic rows.

    When the bracketing rows straddle a knot their offsets differ by one and
    the merged row carries five weights; the weights still sum to one.
    """
    if not (gb.grid.a <= r <= gb.grid.b):
        raise DomainError(f"r={r} outside [{gb.grid.a}, {gb.grid.b}]")
    idx, w = _bracket(np.asarray([r]), gb)
    i, w = int(idx[0]), float(w[0])
    o_lo, o_hi = int(gb.cubic_offsets[i]), int(gb.cubic_offsets[i + 1])
    if o_lo == o_hi:
        return BasisRow(offset=o_lo, weights=(1.0 - w) * gb.cubic_weights[i] + w * gb.cubic_weights[i + 1])
    offset = min(o_lo, o_hi)
    width = max(o_lo, o_hi) + 4 - offset
    merged = np.zeros(width)
    merged[o_lo - offset : o_lo - offset + 4] += (1.0 - w) * gb.cubic_weights[i]
    merged[o_hi - offset : o_hi - offset + 4] += w * gb.cubic_weights[i + 1]
    return BasisRow(offset=offset, weights=merged)


def dot_cubic_grid(r: np.ndarray, gb: GridBasis, coef: np.ndarray) -> np.ndarray:
    """Grid-path dot product of interpolated cubic rows with ``coef``.

    Interpolating the rows and then dotting equals interpolating the two dot
    products, which avoids merging sparse rows with different offsets.
    """
    idx, w = _bracket(r, gb)
    lo = np.einsum("ik,ik->i", gb.cubic_weights[idx], coef[gb.cubic_offsets[idx, None] + np.arange(4)])
    hi = np.einsum(
        "ik,ik->i", gb.cubic_weights[idx + 1], coef[gb.cubic_offsets[idx + 1, None] + np.arange(4)]
    )
    return (1.0 - w) * lo + w * hi


def dot_quad_grid(r: np.ndarray, gb: GridBasis, coef: np.ndarray) -> np.ndarray:
    """Grid-path dot product of interpolated quadratic rows with ``coef``."""
    idx, w = _bracket(r, gb)
    lo = np.einsum("ik,ik->i", gb.quad_weights[idx], coef[gb.quad_offsets[idx, None] + np.arange(3)])
    hi = np.einsum(
        "ik,ik->i", gb.quad_weights[idx + 1], coef[gb.quad_offsets[idx + 1, None] + np.arange(3)]
    )
    return (1.0 - w) * lo + w * hi


def design_matrix(x: np.ndarray, grid: KnotGrid) -> np.ndarray:
    """Dense (n, n_bases) cubic design matrix via the exact recursion."""
    out = np.zeros((x.size, grid.n_bases))
    for i, xi in enumerate(np.asarray(x, dtype=float)):
        row = eval_cubic(xi, grid)
        out[i, row.offset : row.offset + 4] = row.weights
    return out
