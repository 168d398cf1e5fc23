"""Joint log-posterior: response likelihood, priors, and block gradients.

The response model is ``y = mu(x) + sigma(x) * r`` where the standardized
residual ``r`` has density ``phi(h(r)) h'(r)`` for the monotone transformation
``h``.  Observations may be exact or left-/right-/interval-censored; censored
rows contribute normal-CDF expressions of the transformed bounds.

The sampler treats parameters in blocks.  This module provides the pointwise
log-likelihood, the full log-posterior, exact score vectors for the
location/scale coefficient blocks, and an analytic value-and-gradient function
for the transformation block ``(delta_tilde, ln tau2_delta)``.

The gradient exploits that the core spline is linear in ``exp(delta)``: with
``u(r) = C(r) @ e`` (cumulative basis sums) and ``E = w @ e`` (slope
quadrature), ``h = a + (b - a)(u(r) - u(a))/E`` on the core, and the boundary
slopes driving the transitions and tails are again ratios of linear forms.
All derivative formulas are zero-homogeneous in ``e``, so the max-centered
exponentials cached by the transformation can be used throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, log_ndtr

from .predictor import AdditivePredictor, Term
from .priors import Reparam, diff_penalty, weibull_log_tau2, whiten_penalty
from .transform import (
    TransformConfig,
    TransformParams,
    _slope_weights,
    deriv_batch,
    forward_batch,
    refresh_cache,
    second_deriv_batch,
)

__all__ = [
    "CENS_NONE",
    "CENS_LEFT",
    "CENS_RIGHT",
    "CENS_INTERVAL",
    "ModelConfig",
    "Model",
    "ModelState",
    "build_model",
    "init_state",
    "delta_of",
    "location",
    "log_scale",
    "pointwise_loglik",
    "loglik",
    "log_posterior",
    "nuts_value_grad",
    "residual_scores",
    "update_intercepts",
    "LikelihoodError",
]

CENS_NONE, CENS_LEFT, CENS_RIGHT, CENS_INTERVAL = 0, 1, 2, 3

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class LikelihoodError(RuntimeError):
    """Nonfinite log-likelihood contribution; carries the offending row."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class ModelConfig:
    """Hyperprior settings shared by all fits."""

    psi: float = 0.5  # Weibull scale for the transformation variance
    ig_a: float = 1.0  # inverse-gamma shape for term variances
    ig_b: float = 0.001  # inverse-gamma rate for term variances
    log_tau2_floor: float = -11.0  # hard lower clip for ln tau2_delta


@dataclass(frozen=True)
class Model:
    """Data, predictor structures and transformation bound together."""

    y: np.ndarray = field(repr=False)
    loc: AdditivePredictor
    scale: AdditivePredictor
    tconfig: TransformConfig
    reparam: Reparam
    config: ModelConfig
    cens: np.ndarray | None = field(default=None, repr=False)  # codes per row
    y2: np.ndarray | None = field(default=None, repr=False)  # interval upper bounds

    @property
    def n_obs(self) -> int:
        return self.y.size

    @property
    def n_delta(self) -> int:
        """Whitened transformation coefficients (penalty rank)."""
        return self.reparam.rank


def build_model(
    y: np.ndarray,
    tconfig: TransformConfig,
    loc_terms: tuple[Term, ...] = (),
    scale_terms: tuple[Term, ...] = (),
    config: ModelConfig | None = None,
    cens: np.ndarray | None = None,
    y2: np.ndarray | None = None,
) -> Model:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("response must be a nonempty 1-d array")
    if cens is not None:
        cens = np.asarray(cens, dtype=np.intp)
        if np.all(cens == CENS_NONE):
            cens = None
    if cens is not None and np.any(cens == CENS_INTERVAL):
        if y2 is None:
            raise ValueError("interval censoring requires upper bounds")
        y2 = np.asarray(y2, dtype=float)
        bad = (cens == CENS_INTERVAL) & ~(y < y2)
        if np.any(bad):
            raise ValueError(f"interval bounds out of order at rows {np.nonzero(bad)[0]}")
    reparam = whiten_penalty(diff_penalty(tconfig.n_coef, order=1))
    return Model(
        y=y,
        loc=AdditivePredictor(terms=tuple(loc_terms)),
        scale=AdditivePredictor(terms=tuple(scale_terms)),
        tconfig=tconfig,
        reparam=reparam,
        config=config or ModelConfig(),
        cens=cens,
        y2=y2,
    )


@dataclass
class ModelState:
    """One point in parameter space (mutable: the sampler updates blocks)."""

    beta0: float
    gamma0: float
    beta: list[np.ndarray]
    gamma: list[np.ndarray]
    tau2_beta: list[float]
    tau2_gamma: list[float]
    delta_tilde: np.ndarray
    log_tau2_delta: float

    def copy(self) -> "ModelState":
        return ModelState(
            beta0=self.beta0,
            gamma0=self.gamma0,
            beta=[b.copy() for b in self.beta],
            gamma=[g.copy() for g in self.gamma],
            tau2_beta=list(self.tau2_beta),
            tau2_gamma=list(self.tau2_gamma),
            delta_tilde=self.delta_tilde.copy(),
            log_tau2_delta=self.log_tau2_delta,
        )


def init_state(model: Model) -> ModelState:
    """All-zero coefficients, term variances 10, transformation variance 1."""
    return ModelState(
        beta0=0.0,
        gamma0=0.0,
        beta=model.loc.zero_coefs(),
        gamma=model.scale.zero_coefs(),
        tau2_beta=[10.0 for t in model.loc.terms if t.has_tau2] or [],
        tau2_gamma=[10.0 for t in model.scale.terms if t.has_tau2] or [],
        delta_tilde=np.zeros(model.n_delta),
        log_tau2_delta=0.0,
    )


def delta_of(model: Model, delta_tilde: np.ndarray) -> np.ndarray:
    """Map whitened coefficients to the natural log-increment scale."""
    return model.reparam.basis @ delta_tilde


def location(model: Model, state: ModelState) -> np.ndarray:
    return model.loc.value(state.beta0, state.beta, model.n_obs)


def log_scale(model: Model, state: ModelState) -> np.ndarray:
    return model.scale.value(state.gamma0, state.gamma, model.n_obs)


def _log_phi(h: np.ndarray) -> np.ndarray:
    return -_LOG_SQRT_2PI - 0.5 * h * h


def _log_interval_mass(h_lo: np.ndarray, h_hi: np.ndarray) -> np.ndarray:
    """ln(Phi(h_hi) - Phi(h_lo)), computed on the better-conditioned side."""
    out = np.empty_like(h_lo)
    left = h_lo + h_hi < 0
    la, lb = log_ndtr(h_lo[left]), log_ndtr(h_hi[left])
    out[left] = lb + np.log1p(-np.exp(la - lb))
    right = ~left
    sa, sb = log_ndtr(-h_lo[right]), log_ndtr(-h_hi[right])
    out[right] = sa + np.log1p(-np.exp(sb - sa))
    return out


def pointwise_loglik(
    model: Model,
    mu: np.ndarray,
    log_sigma: np.ndarray,
    params: TransformParams,
    exact: bool = False,
) -> np.ndarray:
    """Per-observation log-likelihood contributions (may contain -inf)."""
    with np.errstate(over="ignore"):
        sigma = np.exp(log_sigma)
    r = (model.y - mu) / sigma
    h = forward_batch(r, params, model.tconfig, exact)
    if model.cens is None:
        with np.errstate(divide="ignore"):
            log_hp = np.log(deriv_batch(r, params, model.tconfig, exact))
        return _log_phi(h) + log_hp - log_sigma
    out = np.empty(model.n_obs)
    obs = model.cens == CENS_NONE
    with np.errstate(divide="ignore"):
        log_hp = np.log(deriv_batch(r[obs], params, model.tconfig, exact))
    out[obs] = _log_phi(h[obs]) + log_hp - log_sigma[obs]
    left = model.cens == CENS_LEFT
    out[left] = log_ndtr(h[left])
    right = model.cens == CENS_RIGHT
    out[right] = log_ndtr(-h[right])
    inter = model.cens == CENS_INTERVAL
    if np.any(inter):
        r2 = (model.y2[inter] - mu[inter]) / sigma[inter]
        h2 = forward_batch(r2, params, model.tconfig, exact)
        out[inter] = _log_interval_mass(h[inter], h2)
    return out


def loglik(
    model: Model,
    mu: np.ndarray,
    log_sigma: np.ndarray,
    params: TransformParams,
    strict: bool = False,
) -> float:
    """Total log-likelihood; -inf on any nonfinite row (or raise if strict)."""
    pw = pointwise_loglik(model, mu, log_sigma, params)
    if not np.all(np.isfinite(pw)):
        if strict:
            row = int(np.nonzero(~np.isfinite(pw))[0][0])
            raise LikelihoodError(row, "nonfinite log-likelihood contribution")
        return -math.inf
    return float(np.sum(pw))


def coef_log_prior(term: Term, coef: np.ndarray, tau2: float) -> float:
    """Partially improper Gaussian: rank(K) proper directions, rest flat."""
    if term.rank == 0:
        return 0.0
    quad = float(coef @ term.penalty @ coef)
    return -0.5 * term.rank * math.log(2.0 * math.pi * tau2) - 0.5 * quad / tau2


def _invgamma_logpdf(x: float, a: float, b: float) -> float:
    return a * math.log(b) - float(gammaln(a)) - (a + 1.0) * math.log(x) - b / x


def log_posterior(model: Model, state: ModelState) -> float:
    """Unnormalized joint log-posterior at ``state``."""
    if state.log_tau2_delta < model.config.log_tau2_floor:
        return -math.inf
    params = refresh_cache(delta_of(model, state.delta_tilde), model.tconfig)
    total = loglik(model, location(model, state), log_scale(model, state), params)
    cfg = model.config
    for terms, coefs, tau2s in (
        (model.loc.terms, state.beta, state.tau2_beta),
        (model.scale.terms, state.gamma, state.tau2_gamma),
    ):
        it = iter(tau2s)
        for term, coef in zip(terms, coefs):
            tau2 = next(it) if term.has_tau2 else math.nan
            total += coef_log_prior(term, coef, tau2)
            if term.has_tau2:
                total += _invgamma_logpdf(tau2, cfg.ig_a, cfg.ig_b)
    dt, v = state.delta_tilde, state.log_tau2_delta
    total += -0.5 * dt.size * math.log(2.0 * math.pi) - 0.5 * dt.size * v
    total += -0.5 * float(dt @ dt) * math.exp(-v)
    total += weibull_log_tau2(v, cfg.psi)[0]
    return total


# ---------------------------------------------------------------------------
# Transformation-block gradient


def _hjac_accumulate(
    r: np.ndarray,
    c_h: np.ndarray,
    c_lnh: np.ndarray,
    params: TransformParams,
    config: TransformConfig,
) -> np.ndarray:
    """Sum over points of c_h * dh/d(delta) + c_lnh * d(ln h')/d(delta).

    ``c_lnh`` entries must be zero wherever the corresponding point sits on a
    piece whose log-derivative does not exist in the mixture being assembled
    (censored bounds pass c_lnh = 0).
    """
    grid, gb = config.grid, config.grid_basis
    a, b, d, lam = grid.a, grid.b, grid.d, config.lam
    e = params.e_centered
    n_coef = e.size
    w = _slope_weights(n_coef)
    E = float(w @ e)
    out = np.zeros(n_coef)

    core = (r >= a) & (r <= b)
    if np.any(core):
        rc, ch, cl = r[core], c_h[core], c_lnh[core]
        idx = np.clip(np.floor((rc - a) / gb.step).astype(np.intp), 0, gb.points.size - 2)
        t = (rc - gb.points[idx]) / gb.step
        C = (1.0 - t)[:, None] * gb.cum_cubic[idx] + t[:, None] * gb.cum_cubic[idx + 1]
        Q = (1.0 - t)[:, None] * gb.scatter_quad[idx] + t[:, None] * gb.scatter_quad[idx + 1]
        C0 = gb.cum_cubic[0]
        u = C @ e
        u0 = float(C0 @ e)
        Qe = Q @ e
        # Extreme coefficient draws can underflow Qe; the caller's finiteness
        # guard turns the resulting nan gradient into a rejection.
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            acc = ((b - a) / E) * (C.T @ ch - np.sum(ch) * C0 - w * (float(ch @ (u - u0)) / E))
            acc += Q.T @ (cl / Qe) - w * (np.sum(cl) / E)
            out += e * acc

    # Boundary-slope directions shared by transitions and tails.
    mult_a = mult_b = 0.0
    lo, hi = r < a, r > b
    if config.mode == "identity_tails" or not (np.any(lo) or np.any(hi)):
        pass
    elif config.mode == "linear_tails":
        if np.any(lo):
            mult_a = float(c_h[lo] @ (r[lo] - a) + np.sum(c_lnh[lo]) / params.slope_a)
        if np.any(hi):
            mult_b = float(c_h[hi] @ (r[hi] - b) + np.sum(c_lnh[hi]) / params.slope_b)
    else:
        ltr = lo & (r >= a - lam)
        if np.any(ltr):
            rl, chl, cll = r[ltr], c_h[ltr], c_lnh[ltr]
            t = (a - rl) / lam
            hp = (1.0 - t) * params.slope_a + t
            p = (a - 0.5 * rl) / lam
            p_a = a / (2.0 * lam)
            mult_a += float(chl @ (rl * (1.0 - p) - a * (1.0 - p_a)) + cll @ ((1.0 - t) / hp))
        ltail = r < a - lam
        if np.any(ltail):
            mult_a += -0.5 * lam * float(np.sum(c_h[ltail]))
        rtr = hi & (r <= b + lam)
        if np.any(rtr):
            rr, chr_, clr = r[rtr], c_h[rtr], c_lnh[rtr]
            t = (rr - b) / lam
            hp = (1.0 - t) * params.slope_b + t
            q = (0.5 * rr - b) / lam
            q_b = -b / (2.0 * lam)
            mult_b += float(chr_ @ (rr * (1.0 - q) - b * (1.0 - q_b)) + clr @ ((1.0 - t) / hp))
        rtail = r > b + lam
        if np.any(rtail):
            mult_b += 0.5 * lam * float(np.sum(c_h[rtail]))

    if mult_a != 0.0 or mult_b != 0.0:
        qa, qb = gb.scatter_quad[0], gb.scatter_quad[-1]
        pa, pb = float(qa @ e), float(qb @ e)
        scale = (b - a) / (d * E * E)
        if mult_a != 0.0:
            out += mult_a * scale * e * (qa * E - pa * w)
        if mult_b != 0.0:
            out += mult_b * scale * e * (qb * E - pb * w)
    return out


def _mills(log_num: np.ndarray, log_den: np.ndarray) -> np.ndarray:
    return np.exp(log_num - log_den)


def nuts_value_grad(
    model: Model, theta: np.ndarray, mu: np.ndarray, log_sigma: np.ndarray
) -> tuple[float, np.ndarray]:
    """Log-density and gradient of the transformation block.

    ``theta`` stacks the whitened coefficients and ``v = ln tau2_delta``.  The
    value contains every posterior term that depends on ``theta``: the
    likelihood, the iid normal prior on the whitened block, and the Weibull
    hyperprior in log coordinates.  Values below the hard floor on ``v`` (and
    any nonfinite likelihood) return ``-inf`` so the sampler rejects.
    """
    dt, v = theta[:-1], float(theta[-1])
    n_dt = dt.size
    grad = np.zeros(theta.size)
    if v < model.config.log_tau2_floor:
        return -math.inf, grad
    params = refresh_cache(delta_of(model, dt), model.tconfig)
    sigma = np.exp(log_sigma)
    r = (model.y - mu) / sigma
    h = forward_batch(r, params, model.tconfig)
    hp = deriv_batch(r, params, model.tconfig)

    if model.cens is None:
        with np.errstate(divide="ignore"):
            pw = _log_phi(h) + np.log(hp) - log_sigma
        points, c_h, c_lnh = r, -h, np.ones_like(r)
    else:
        pw = np.empty(model.n_obs)
        pts, chs, cls = [], [], []
        obs = model.cens == CENS_NONE
        if np.any(obs):
            with np.errstate(divide="ignore"):
                pw[obs] = _log_phi(h[obs]) + np.log(hp[obs]) - log_sigma[obs]
            pts.append(r[obs])
            chs.append(-h[obs])
            cls.append(np.ones(int(np.count_nonzero(obs))))
        left = model.cens == CENS_LEFT
        if np.any(left):
            lp = log_ndtr(h[left])
            pw[left] = lp
            pts.append(r[left])
            chs.append(_mills(_log_phi(h[left]), lp))
            cls.append(np.zeros(int(np.count_nonzero(left))))
        right = model.cens == CENS_RIGHT
        if np.any(right):
            lp = log_ndtr(-h[right])
            pw[right] = lp
            pts.append(r[right])
            chs.append(-_mills(_log_phi(h[right]), lp))
            cls.append(np.zeros(int(np.count_nonzero(right))))
        inter = model.cens == CENS_INTERVAL
        if np.any(inter):
            r2 = (model.y2[inter] - mu[inter]) / sigma[inter]
            h2 = forward_batch(r2, params, model.tconfig)
            lp = _log_interval_mass(h[inter], h2)
            pw[inter] = lp
            pts.extend([r2, r[inter]])
            chs.extend([_mills(_log_phi(h2), lp), -_mills(_log_phi(h[inter]), lp)])
            cls.extend([np.zeros(h2.size), np.zeros(h2.size)])
        points = np.concatenate(pts)
        c_h = np.concatenate(chs)
        c_lnh = np.concatenate(cls)

    if not np.all(np.isfinite(pw)):
        return -math.inf, grad
    value = float(np.sum(pw))
    grad_delta = _hjac_accumulate(points, c_h, c_lnh, params, model.tconfig)
    grad[:-1] = model.reparam.basis.T @ grad_delta

    inv_tau2 = math.exp(-v)
    value += -0.5 * n_dt * math.log(2.0 * math.pi) - 0.5 * n_dt * v
    value += -0.5 * float(dt @ dt) * inv_tau2
    wlp, wgrad = weibull_log_tau2(v, model.config.psi)
    value += wlp
    grad[:-1] += -dt * inv_tau2
    grad[-1] = -0.5 * n_dt + 0.5 * float(dt @ dt) * inv_tau2 + wgrad
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        return -math.inf, np.zeros(theta.size)
    return value, grad


# ---------------------------------------------------------------------------
# Scores for the location/scale coefficient blocks


def residual_scores(
    model: Model, mu: np.ndarray, log_sigma: np.ndarray, params: TransformParams
) -> tuple[np.ndarray, np.ndarray]:
    """Per-observation scores (d log-lik / d mu_i, d log-lik / d ln sigma_i)."""
    with np.errstate(over="ignore"):
        sigma = np.exp(log_sigma)
    r = (model.y - mu) / sigma
    h = forward_batch(r, params, model.tconfig)
    hp = deriv_batch(r, params, model.tconfig)
    if model.cens is None:
        hpp = second_deriv_batch(r, params, model.tconfig)
        g_r = -h * hp + hpp / hp
        return -g_r / sigma, -g_r * r - 1.0
    s_mu = np.empty(model.n_obs)
    s_ls = np.empty(model.n_obs)
    obs = model.cens == CENS_NONE
    if np.any(obs):
        hpp = second_deriv_batch(r[obs], params, model.tconfig)
        g_r = -h[obs] * hp[obs] + hpp / hp[obs]
        s_mu[obs] = -g_r / sigma[obs]
        s_ls[obs] = -g_r * r[obs] - 1.0
    left = model.cens == CENS_LEFT
    if np.any(left):
        g_r = _mills(_log_phi(h[left]), log_ndtr(h[left])) * hp[left]
        s_mu[left] = -g_r / sigma[left]
        s_ls[left] = -g_r * r[left]
    right = model.cens == CENS_RIGHT
    if np.any(right):
        g_r = -_mills(_log_phi(h[right]), log_ndtr(-h[right])) * hp[right]
        s_mu[right] = -g_r / sigma[right]
        s_ls[right] = -g_r * r[right]
    inter = model.cens == CENS_INTERVAL
    if np.any(inter):
        r2 = (model.y2[inter] - mu[inter]) / sigma[inter]
        h2 = forward_batch(r2, params, model.tconfig)
        hp2 = deriv_batch(r2, params, model.tconfig)
        lp = _log_interval_mass(h[inter], h2)
        g2 = _mills(_log_phi(h2), lp) * hp2
        g1 = _mills(_log_phi(h[inter]), lp) * hp[inter]
        s_mu[inter] = -(g2 - g1) / sigma[inter]
        s_ls[inter] = -(g2 * r2 - g1 * r[inter])
    return s_mu, s_ls


def update_intercepts(model: Model, state: ModelState) -> None:
    """Exact recentering so the standardized residuals have moments (0, 1).

    Solves for the two intercepts given the current term contributions: the
    location intercept is a precision-weighted mean, the log-scale intercept
    matches the second moment.  Population (divide-by-n) moments are used, so
    sample mean and mean square of ``r`` are 0 and 1 to machine precision.
    Censored rows enter through their observed bound (interval rows through
    the midpoint), keeping the update well defined for any censoring pattern.
    """
    y = model.y
    if model.cens is not None and np.any(model.cens == CENS_INTERVAL):
        y = y.copy()
        inter = model.cens == CENS_INTERVAL
        y[inter] = 0.5 * (y[inter] + model.y2[inter])
    mu_terms = model.loc.value(0.0, state.beta, model.n_obs)
    ls_terms = model.scale.value(0.0, state.gamma, model.n_obs)
    inv_st = np.exp(-ls_terms)
    state.beta0 = float(np.sum((y - mu_terms) * inv_st) / np.sum(inv_st))
    u = (y - state.beta0 - mu_terms) * inv_st
    state.gamma0 = 0.5 * math.log(float(np.mean(u * u)))
