"""Posterior predictive quantities and MCMC diagnostics.

Prediction works draw by draw: each retained state defines a full conditional
distribution through ``(mu(x), sigma(x), h)``, so the predictive CDF, PDF and
quantile draws are deterministic transforms of the stored samples.  Summaries
report the posterior mean and an equal-tailed credible interval by default;
highest-density intervals are available by flag.

Diagnostics follow the rank-normalized split formulation: ranks are taken over
all split chains pooled, mapped through the normal quantile function, and fed
to the classic between/within variance ratio (R-hat) and to Geyer-paired FFT
autocovariance sums (bulk ESS).  Tail ESS applies the same machinery to 5%/95%
indicator chains without rank normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import rankdata

from .mcmc import ChainOutput
from .model import Model, delta_of
from .predictor import term_design
from .transform import TransformParams, deriv_batch, forward_batch, inverse_batch, refresh_cache

__all__ = [
    "PosteriorSamples",
    "stack_chains",
    "predictor_draws",
    "transform_draws",
    "predictive_cdf",
    "predictive_pdf",
    "predictive_quantile",
    "summarize",
    "quantile_interval",
    "hpd_interval",
    "rhat",
    "ess",
    "diagnostics_report",
]


@dataclass(frozen=True)
class PosteriorSamples:
    """Stacked post-warmup draws from all chains, plus provenance."""

    model: Model
    beta0: np.ndarray = field(repr=False)
    gamma0: np.ndarray = field(repr=False)
    beta: list[np.ndarray] = field(repr=False)
    gamma: list[np.ndarray] = field(repr=False)
    tau2_beta: list[np.ndarray] = field(repr=False)
    tau2_gamma: list[np.ndarray] = field(repr=False)
    delta_tilde: np.ndarray = field(repr=False)
    log_tau2_delta: np.ndarray = field(repr=False)
    chain: np.ndarray = field(repr=False)

    @property
    def n_draws(self) -> int:
        return self.beta0.size

    def thinned(self, step: int) -> "PosteriorSamples":
        if step <= 1:
            return self
        idx = np.arange(0, self.n_draws, step)
        return PosteriorSamples(
            model=self.model,
            beta0=self.beta0[idx],
            gamma0=self.gamma0[idx],
            beta=[b[idx] for b in self.beta],
            gamma=[g[idx] for g in self.gamma],
            tau2_beta=[t[idx] for t in self.tau2_beta],
            tau2_gamma=[t[idx] for t in self.tau2_gamma],
            delta_tilde=self.delta_tilde[idx],
            log_tau2_delta=self.log_tau2_delta[idx],
            chain=self.chain[idx],
        )


def stack_chains(model: Model, outputs: list[ChainOutput]) -> PosteriorSamples:
    def cat(key):
        return np.concatenate([np.atleast_1d(o.draws[key]) for o in outputs], axis=0)

    chain = np.concatenate(
        [np.full(np.atleast_1d(o.draws["beta0"]).shape[0], c) for c, o in enumerate(outputs)]
    )
    beta, tau2_beta = [], []
    for t in model.loc.terms:
        # single-coefficient blocks are stored flat; coefficients are 2-d here
        beta.append(cat(f"loc:{t.spec.name}").reshape(-1, t.n_coef))
        if t.has_tau2:
            tau2_beta.append(cat(f"loc:{t.spec.name}:tau2"))
    gamma, tau2_gamma = [], []
    for t in model.scale.terms:
        gamma.append(cat(f"scale:{t.spec.name}").reshape(-1, t.n_coef))
        if t.has_tau2:
            tau2_gamma.append(cat(f"scale:{t.spec.name}:tau2"))
    return PosteriorSamples(
        model=model,
        beta0=cat("beta0"),
        gamma0=cat("gamma0"),
        beta=beta,
        gamma=gamma,
        tau2_beta=tau2_beta,
        tau2_gamma=tau2_gamma,
        delta_tilde=cat("delta_tilde"),
        log_tau2_delta=cat("log_tau2_delta"),
        chain=chain,
    )


def predictor_draws(
    samples: PosteriorSamples, data: Mapping[str, np.ndarray] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Per-draw location and log-scale, shape (draws, rows).

    ``data = None`` evaluates on the training rows (stored designs); an empty
    mapping stands for a single generic row, which is the natural request for
    models without covariates.
    """
    model = samples.model
    if data is None:
        designs_l = [t.design for t in model.loc.terms]
        designs_s = [t.design for t in model.scale.terms]
        n = model.n_obs
    else:
        designs_l = [term_design(t, data) for t in model.loc.terms]
        designs_s = [term_design(t, data) for t in model.scale.terms]
        if designs_l:
            n = designs_l[0].shape[0]
        elif designs_s:
            n = designs_s[0].shape[0]
        else:
            n = len(next(iter(data.values()))) if data else 1
    mu = np.tile(samples.beta0[:, None], (1, n))
    for design, coefs in zip(designs_l, samples.beta):
        mu += coefs @ design.T
    ls = np.tile(samples.gamma0[:, None], (1, n))
    for design, coefs in zip(designs_s, samples.gamma):
        ls += coefs @ design.T
    return mu, ls


def transform_draws(samples: PosteriorSamples) -> list[TransformParams]:
    """Refresh the transformation cache once per retained draw."""
    model = samples.model
    return [
        refresh_cache(delta_of(model, dt), model.tconfig) for dt in samples.delta_tilde
    ]


def predictive_cdf(
    samples: PosteriorSamples, data: Mapping | None, y: np.ndarray
) -> np.ndarray:
    """Per-draw conditional CDF values, shape (draws, rows, len(y))."""
    model = samples.model
    mu, ls = predictor_draws(samples, data)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    params_list = transform_draws(samples)
    out = np.empty((samples.n_draws, mu.shape[1], y.size))
    for t in range(samples.n_draws):
        r = (y[None, :] - mu[t][:, None]) / np.exp(ls[t])[:, None]
        h = forward_batch(r.ravel(), params_list[t], model.tconfig).reshape(r.shape)
        out[t] = ndtr(h)
    return out


def predictive_pdf(
    samples: PosteriorSamples, data: Mapping | None, y: np.ndarray
) -> np.ndarray:
    """Per-draw conditional density values, shape (draws, rows, len(y))."""
    model = samples.model
    mu, ls = predictor_draws(samples, data)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    params_list = transform_draws(samples)
    out = np.empty((samples.n_draws, mu.shape[1], y.size))
    for t in range(samples.n_draws):
        sigma_t = np.exp(ls[t])
        r = (y[None, :] - mu[t][:, None]) / sigma_t[:, None]
        h = forward_batch(r.ravel(), params_list[t], model.tconfig).reshape(r.shape)
        hp = deriv_batch(r.ravel(), params_list[t], model.tconfig).reshape(r.shape)
        out[t] = np.exp(-0.5 * h * h) / math.sqrt(2.0 * math.pi) * hp / sigma_t[:, None]
    return out


def predictive_quantile(
    samples: PosteriorSamples, data: Mapping | None, u: np.ndarray
) -> np.ndarray:
    """Per-draw conditional quantiles, shape (draws, rows, len(u))."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("probability levels must lie strictly inside (0, 1)")
    model = samples.model
    mu, ls = predictor_draws(samples, data)
    z = ndtri(u)
    params_list = transform_draws(samples)
    out = np.empty((samples.n_draws, mu.shape[1], u.size))
    for t in range(samples.n_draws):
        r = inverse_batch(z, params_list[t], model.tconfig)
        out[t] = mu[t][:, None] + np.exp(ls[t])[:, None] * r[None, :]
    return out


def quantile_interval(draws: np.ndarray, mass: float = 0.90) -> tuple[np.ndarray, np.ndarray]:
    """Equal-tailed interval along the first (draws) axis."""
    tail = 0.5 * (1.0 - mass)
    lo = np.quantile(draws, tail, axis=0)
    hi = np.quantile(draws, 1.0 - tail, axis=0)
    return lo, hi


def hpd_interval(draws: np.ndarray, mass: float = 0.90) -> tuple[np.ndarray, np.ndarray]:
    """Highest-density interval along the first axis (unimodal assumption)."""
    shaped = np.sort(np.reshape(draws, (draws.shape[0], -1)), axis=0)
    T = shaped.shape[0]
    k = max(1, int(math.ceil(mass * T)))
    if k >= T:
        lo, hi = shaped[0], shaped[-1]
    else:
        widths = shaped[k:] - shaped[: T - k]
        start = np.argmin(widths, axis=0)
        cols = np.arange(shaped.shape[1])
        lo, hi = shaped[start, cols], shaped[start + k, cols]
    tail_shape = draws.shape[1:]
    return lo.reshape(tail_shape), hi.reshape(tail_shape)


def summarize(draws: np.ndarray, mass: float = 0.90, hpd: bool = False) -> dict[str, np.ndarray]:
    """Posterior mean and credible bounds along the draws axis."""
    lo, hi = (hpd_interval if hpd else quantile_interval)(draws, mass)
    return {"mean": np.mean(draws, axis=0), "lo": lo, "hi": hi}


# ---------------------------------------------------------------------------
# Convergence diagnostics


def _split(chains: np.ndarray) -> np.ndarray:
    """Split each chain in half: (m, n) -> (2m, n//2)."""
    m, n = chains.shape
    half = n // 2
    return np.concatenate([chains[:, :half], chains[:, n - half :]], axis=0)


def _rank_normalize(chains: np.ndarray) -> np.ndarray:
    """Pooled average ranks mapped through the normal quantile function."""
    ranks = rankdata(chains.ravel(), method="average")
    z = ndtri((ranks - 0.375) / (ranks.size + 0.25))
    return z.reshape(chains.shape)


def _basic_rhat(chains: np.ndarray) -> float:
    m, n = chains.shape
    means = np.mean(chains, axis=1)
    variances = np.var(chains, axis=1, ddof=1)
    w = float(np.mean(variances))
    b_over_n = float(np.var(means, ddof=1))
    if w <= 0.0:
        return math.nan
    var_plus = (n - 1) / n * w + b_over_n
    return math.sqrt(var_plus / w)


def rhat(chains: np.ndarray) -> float:
    """Rank-normalized split R-hat (max of bulk and folded variants)."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    split = _split(chains)
    if np.ptp(split) == 0.0:
        return math.nan
    bulk = _basic_rhat(_rank_normalize(split))
    folded = _basic_rhat(_rank_normalize(np.abs(split - np.median(split))))
    return max(bulk, folded)


def _autocov_fft(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of one chain via FFT."""
    n = x.size
    xc = x - np.mean(x)
    size = 2 ** int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real
    return acov / n


def _ess_from_chains(chains: np.ndarray) -> float:
    """Geyer initial-monotone-sequence ESS for (m, n) chains."""
    m, n = chains.shape
    if n < 4:
        return math.nan
    variances = np.var(chains, axis=1, ddof=1)
    w = float(np.mean(variances))
    b_over_n = float(np.var(np.mean(chains, axis=1), ddof=1)) if m > 1 else 0.0
    var_plus = (n - 1) / n * w + b_over_n
    if var_plus <= 0.0:
        return math.nan
    acov = np.mean([_autocov_fft(chains[c]) for c in range(m)], axis=0)
    rho = 1.0 - (w - acov) / var_plus
    # Geyer pairing: sum rho_{2k} + rho_{2k+1} while positive, enforce monotone
    tau = -1.0 + 2.0 * rho[0]
    prev_pair = math.inf
    k = 1
    while k + 1 < n:
        pair = rho[k] + rho[k + 1]
        if pair < 0.0:
            break
        pair = min(pair, prev_pair)
        tau += 2.0 * pair
        prev_pair = pair
        k += 2
    tau = max(tau, 1.0 / math.log10(m * n + 10.0))
    return m * n / tau


def ess(chains: np.ndarray) -> tuple[float, float]:
    """(bulk, tail) effective sample sizes from per-chain draws (m, n)."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    split = _split(chains)
    if np.ptp(split) == 0.0:
        return math.nan, math.nan
    bulk = _ess_from_chains(_rank_normalize(split))
    q05, q95 = np.quantile(chains, [0.05, 0.95])
    lo = _ess_from_chains(_split((chains <= q05).astype(float)))
    hi = _ess_from_chains(_split((chains >= q95).astype(float)))
    tail = math.nan if (math.isnan(lo) or math.isnan(hi)) else min(lo, hi)
    return bulk, tail


def _parameter_chains(outputs: list[ChainOutput]) -> dict[str, np.ndarray]:
    """Flatten block draws into named scalar chains, shape (m, n) each."""
    chains = {}
    for key, arr0 in outputs[0].draws.items():
        if arr0.ndim == 1:
            chains[key] = np.stack([o.draws[key] for o in outputs])
        else:
            for j in range(arr0.shape[1]):
                chains[f"{key}[{j}]"] = np.stack([o.draws[key][:, j] for o in outputs])
    return chains


def diagnostics_report(outputs: list[ChainOutput]) -> dict:
    """Per-parameter R-hat/ESS plus pooled sampler notes, JSON-serializable."""
    chains = _parameter_chains(outputs)
    params = {}
    for name, arr in chains.items():
        bulk, tail = ess(arr)
        params[name] = {
            "rhat": _none_if_nan(rhat(arr)),
            "ess_bulk": _none_if_nan(bulk),
            "ess_tail": _none_if_nan(tail),
        }
    accept = {}
    for key in outputs[0].accept:
        accept[key] = float(np.mean([o.accept[key] for o in outputs]))
    return {
        "parameters": params,
        "acceptance": accept,
        "divergences": int(sum(o.divergences for o in outputs)),
        "max_depth_hits": int(sum(o.max_depth_hits for o in outputs)),
        "nan_accepts": int(sum(o.nan_accepts for o in outputs)),
    }


def _none_if_nan(x: float):
    return None if (x != x) else float(x)
