"""Metropolis-within-Gibbs engine for the transformation regression model.

Each sweep updates, in order: every location term by a scoring-step proposal
(IWLS) followed by a conjugate variance draw, every scale term likewise, the
two intercepts by an exact deterministic recentering, and finally the
transformation block ``(delta_tilde, ln tau2_delta)`` by NUTS.

The IWLS proposal is a Gaussian centered at a half Fisher-scoring step,
``N(theta + (eps^2/2) F^{-1} s, eps^2 F^{-1})`` with the expected information
``F = B'WB + K/tau2`` of the Gaussian working model (location weights
``1/sigma_i^2``, scale weights 2).  Because ``F`` does not depend on the block
coefficients, the proposal normalizations cancel in the acceptance ratio.

Step sizes are tuned by dual averaging during warmup (acceptance targets 0.5
for IWLS, 0.9 for NUTS); the NUTS mass matrix comes from windowed variance
estimates of the transformation block.  Chains use counter-based RNG streams
keyed by ``seed XOR chain``, so runs are bitwise reproducible and chain
execution order is irrelevant.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .model import (
    Model,
    ModelState,
    init_state,
    loglik,
    nuts_value_grad,
    pointwise_loglik,
    residual_scores,
    update_intercepts,
)
from .nuts import (
    DualAveraging,
    NutsConfig,
    NutsKernel,
    WarmupSchedule,
    WelfordVar,
    find_reasonable_epsilon,
    leapfrog,
)
from .priors import softclip, softclip_inv, softclip_log_jac, softclip_log_jac_grad, weibull_log_tau2
from .transform import refresh_cache

__all__ = [
    "KernelConfig",
    "ChainOutput",
    "InitializationError",
    "initialize",
    "run_chains",
    "gibbs_tau2",
]

_CLIP_LO, _CLIP_HI = 0.025, 10000.0  # temporary uniform prior bounds used by the initializer


class InitializationError(RuntimeError):
    """The pre-sampling optimizer could not make any ascent progress."""


@dataclass(frozen=True)
class KernelConfig:
    """Sampler settings for one fit."""

    warmup: int = 1000
    samples: int = 1000
    thin: int = 1
    chains: int = 4
    seed: int = 0
    iwls_target_accept: float = 0.5
    nuts_target_accept: float = 0.9
    max_tree_depth: int = 10
    hmc_fixed_l: int | None = None  # fixed-length HMC instead of NUTS (untuned)

    def __post_init__(self):
        if not (0.0 < self.iwls_target_accept < 1.0 and 0.0 < self.nuts_target_accept < 1.0):
            raise ValueError("acceptance targets must lie in (0, 1)")
        if self.warmup <= 0 or self.samples <= 0:
            raise ValueError("warmup and samples must be positive")


@dataclass
class ChainOutput:
    """Post-thinning draws and sampler notes for one chain."""

    draws: dict[str, np.ndarray]
    accept: dict[str, float]
    divergences: int
    max_depth_hits: int
    nan_accepts: int
    eps: dict[str, float]
    mass_diag: np.ndarray


# ---------------------------------------------------------------------------
# Conjugate variance update


def gibbs_tau2(rng: np.random.Generator, a: float, b: float, rank: int, quad: float) -> float:
    """Draw tau2 from its inverse-gamma full conditional IG(a + rank/2, b + quad/2)."""
    shape = a + 0.5 * rank
    rate = b + 0.5 * quad
    return rate / rng.gamma(shape)


# ---------------------------------------------------------------------------
# IWLS block kernel


class IwlsBlock:
    """Per-term proposal state: which block, its step size, its counters."""

    def __init__(self, kind: str, index: int, name: str, target: float):
        self.kind = kind  # "loc" | "scale"
        self.index = index
        self.name = name
        self.eps = 1.0
        self.dual = DualAveraging(1.0, target)
        self.n_steps = 0
        self.n_accept = 0
        self.nan_accepts = 0

    @property
    def accept_rate(self) -> float:
        return self.n_accept / self.n_steps if self.n_steps else math.nan

    def step(self, model, state, mu, ls, params, rng, adapting) -> tuple[np.ndarray, np.ndarray]:
        """One MH update of this block; returns possibly-new (mu, ls) arrays."""
        loc_side = self.kind == "loc"
        pred = model.loc if loc_side else model.scale
        term = pred.terms[self.index]
        coef = (state.beta if loc_side else state.gamma)[self.index]
        tau2s = state.tau2_beta if loc_side else state.tau2_gamma
        tau2 = tau2s[self.tau2_slot(pred)] if term.has_tau2 else math.inf
        B, K = term.design, term.penalty

        sigma = np.exp(ls)
        if loc_side:
            w = 1.0 / (sigma * sigma)
        s_mu, s_ls = residual_scores(model, mu, ls, params)
        score_vec = s_mu if loc_side else s_ls
        score = B.T @ score_vec - (K @ coef) / tau2 if term.has_tau2 else B.T @ score_vec
        F = (B.T * w) @ B if loc_side else 2.0 * (B.T @ B)
        if term.has_tau2:
            F = F + K / tau2
        p = F.shape[0]
        F[np.diag_indices_from(F)] += 1e-8 * np.trace(F) / p
        try:
            L = cholesky(F, lower=True)
        except np.linalg.LinAlgError:
            self.nan_accepts += 1
            self.n_steps += 1
            if adapting:
                self.eps = self.dual.update(0.0)
            return mu, ls

        eps = self.eps
        m = coef + 0.5 * eps * eps * cho_solve((L, True), score)
        z = rng.standard_normal(p)
        prop = m + eps * solve_triangular(L, z, lower=True, trans="T")

        shift = B @ (prop - coef)
        mu_new, ls_new = (mu + shift, ls) if loc_side else (mu, ls + shift)
        ll_new = loglik(model, mu_new, ls_new, params)
        log_alpha = -math.inf
        if math.isfinite(ll_new):
            ll_old = float(np.sum(pointwise_loglik(model, mu, ls, params)))
            s_mu2, s_ls2 = residual_scores(model, mu_new, ls_new, params)
            score2_vec = s_mu2 if loc_side else s_ls2
            score2 = B.T @ score2_vec - (K @ prop) / tau2 if term.has_tau2 else B.T @ score2_vec
            m2 = prop + 0.5 * eps * eps * cho_solve((L, True), score2)
            fwd = L.T @ (prop - m)
            rev = L.T @ (coef - m2)
            prior_old = -0.5 * float(coef @ K @ coef) / tau2 if term.has_tau2 else 0.0
            prior_new = -0.5 * float(prop @ K @ prop) / tau2 if term.has_tau2 else 0.0
            log_alpha = (ll_new + prior_new) - (ll_old + prior_old)
            log_alpha += (float(fwd @ fwd) - float(rev @ rev)) / (2.0 * eps * eps)

        self.n_steps += 1
        if math.isnan(log_alpha):
            self.nan_accepts += 1
            alpha = 0.0
        else:
            alpha = math.exp(min(0.0, log_alpha))
        if math.log(rng.uniform()) < log_alpha:
            self.n_accept += 1
            coef[:] = prop
            mu, ls = mu_new, ls_new
        if adapting:
            self.eps = self.dual.update(alpha)
        return mu, ls

    def tau2_slot(self, pred) -> int:
        slot = 0
        for k in range(self.index):
            if pred.terms[k].has_tau2:
                slot += 1
        return slot


# ---------------------------------------------------------------------------
# Initialization (pre-sampling optimizer)


def _ascend(value_grad, x0: np.ndarray, max_iter: int = 5000, gtol: float = 1e-6) -> np.ndarray:
    """Gradient ascent with a backtracking (Armijo) line search."""
    x = x0
    f, g = value_grad(x)
    if not math.isfinite(f):
        raise InitializationError("objective not finite at the starting point")
    step = 1.0
    for it in range(max_iter):
        gnorm2 = float(g @ g)
        if math.sqrt(gnorm2) <= gtol:
            break
        s = step
        improved = False
        for _ in range(60):
            x1 = x + s * g
            f1, g1 = value_grad(x1)
            if math.isfinite(f1) and f1 >= f + 1e-4 * s * gnorm2:
                improved = True
                break
            s *= 0.5
        if not improved:
            if it == 0:
                raise InitializationError("line search failed on the first iteration")
            break
        x, f, g = x1, f1, g1
        step = min(2.0 * s, 1000.0)
    return x


def _tau2_terms(pred) -> list[int]:
    return [i for i, t in enumerate(pred.terms) if t.has_tau2]


def initialize(model: Model) -> ModelState:
    """Two-stage ascent to a sensible starting state.

    Stage 1 optimizes intercepts, all term coefficients and their variances
    with the transformation held at the identity; stage 2 optimizes the
    transformation block and its variance.  During both stages the variance
    hyperpriors are replaced by a uniform on (0.025, 10000), with variances
    mapped through a smooth clipping transform (log-Jacobian included) so the
    search is unconstrained.  The real hyperpriors are untouched on exit.
    """
    state = init_state(model)
    params0 = refresh_cache(np.zeros(model.tconfig.n_coef), model.tconfig)
    loc_t2, sca_t2 = _tau2_terms(model.loc), _tau2_terms(model.scale)
    sizes_b = [t.n_coef for t in model.loc.terms]
    sizes_g = [t.n_coef for t in model.scale.terms]
    n_b, n_g = sum(sizes_b), sum(sizes_g)
    n_z = len(loc_t2) + len(sca_t2)

    def unpack(phi):
        k = 0
        beta0 = phi[k]; k += 1
        beta = []
        for s in sizes_b:
            beta.append(phi[k : k + s]); k += s
        gamma0 = phi[k]; k += 1
        gamma = []
        for s in sizes_g:
            gamma.append(phi[k : k + s]); k += s
        z = phi[k : k + n_z]
        return beta0, beta, gamma0, gamma, z

    def stage1(phi):
        beta0, beta, gamma0, gamma, z = unpack(phi)
        tau2 = softclip(z, _CLIP_LO, _CLIP_HI)
        mu = model.loc.value(beta0, beta, model.n_obs)
        ls = model.scale.value(gamma0, gamma, model.n_obs)
        pw = pointwise_loglik(model, mu, ls, params0)
        if not np.all(np.isfinite(pw)):
            return -math.inf, phi
        value = float(np.sum(pw))
        grad = np.empty_like(phi)
        s_mu, s_ls = residual_scores(model, mu, ls, params0)
        k = 0
        grad[k] = float(np.sum(s_mu)); k += 1
        zi = 0
        for i, term in enumerate(model.loc.terms):
            g = term.design.T @ s_mu
            if term.has_tau2:
                t2 = tau2[loc_t2.index(i)]
                quad = float(beta[i] @ term.penalty @ beta[i])
                value += -0.5 * term.rank * math.log(2.0 * math.pi * t2) - 0.5 * quad / t2
                g = g - (term.penalty @ beta[i]) / t2
            grad[k : k + sizes_b[i]] = g; k += sizes_b[i]
        grad[k] = float(np.sum(s_ls)); k += 1
        for i, term in enumerate(model.scale.terms):
            g = term.design.T @ s_ls
            if term.has_tau2:
                t2 = tau2[len(loc_t2) + sca_t2.index(i)]
                quad = float(gamma[i] @ term.penalty @ gamma[i])
                value += -0.5 * term.rank * math.log(2.0 * math.pi * t2) - 0.5 * quad / t2
                g = g - (term.penalty @ gamma[i]) / t2
            grad[k : k + sizes_g[i]] = g; k += sizes_g[i]
        # d value / d z = (d value / d tau2) * dtau2/dz + d log-Jacobian / dz;
        # the uniform hyperprior is constant on the reachable range
        if n_z:
            ljac = softclip_log_jac(z, _CLIP_LO, _CLIP_HI)
            value += float(np.sum(ljac)) - n_z * math.log(_CLIP_HI - _CLIP_LO)
            dtau2 = np.exp(ljac)
            dv = np.empty(n_z)
            for j, i in enumerate(loc_t2):
                term = model.loc.terms[i]
                quad = float(beta[i] @ term.penalty @ beta[i])
                dv[j] = -0.5 * term.rank / tau2[j] + 0.5 * quad / tau2[j] ** 2
            for j, i in enumerate(sca_t2):
                term = model.scale.terms[i]
                quad = float(gamma[i] @ term.penalty @ gamma[i])
                jj = len(loc_t2) + j
                dv[jj] = -0.5 * term.rank / tau2[jj] + 0.5 * quad / tau2[jj] ** 2
            grad[k:] = dv * dtau2 + softclip_log_jac_grad(z, _CLIP_LO, _CLIP_HI)
        return value, grad

    phi0 = np.zeros(2 + n_b + n_g + n_z)
    if n_z:
        phi0[-n_z:] = softclip_inv(np.full(n_z, 10.0), _CLIP_LO, _CLIP_HI)
    phi = _ascend(stage1, phi0)
    beta0, beta, gamma0, gamma, z = unpack(phi)
    state.beta0 = float(beta0)
    state.gamma0 = float(gamma0)
    state.beta = [b.copy() for b in beta]
    state.gamma = [g.copy() for g in gamma]
    tau2 = softclip(z, _CLIP_LO, _CLIP_HI)
    state.tau2_beta = [float(tau2[j]) for j in range(len(loc_t2))]
    state.tau2_gamma = [float(tau2[len(loc_t2) + j]) for j in range(len(sca_t2))]

    mu = model.loc.value(state.beta0, state.beta, model.n_obs)
    ls = model.scale.value(state.gamma0, state.gamma, model.n_obs)
    n_dt = model.n_delta
    psi = model.config.psi

    def stage2(phi):
        dt, z_d = phi[:n_dt], phi[n_dt]
        tau2_d = float(softclip(z_d, _CLIP_LO, _CLIP_HI))
        v = math.log(tau2_d)
        value, grad_full = nuts_value_grad(model, np.concatenate([dt, [v]]), mu, ls)
        if not math.isfinite(value):
            return -math.inf, phi
        wlp, wgrad = weibull_log_tau2(v, psi)
        value -= wlp  # swap the Weibull hyperprior for the temporary uniform
        value += float(softclip_log_jac(z_d, _CLIP_LO, _CLIP_HI)) - math.log(_CLIP_HI - _CLIP_LO)
        grad = np.empty(n_dt + 1)
        grad[:n_dt] = grad_full[:n_dt]
        dv = grad_full[n_dt] - wgrad
        dz = math.exp(float(softclip_log_jac(z_d, _CLIP_LO, _CLIP_HI)))
        grad[n_dt] = dv * (dz / tau2_d) + float(softclip_log_jac_grad(z_d, _CLIP_LO, _CLIP_HI))
        return value, grad

    phi2 = np.zeros(n_dt + 1)
    phi2[n_dt] = float(softclip_inv(1.0, _CLIP_LO, _CLIP_HI))
    phi2 = _ascend(stage2, phi2)
    state.delta_tilde = phi2[:n_dt].copy()
    state.log_tau2_delta = float(
        max(math.log(softclip(phi2[n_dt], _CLIP_LO, _CLIP_HI)), model.config.log_tau2_floor)
    )
    return state


# ---------------------------------------------------------------------------
# Chain driver


def _draw_keys(model: Model) -> list[tuple[str, int]]:
    keys = [("beta0", 1), ("gamma0", 1)]
    for t in model.loc.terms:
        keys.append((f"loc:{t.spec.name}", t.n_coef))
        if t.has_tau2:
            keys.append((f"loc:{t.spec.name}:tau2", 1))
    for t in model.scale.terms:
        keys.append((f"scale:{t.spec.name}", t.n_coef))
        if t.has_tau2:
            keys.append((f"scale:{t.spec.name}:tau2", 1))
    keys.append(("delta_tilde", model.n_delta))
    keys.append(("log_tau2_delta", 1))
    return keys


def _snapshot(model: Model, state: ModelState, store: dict[str, np.ndarray], row: int) -> None:
    store["beta0"][row] = state.beta0
    store["gamma0"][row] = state.gamma0
    for kind, terms, coefs, tau2s in (
        ("loc", model.loc.terms, state.beta, state.tau2_beta),
        ("scale", model.scale.terms, state.gamma, state.tau2_gamma),
    ):
        slot = 0
        for term, coef in zip(terms, coefs):
            store[f"{kind}:{term.spec.name}"][row] = coef if coef.size > 1 else coef[0]
            if term.has_tau2:
                store[f"{kind}:{term.spec.name}:tau2"][row] = tau2s[slot]
                slot += 1
    store["delta_tilde"][row] = state.delta_tilde
    store["log_tau2_delta"][row] = state.log_tau2_delta


def _run_single_chain(model: Model, start: ModelState, config: KernelConfig, chain: int) -> ChainOutput:
    rng = np.random.Generator(np.random.Philox(key=config.seed ^ chain))
    state = start.copy()
    cfg = model.config

    blocks = [
        IwlsBlock("loc", i, t.spec.name, config.iwls_target_accept)
        for i, t in enumerate(model.loc.terms)
    ] + [
        IwlsBlock("scale", i, t.spec.name, config.iwls_target_accept)
        for i, t in enumerate(model.scale.terms)
    ]

    update_intercepts(model, state)
    mu = model.loc.value(state.beta0, state.beta, model.n_obs)
    ls = model.scale.value(state.gamma0, state.gamma, model.n_obs)
    params = refresh_cache(model.reparam.basis @ state.delta_tilde, model.tconfig)

    dim = model.n_delta + 1
    kernel = NutsKernel(
        dim,
        NutsConfig(target_accept=config.nuts_target_accept, max_tree_depth=config.max_tree_depth),
    )
    theta = np.concatenate([state.delta_tilde, [state.log_tau2_delta]])

    def value_grad(th):
        return nuts_value_grad(model, th, mu, ls)

    logp, grad = value_grad(theta)
    kernel.eps = find_reasonable_epsilon(theta, logp, grad, kernel.inv_mass, value_grad, rng)
    dual = DualAveraging(kernel.eps, config.nuts_target_accept)
    schedule = WarmupSchedule(config.warmup)
    welford = WelfordVar(dim)

    n_kept = config.samples // config.thin
    keys = _draw_keys(model)
    store = {
        name: np.empty((n_kept, size)) if size > 1 else np.empty(n_kept) for name, size in keys
    }
    row = 0

    for it in range(config.warmup + config.samples):
        adapting = it < config.warmup
        # location and scale blocks: scoring-step MH then conjugate variance
        for blk in blocks:
            mu, ls = blk.step(model, state, mu, ls, params, rng, adapting)
            pred = model.loc if blk.kind == "loc" else model.scale
            term = pred.terms[blk.index]
            if term.has_tau2:
                coef = (state.beta if blk.kind == "loc" else state.gamma)[blk.index]
                quad = float(coef @ term.penalty @ coef)
                tau2 = gibbs_tau2(rng, cfg.ig_a, cfg.ig_b, term.rank, quad)
                if blk.kind == "loc":
                    state.tau2_beta[blk.tau2_slot(pred)] = tau2
                else:
                    state.tau2_gamma[blk.tau2_slot(pred)] = tau2

        update_intercepts(model, state)
        mu = model.loc.value(state.beta0, state.beta, model.n_obs)
        ls = model.scale.value(state.gamma0, state.gamma, model.n_obs)

        logp, grad = value_grad(theta)  # conditionals moved under the new (mu, ls)
        if config.hmc_fixed_l is not None:
            theta, logp, grad, alpha = _hmc_step(
                kernel, theta, logp, grad, value_grad, rng, config.hmc_fixed_l
            )
        else:
            theta, logp, grad, alpha = kernel.step(theta, logp, grad, value_grad, rng)
        state.delta_tilde = theta[:-1].copy()
        state.log_tau2_delta = float(theta[-1])
        params = refresh_cache(model.reparam.basis @ state.delta_tilde, model.tconfig)

        if adapting:
            kernel.eps = dual.update(alpha)
            if schedule.collecting(it):
                welford.push(theta)
            if schedule.window_closes(it):
                kernel.set_mass(welford.regularized())
                welford = WelfordVar(dim)
                logp, grad = value_grad(theta)
                kernel.eps = find_reasonable_epsilon(
                    theta, logp, grad, kernel.inv_mass, value_grad, rng
                )
                dual.restart(kernel.eps)
            if it == config.warmup - 1:
                kernel.eps = dual.adapted_eps
                kernel.stats.__init__()  # report post-warmup statistics only
                for blk in blocks:
                    blk.eps = blk.dual.adapted_eps
                    blk.n_steps = blk.n_accept = 0
        else:
            if (it - config.warmup + 1) % config.thin == 0 and row < n_kept:
                _snapshot(model, state, store, row)
                row += 1

    accept = {f"iwls:{b.kind}:{b.name}": b.accept_rate for b in blocks}
    accept["nuts"] = kernel.stats.accept_rate
    eps = {f"iwls:{b.kind}:{b.name}": b.eps for b in blocks}
    eps["nuts"] = kernel.eps
    return ChainOutput(
        draws=store,
        accept=accept,
        divergences=kernel.stats.divergences,
        max_depth_hits=kernel.stats.max_depth_hits,
        nan_accepts=sum(b.nan_accepts for b in blocks),
        eps=eps,
        mass_diag=kernel.inv_mass.copy(),
    )


def _hmc_step(kernel, theta, logp, grad, value_grad, rng, n_leapfrog):
    """Plain fixed-length HMC transition (config flag; no extra tuning)."""
    inv_mass = kernel.inv_mass
    p = rng.standard_normal(theta.size) / np.sqrt(inv_mass)
    h0 = -logp + 0.5 * float(p @ (inv_mass * p))
    q, pp, lp, g = theta, p, logp, grad
    for _ in range(n_leapfrog):
        q, pp, lp, g = leapfrog(q, pp, g, kernel.eps, inv_mass, value_grad)
        if not np.isfinite(lp):
            break
    if np.isfinite(lp):
        h1 = -lp + 0.5 * float(pp @ (inv_mass * pp))
        alpha = math.exp(min(0.0, h0 - h1))
    else:
        alpha = 0.0
    kernel.stats.n_steps += 1
    kernel.stats.accept_sum += alpha
    if rng.uniform() < alpha:
        return q, lp, g, alpha
    return theta, logp, grad, alpha


def run_chains(model: Model, config: KernelConfig) -> list[ChainOutput]:
    """Initialize once, then run all chains (parallel if workers configured)."""
    start = initialize(model)
    workers = int(os.environ.get("TRANSREG_CHAIN_WORKERS", "1"))
    if workers > 1 and config.chains > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_single_chain, model, start, config, c)
                for c in range(config.chains)
            ]
            return [f.result() for f in futures]
    return [_run_single_chain(model, start, config, c) for c in range(config.chains)]
