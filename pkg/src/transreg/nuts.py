"""No-U-turn sampler with dual-averaging step size and windowed mass adaptation.

A self-contained gradient-based kernel over a differentiable log-density.  The
trajectory length is chosen by multiplicative tree doubling with the endpoint
U-turn criterion; candidate states are drawn by multinomial sampling over the
trajectory with a bias toward the freshly doubled half.  Divergences (energy
error beyond a fixed threshold) and maximum-depth hits are recorded, never
raised.

The structured-additive sampler drives one instance of this kernel for the
transformation block, and the same code runs standalone on analytic targets in
the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "NutsConfig",
    "NutsStats",
    "DualAveraging",
    "WelfordVar",
    "WarmupSchedule",
    "NutsKernel",
    "find_reasonable_epsilon",
    "leapfrog",
]

ValueGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class NutsConfig:
    target_accept: float = 0.9
    max_tree_depth: int = 10
    divergence_threshold: float = 1000.0


@dataclass
class NutsStats:
    """Counters accumulated across calls to :meth:`NutsKernel.step`."""

    n_steps: int = 0
    n_leapfrog: int = 0
    divergences: int = 0
    max_depth_hits: int = 0
    accept_sum: float = 0.0

    @property
    def accept_rate(self) -> float:
        return self.accept_sum / self.n_steps if self.n_steps else math.nan


class DualAveraging:
    """Nesterov dual averaging of the log step size toward a target acceptance."""

    def __init__(self, eps0: float, target: float, gamma: float = 0.05, t0: float = 10.0, kappa: float = 0.75):
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.restart(eps0)

    def restart(self, eps0: float) -> None:
        self.mu = math.log(10.0 * eps0)
        self.log_eps = math.log(eps0)
        self.log_eps_bar = math.log(eps0)
        self.h_bar = 0.0
        self.t = 0

    def update(self, accept: float) -> float:
        self.t += 1
        frac = 1.0 / (self.t + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept)
        self.log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        eta = self.t ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def eps(self) -> float:
        return math.exp(self.log_eps)

    @property
    def adapted_eps(self) -> float:
        return math.exp(self.log_eps_bar)


class WelfordVar:
    """Streaming mean/variance for the mass-matrix windows."""

    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def push(self, x: np.ndarray) -> None:
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def variance(self) -> np.ndarray:
        if self.n < 2:
            return np.ones_like(self.mean)
        return self.m2 / (self.n - 1)

    def regularized(self) -> np.ndarray:
        """Shrunk toward a small diagonal, as in the usual windowed scheme."""
        n = self.n
        return (n / (n + 5.0)) * self.variance() + 1e-3 * (5.0 / (n + 5.0))


class WarmupSchedule:
    """Step-size buffers around doubling variance-estimation windows."""

    def __init__(self, n_warmup: int, init_buffer: int = 75, term_buffer: int = 50, base_window: int = 25):
        if n_warmup < init_buffer + base_window + term_buffer:
            init_buffer = max(1, int(0.15 * n_warmup))
            term_buffer = max(1, int(0.10 * n_warmup))
            base_window = max(1, n_warmup - init_buffer - term_buffer)
        self.n_warmup = n_warmup
        self.init_buffer = init_buffer
        self.term_buffer = term_buffer
        ends = []
        start, size = init_buffer, base_window
        while start + size < n_warmup - term_buffer:
            nxt = size * 2
            if start + size + nxt >= n_warmup - term_buffer:
                size = n_warmup - term_buffer - start  # absorb the remainder
            ends.append(start + size)
            start += size
            size = nxt
        if not ends:
            ends.append(n_warmup - term_buffer)
        self.window_ends = set(ends)

    def collecting(self, i: int) -> bool:
        """Whether warmup iteration ``i`` (0-based) feeds the variance window."""
        return self.init_buffer <= i < self.n_warmup - self.term_buffer

    def window_closes(self, i: int) -> bool:
        return (i + 1) in self.window_ends


def leapfrog(
    q: np.ndarray,
    p: np.ndarray,
    grad: np.ndarray,
    eps: float,
    inv_mass: np.ndarray,
    value_grad: ValueGrad,
) -> tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    """One leapfrog step; returns (q', p', logp', grad')."""
    p_half = p + 0.5 * eps * grad
    q_new = q + eps * inv_mass * p_half
    logp_new, grad_new = value_grad(q_new)
    p_new = p_half + 0.5 * eps * grad_new
    return q_new, p_new, logp_new, grad_new


def _kinetic(p: np.ndarray, inv_mass: np.ndarray) -> float:
    return 0.5 * float(p @ (inv_mass * p))


def find_reasonable_epsilon(
    q: np.ndarray,
    logp: float,
    grad: np.ndarray,
    inv_mass: np.ndarray,
    value_grad: ValueGrad,
    rng: np.random.Generator,
) -> float:
    """Double/halve an initial step size until one leapfrog step has
    acceptance probability on the near side of one half."""
    eps = 1.0
    p = rng.standard_normal(q.size) / np.sqrt(inv_mass)
    h0 = -logp + _kinetic(p, inv_mass)

    def log_ratio(eps: float) -> float:
        _, p1, logp1, _ = leapfrog(q, p, grad, eps, inv_mass, value_grad)
        if not np.isfinite(logp1):
            return -math.inf
        return h0 - (-logp1 + _kinetic(p1, inv_mass))

    r = log_ratio(eps)
    direction = 1.0 if r > math.log(0.5) else -1.0
    for _ in range(100):
        eps *= 2.0**direction
        r = log_ratio(eps)
        if direction * r <= -direction * math.log(2.0):
            break
    return eps


@dataclass
class _Tree:
    q_minus: np.ndarray
    p_minus: np.ndarray
    grad_minus: np.ndarray
    q_plus: np.ndarray
    p_plus: np.ndarray
    grad_plus: np.ndarray
    q_prop: np.ndarray
    logp_prop: float
    grad_prop: np.ndarray
    log_sum_w: float
    sum_alpha: float = 0.0
    n_alpha: int = 0
    n_leapfrog: int = 0
    turning: bool = False
    diverged: bool = False


def _uturn(q_minus, q_plus, p_minus, p_plus, inv_mass) -> bool:
    dq = q_plus - q_minus
    return float(dq @ (inv_mass * p_minus)) < 0.0 or float(dq @ (inv_mass * p_plus)) < 0.0


class NutsKernel:
    """One NUTS transition kernel with its adaptation state.

    The target is passed per call so the conditional density may change
    between sweeps of an outer Gibbs loop (the gradient closure captures the
    current values of all other blocks).
    """

    def __init__(self, dim: int, config: NutsConfig | None = None):
        self.config = config or NutsConfig()
        self.dim = dim
        self.eps = 0.1
        self.inv_mass = np.ones(dim)
        self.stats = NutsStats()
        self.dual: DualAveraging | None = None

    def set_mass(self, variances: np.ndarray) -> None:
        """Set the inverse mass to (regularized) posterior variance estimates."""
        variances = np.where(np.isfinite(variances) & (variances > 0.0), variances, 1.0)
        self.inv_mass = variances

    def _build(
        self,
        q: np.ndarray,
        p: np.ndarray,
        grad: np.ndarray,
        direction: int,
        depth: int,
        h0: float,
        value_grad: ValueGrad,
        rng: np.random.Generator,
    ) -> _Tree:
        cfg = self.config
        if depth == 0:
            q1, p1, logp1, grad1 = leapfrog(q, p, grad, direction * self.eps, self.inv_mass, value_grad)
            if np.isfinite(logp1):
                h1 = -logp1 + _kinetic(p1, self.inv_mass)
                delta_h = h1 - h0
            else:
                delta_h = math.inf
            diverged = not np.isfinite(delta_h) or abs(delta_h) > cfg.divergence_threshold
            log_w = -delta_h if np.isfinite(delta_h) else -math.inf
            alpha = math.exp(min(0.0, -delta_h)) if np.isfinite(delta_h) else 0.0
            return _Tree(
                q_minus=q1, p_minus=p1, grad_minus=grad1,
                q_plus=q1, p_plus=p1, grad_plus=grad1,
                q_prop=q1, logp_prop=logp1, grad_prop=grad1,
                log_sum_w=log_w, sum_alpha=alpha, n_alpha=1, n_leapfrog=1,
                diverged=diverged,
            )
        inner = self._build(q, p, grad, direction, depth - 1, h0, value_grad, rng)
        if inner.turning or inner.diverged:
            return inner
        if direction > 0:
            outer = self._build(
                inner.q_plus, inner.p_plus, inner.grad_plus, direction, depth - 1, h0, value_grad, rng
            )
            inner.q_plus, inner.p_plus, inner.grad_plus = outer.q_plus, outer.p_plus, outer.grad_plus
        else:
            outer = self._build(
                inner.q_minus, inner.p_minus, inner.grad_minus, direction, depth - 1, h0, value_grad, rng
            )
            inner.q_minus, inner.p_minus, inner.grad_minus = outer.q_minus, outer.p_minus, outer.grad_minus
        total = np.logaddexp(inner.log_sum_w, outer.log_sum_w)
        if math.log(rng.uniform()) < outer.log_sum_w - total:
            inner.q_prop, inner.logp_prop, inner.grad_prop = outer.q_prop, outer.logp_prop, outer.grad_prop
        inner.log_sum_w = total
        inner.sum_alpha += outer.sum_alpha
        inner.n_alpha += outer.n_alpha
        inner.n_leapfrog += outer.n_leapfrog
        inner.diverged = outer.diverged
        inner.turning = outer.turning or _uturn(
            inner.q_minus, inner.q_plus, inner.p_minus, inner.p_plus, self.inv_mass
        )
        return inner

    def step(
        self,
        q: np.ndarray,
        logp: float,
        grad: np.ndarray,
        value_grad: ValueGrad,
        rng: np.random.Generator,
    ) -> tuple[np.ndarray, float, np.ndarray, float]:
        """One transition; returns (q', logp', grad', mean acceptance statistic)."""
        cfg = self.config
        p0 = rng.standard_normal(self.dim) / np.sqrt(self.inv_mass)
        h0 = -logp + _kinetic(p0, self.inv_mass)
        q_minus = q_plus = q
        p_minus = p_plus = p0
        grad_minus = grad_plus = grad
        prop = (q, logp, grad)
        log_sum_w = 0.0
        sum_alpha = 0.0
        n_alpha = 0
        diverged = False
        depth = 0
        while depth < cfg.max_tree_depth:
            direction = 1 if rng.uniform() < 0.5 else -1
            if direction > 0:
                sub = self._build(q_plus, p_plus, grad_plus, 1, depth, h0, value_grad, rng)
            else:
                sub = self._build(q_minus, p_minus, grad_minus, -1, depth, h0, value_grad, rng)
            sum_alpha += sub.sum_alpha
            n_alpha += sub.n_alpha
            self.stats.n_leapfrog += sub.n_leapfrog
            if sub.diverged:
                diverged = True
                break
            if sub.turning:
                break
            # biased progressive sampling: favor the fresh half
            if math.log(rng.uniform()) < sub.log_sum_w - log_sum_w:
                prop = (sub.q_prop, sub.logp_prop, sub.grad_prop)
            log_sum_w = np.logaddexp(log_sum_w, sub.log_sum_w)
            if direction > 0:
                q_plus, p_plus, grad_plus = sub.q_plus, sub.p_plus, sub.grad_plus
            else:
                q_minus, p_minus, grad_minus = sub.q_minus, sub.p_minus, sub.grad_minus
            depth += 1
            if _uturn(q_minus, q_plus, p_minus, p_plus, self.inv_mass):
                break
        if depth == cfg.max_tree_depth:
            self.stats.max_depth_hits += 1
        if diverged:
            self.stats.divergences += 1
        accept_stat = sum_alpha / n_alpha if n_alpha else 0.0
        self.stats.n_steps += 1
        self.stats.accept_sum += accept_stat
        return prop[0], prop[1], prop[2], accept_stat
