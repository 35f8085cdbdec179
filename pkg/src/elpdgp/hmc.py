"""Hamiltonian Monte Carlo with jittered path length.

Each iteration integrates for ``L ~ Uniform{1..L_max}`` leapfrog steps, with
``L_max = min(max_leapfrog, ceil(path_length / step))``.  Warmup tunes the
step size by dual averaging and a diagonal inverse metric from the warmup
draws; the final metric comes from the second half of warmup.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .data import PosteriorDraws

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0
# leapfrog cap while the metric is still the identity
EARLY_WARMUP_MAX_STEPS = 16


class HMCError(RuntimeError):
    pass


class TargetDensity:
    """Unnormalized log density on a partially positive-constrained space.

    ``logp_grad(theta)`` returns the log density and its gradient on the
    constrained scale.  Coordinates flagged in ``positive`` are sampled as
    ``u = log(theta)``; the log-Jacobian ``sum(u)`` is added to the density.
    """

    def __init__(self, names: Sequence[str], logp_grad: Callable, positive=None,
                 init: Optional[Callable] = None):
        self.names = tuple(names)
        self._logp_grad = logp_grad
        D = len(self.names)
        self.positive = np.zeros(D, dtype=bool) if positive is None else np.asarray(positive, bool)
        if self.positive.shape != (D,):
            raise ValueError("positive mask has wrong length")
        self._init = init

    @property
    def dimension(self) -> int:
        return len(self.names)

    def log_density(self, theta) -> float:
        return self._logp_grad(np.asarray(theta, dtype=float))[0]

    def gradient(self, theta):
        return self._logp_grad(np.asarray(theta, dtype=float))[1]

    def constrain(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(self.positive, np.exp(np.where(self.positive, u, 0.0)), u)

    def unconstrain(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.where(self.positive, np.log(np.where(self.positive, theta, 1.0)), theta)

    def __call__(self, u):
        """Log density and gradient on the unconstrained scale."""
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            theta = self.constrain(u)
            if not np.all(np.isfinite(theta)):
                return -np.inf, np.full(u.shape, np.nan)
            try:
                lp, g = self._logp_grad(theta)
            except (np.linalg.LinAlgError, FloatingPointError, ValueError, ZeroDivisionError):
                return -np.inf, np.full(u.shape, np.nan)
            g = np.asarray(g, dtype=float)
            lp = lp + np.sum(u[self.positive])
            g = np.where(self.positive, g * theta + 1.0, g)
        return lp, g

    def initial_point(self, rng):
        if self._init is not None:
            return self.unconstrain(self._init(rng))
        return rng.uniform(-2.0, 2.0, self.dimension)

    def gradient_error(self, u, h=1e-5):
        """Relative error of the analytic gradient against central differences."""
        u = np.asarray(u, dtype=float)
        _, g = self(u)
        fd = np.empty_like(u)
        for i in range(u.size):
            e = np.zeros_like(u)
            e[i] = h
            fd[i] = (self(u + e)[0] - self(u - e)[0]) / (2 * h)
        return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1.0))

    def check_gradient(self, rng, n_points=10, h=1e-5, tol=1e-5, points=None):
        """Max relative gradient error over random points; raises above ``tol``."""
        pts = points if points is not None else [self.initial_point(rng) for _ in range(n_points)]
        worst = max(self.gradient_error(u, h) for u in pts)
        if worst > tol:
            raise HMCError(f"gradient check failed: relative error {worst:.3g} > {tol:g}")
        return worst


@dataclass(frozen=True)
class HmcConfig:
    warmup: int = 500
    draws: int = 1000
    target_accept: float = 0.8
    max_leapfrog: int = 512
    seed: int = 0
    chains: int = 4
    path_length: float = 3.0
    gradient_check_points: int = 2
    gradient_check_tol: float = 1e-4
    n_jobs: int = 1

    def __post_init__(self):
        for name in ("warmup", "draws", "max_leapfrog", "chains", "path_length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")


def _as_fn(target):
    return target if callable(target) else target.__call__


def _leapfrog(q, p, grad, step, n_steps, fn, inv_mass):
    lp = None
    for _ in range(n_steps):
        p = p + 0.5 * step * grad
        q = q + step * inv_mass * p
        lp, grad = fn(q)
        if not (np.isfinite(lp) and np.all(np.isfinite(grad))):
            return q, p, -np.inf, grad, False
        p = p + 0.5 * step * grad
    return q, p, lp, grad, True


def leapfrog(theta, momentum, step, n_steps, target, inv_mass=None):
    """Integrate Hamilton's equations for ``n_steps`` steps of size ``step``.

    ``target`` maps a position to ``(log density, gradient)``.  Returns the
    new ``(position, momentum)``; raises ``FloatingPointError`` when the
    gradient becomes non-finite (a divergence).
    """
    fn = _as_fn(target)
    q = np.array(theta, dtype=float, ndmin=1)
    p = np.array(momentum, dtype=float, ndmin=1)
    if n_steps == 0 or step == 0:
        return q, p
    inv_mass = np.ones_like(q) if inv_mass is None else np.asarray(inv_mass, dtype=float)
    _, g = fn(q)
    q, p, _, _, ok = _leapfrog(q, p, g, step, n_steps, fn, inv_mass)
    if not ok:
        raise FloatingPointError("divergent trajectory: non-finite gradient")
    return q, p


def hamiltonian(lp, p, inv_mass):
    with np.errstate(over="ignore", invalid="ignore"):
        return -lp + 0.5 * np.sum(inv_mass * p * p)


class _DualAveraging:
    def __init__(self, step, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * step)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.m = 0
        self.hbar = 0.0
        self.log_xbar = 0.0
        self.log_step = math.log(step)

    def update(self, accept_prob):
        self.m += 1
        m = self.m
        w = 1.0 / (m + self.t0)
        self.hbar = (1 - w) * self.hbar + w * (self.target - accept_prob)
        self.log_step = self.mu - math.sqrt(m) / self.gamma * self.hbar
        eta = m ** (-self.kappa)
        self.log_xbar = eta * self.log_step + (1 - eta) * self.log_xbar
        return math.exp(self.log_step)

    @property
    def final(self):
        return math.exp(self.log_xbar)


def _reasonable_step(q, lp, grad, fn, inv_mass, rng):
    step = 1.0
    p = rng.standard_normal(q.size) / np.sqrt(inv_mass)
    h0 = hamiltonian(lp, p, inv_mass)

    def log_accept(s):
        _, p1, lp1, _, ok = _leapfrog(q, p, grad, s, 1, fn, inv_mass)
        if not ok:
            return -np.inf
        return h0 - hamiltonian(lp1, p1, inv_mass)

    direction = 1.0 if log_accept(step) > math.log(0.5) else -1.0
    for _ in range(60):
        la = log_accept(step)
        if direction > 0 and not la > math.log(0.5):
            break
        if direction < 0 and la > math.log(0.5):
            break
        step *= 2.0**direction
    return step


def _warmup_windows(warmup):
    """Boundaries of (initial, metric1, metric2, terminal) adaptation windows."""
    a = max(1, int(round(0.15 * warmup)))
    b = max(a, warmup // 2)
    c = max(b, int(round(0.9 * warmup)))
    return a, b, c


def _regularized_variance(samples):
    n = samples.shape[0]
    var = samples.var(axis=0, ddof=1) if n > 1 else np.ones(samples.shape[1])
    return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def _run_chain(fn, q0, cfg: HmcConfig, rng):
    D = q0.size
    inv_mass = np.ones(D)
    q = q0.copy()
    lp, grad = fn(q)
    step = _reasonable_step(q, lp, grad, fn, inv_mass, rng)
    da = _DualAveraging(step, cfg.target_accept)
    a_end, b_end, c_end = _warmup_windows(cfg.warmup)
    window = []
    metric_ready = False

    out = np.empty((cfg.draws, D))
    lps = np.empty(cfg.draws)
    accept_sum = 0.0
    divergences = 0
    total = cfg.warmup + cfg.draws
    for it in range(total):
        warm = it < cfg.warmup
        p = rng.standard_normal(D) / np.sqrt(inv_mass)
        h0 = hamiltonian(lp, p, inv_mass)
        cap = cfg.max_leapfrog if metric_ready else min(cfg.max_leapfrog, EARLY_WARMUP_MAX_STEPS)
        l_max = max(1, min(cap, int(math.ceil(cfg.path_length / step))))
        n_steps = int(rng.integers(1, l_max + 1))
        q1, p1, lp1, g1, ok = _leapfrog(q, p, grad, step, n_steps, fn, inv_mass)
        if ok:
            dh = hamiltonian(lp1, p1, inv_mass) - h0
            ok = np.isfinite(dh) and dh < DIVERGENCE_THRESHOLD
        accept_prob = min(1.0, math.exp(-dh)) if ok else 0.0
        if ok and rng.uniform() < accept_prob:
            q, lp, grad = q1, lp1, g1
        if warm:
            step = da.update(accept_prob)
            if it >= a_end:
                window.append(q.copy())
            if it + 1 in (b_end, c_end) and it + 1 < cfg.warmup and len(window) >= 10:
                inv_mass = _regularized_variance(np.asarray(window))
                metric_ready = True
                window = []
                step = _reasonable_step(q, lp, grad, fn, inv_mass, rng)
                da = _DualAveraging(step, cfg.target_accept)
            if it + 1 == cfg.warmup:
                step = da.final
            if not (np.isfinite(step) and step > 1e-12):
                raise HMCError("step-size adaptation failed")
        else:
            k = it - cfg.warmup
            out[k] = q
            lps[k] = lp
            accept_sum += accept_prob
            divergences += 0 if ok else 1
    if divergences == cfg.draws:
        raise HMCError("all proposals divergent")
    return out, lps, accept_sum / cfg.draws, divergences, step, inv_mass


def sample(target: TargetDensity, cfg: HmcConfig = HmcConfig()) -> PosteriorDraws:
    """Draw ``cfg.draws`` samples from each of ``cfg.chains`` chains."""
    root = np.random.SeedSequence(cfg.seed)
    seeds = root.spawn(cfg.chains + 1)
    if cfg.gradient_check_points:
        check_rng = np.random.default_rng(seeds[-1])
        target.check_gradient(check_rng, n_points=cfg.gradient_check_points,
                              tol=cfg.gradient_check_tol)

    def one(ss):
        rng = np.random.default_rng(ss)
        for _ in range(100):
            q0 = target.initial_point(rng)
            lp, g = target(q0)
            if np.isfinite(lp) and np.all(np.isfinite(g)):
                break
        else:
            raise HMCError("could not find a finite initial point")
        return _run_chain(target, q0, cfg, rng)

    if cfg.n_jobs == 1 or cfg.chains == 1:
        results = [one(s) for s in seeds[:cfg.chains]]
    else:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=cfg.n_jobs)(delayed(one)(s) for s in seeds[:cfg.chains])

    values = np.concatenate([target.constrain(r[0]) for r in results])
    draws = PosteriorDraws(
        names=target.names,
        values=values,
        log_posterior=np.concatenate([r[1] for r in results]),
        chain=np.repeat(np.arange(cfg.chains), cfg.draws),
        seed=cfg.seed,
        divergences=int(sum(r[3] for r in results)),
        accept_stats=tuple(float(r[2]) for r in results),
        step_sizes=tuple(float(r[4]) for r in results),
    )
    log.debug("hmc: accept=%s step=%s divergences=%d", draws.accept_stats,
              draws.step_sizes, draws.divergences)
    return draws


def split_rhat(chains) -> float:
    """Split-R-hat for an array of shape (n_chains, n_draws)."""
    x = np.asarray(chains, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    n = x.shape[1] // 2
    if n < 2:
        return float("nan")
    halves = np.concatenate([x[:, :n], x[:, -n:]])
    means = halves.mean(axis=1)
    W = halves.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W <= 0:
        return 1.0 if B <= 0 else float("inf")
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))
