"""Combination weights from per-expert ELPD posteriors, and linear pools."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

C_GRID = tuple(np.arange(0.0, 20.0 + 1e-9, 0.5))


class PoolingError(ValueError):
    pass


@dataclass(frozen=True)
class PoolWeights:
    experts: tuple
    weights: np.ndarray
    c: Optional[float] = None
    prob_best: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise PoolingError("weights must lie on the simplex")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "experts", tuple(self.experts))

    def as_dict(self):
        return dict(zip(self.experts, self.weights.tolist()))


def _stack(elpd_draws):
    draws = [np.asarray(d, dtype=float).ravel() for d in elpd_draws]
    if len({d.size for d in draws}) != 1:
        raise PoolingError("experts have different numbers of draws")
    return np.column_stack(draws)


def prob_best(elpd_draws: Sequence, rng: Optional[np.random.Generator] = None):
    """Share of joint draws in which each expert has the highest ELPD.

    Ties within a draw are split uniformly at random among the tied experts.
    """
    X = _stack(elpd_draws)
    rng = rng or np.random.default_rng(0)
    best = X == X.max(axis=1, keepdims=True)
    # random tie-breaking: pick the tied expert with the largest uniform key
    keys = np.where(best, rng.uniform(size=X.shape), -1.0)
    winner = keys.argmax(axis=1)
    return np.bincount(winner, minlength=X.shape[1]) / X.shape[0]


def softmax_weights(p, c: float, experts=None) -> PoolWeights:
    if c < 0:
        raise PoolingError("discrimination factor must be nonnegative")
    p = np.asarray(p, dtype=float)
    s = c * p
    w = np.exp(s - s.max())
    w /= w.sum()
    experts = experts or tuple(f"expert{k}" for k in range(p.size))
    return PoolWeights(experts, w, float(c), p)


def natural_weights(p, experts=None) -> PoolWeights:
    p = np.asarray(p, dtype=float)
    experts = experts or tuple(f"expert{k}" for k in range(p.size))
    return PoolWeights(experts, p / p.sum(), None, p)


def selection_weights(elpd_draws, experts=None) -> PoolWeights:
    """All weight on the expert with the highest posterior mean ELPD (first on ties)."""
    X = _stack(elpd_draws)
    w = np.zeros(X.shape[1])
    w[int(np.argmax(X.mean(axis=0)))] = 1.0
    experts = experts or tuple(f"expert{k}" for k in range(w.size))
    return PoolWeights(experts, w)


def equal_weights(K, experts=None) -> PoolWeights:
    experts = experts or tuple(f"expert{k}" for k in range(K))
    return PoolWeights(experts, np.full(K, 1.0 / K))


def pooled_log_density(expert_log_preds, w) -> float:
    """log sum_k w_k exp(l_k)."""
    lp = np.asarray(expert_log_preds, dtype=float)
    w = np.asarray(getattr(w, "weights", w), dtype=float)
    active = w > 0
    if not np.any(np.isfinite(lp[active])):
        raise PoolingError("all weight is on experts with zero density")
    return float(logsumexp(lp[active], b=w[active]))


def dynamic_c(p_history, logdens_history, grid=C_GRID) -> float:
    """Grid value of ``c`` maximizing the summed historical pooled log density.

    Ties go to the smallest ``c``; an empty history gives 0.
    """
    P = np.atleast_2d(np.asarray(p_history, dtype=float))
    Ld = np.atleast_2d(np.asarray(logdens_history, dtype=float))
    if P.size == 0 or Ld.size == 0:
        return 0.0
    if P.shape != Ld.shape:
        raise PoolingError("p and log density histories must align")
    best_c, best = float(grid[0]), -np.inf
    for c in grid:
        s = c * P
        logw = s - logsumexp(s, axis=1, keepdims=True)
        total = float(logsumexp(logw + Ld, axis=1).sum())
        if best == -np.inf or total > best + 1e-12 * max(1.0, abs(best)):
            best_c, best = float(c), total
    return best_c


def optimal_pool_objective(log_scores, w) -> float:
    L = np.atleast_2d(np.asarray(log_scores, dtype=float))
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore"):
        return float(logsumexp(L + np.log(w), axis=1).sum())


def optimal_pool_weights(log_scores, tol=1e-8, max_iter=200_000) -> np.ndarray:
    """Weights maximizing the historical log score of a linear pool.

    Uses the multiplicative (EM) update for mixture weights, which increases
    the concave objective monotonically and keeps identical experts tied.
    Convergence is declared when ``max_k w_k * |g_k / n - 1| <= tol`` where
    ``g`` is the objective gradient; this vanishes exactly at the optimum,
    including on faces of the simplex.
    """
    L = np.atleast_2d(np.asarray(log_scores, dtype=float))
    n, K = L.shape
    if n < 1:
        raise PoolingError("need at least one historical row")
    P = np.exp(L - L.max(axis=1, keepdims=True))
    w = np.full(K, 1.0 / K)
    for _ in range(max_iter):
        mix = P @ w
        g = (P / mix[:, None]).sum(axis=0) / n
        if np.max(w * np.abs(g - 1.0)) <= tol:
            return w
        w = w * g
        w /= w.sum()
    raise PoolingError(f"optimal pool did not converge in {max_iter} iterations")
