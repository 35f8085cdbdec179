"""Simulation study: misspecified regression expert, true ELPD, accuracy metrics.

Data come from ``y = x1 + x2 + eps`` with all terms standard normal, scored
by an expert predicting ``N(x1, 2)`` that ignores ``x2``.  The pooling
variable is ``x2`` and the true ELPD is ``-0.5 log(4 pi) - (1 + x2^2) / 4``.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import gp_chisq, gp_cube, hmc
from .data import PriorConfig, ScoreDataset

log = logging.getLogger(__name__)

EXPERT_VAR = 2.0
A_SIM = -0.5 * math.log(4.0 * math.pi)
BENCHMARKS = ("lprime_rw", "lprime_mean", "ldblprime_rw", "ldblprime_mean")
MIN_HISTORY = 3


@dataclass(frozen=True)
class SimScenario:
    n: int = 150
    replications: int = 50
    grid: tuple = tuple(np.linspace(-3.0, 3.0, 61))
    seed: int = 2024

    def __post_init__(self):
        if self.n < 10:
            raise ValueError("n must be at least 10")
        if self.replications < 1:
            raise ValueError("need at least one replication")
        g = np.asarray(self.grid, dtype=float)
        if g.min() < -3.0 or g.max() > 3.0:
            raise ValueError("grid must lie within [-3, 3]")
        object.__setattr__(self, "grid", tuple(g.tolist()))

    def replication_seed(self, r):
        return np.random.SeedSequence([self.seed, r])


@dataclass
class Covariates:
    x1: np.ndarray
    x2: np.ndarray
    y: np.ndarray


def simulate(scenario: SimScenario, replication=0, rng=None):
    """One simulated dataset; returns ``(ScoreDataset, Covariates)``."""
    rng = rng or np.random.default_rng(scenario.replication_seed(replication))
    n = scenario.n
    x1 = rng.standard_normal(n)
    x2 = rng.standard_normal(n)
    eps = rng.standard_normal(n)
    y = x1 + x2 + eps
    log_score = A_SIM - (y - x1) ** 2 / (2.0 * EXPERT_VAR)
    ds = ScoreDataset(f"sim{replication}", np.arange(n), log_score,
                      np.full(n, math.sqrt(EXPERT_VAR)), x2[:, None], ["x2"])
    return ds, Covariates(x1, x2, y)


def true_elpd(x2):
    x2 = np.asarray(x2, dtype=float)
    out = A_SIM - 0.25 * (1.0 + x2**2)
    return float(out) if out.ndim == 0 else out


def grid_weights(grid):
    return stats.norm.pdf(np.asarray(grid, dtype=float))


def mise(estimate, truth, grid) -> float:
    """Squared error averaged over grid points with standard-normal weights."""
    w = grid_weights(grid)
    err = np.asarray(estimate, dtype=float) - np.asarray(truth, dtype=float)
    return float(np.sum(w * err**2) / np.sum(w))


def kde_logpdf(draws, x) -> float:
    draws = np.asarray(draws, dtype=float)
    if draws.size < 2:
        raise ValueError("need at least 2 draws for density estimation")
    if np.ptp(draws) == 0:
        return 0.0 if x == draws[0] else -np.inf
    return float(stats.gaussian_kde(draws, bw_method="silverman").logpdf(x)[0])


def mils(draw_matrix, truth, grid) -> float:
    """Weighted mean over the grid of the KDE log density of the draws at the truth.

    ``draw_matrix`` has shape ``(n_draws, n_grid)``.
    """
    D = np.asarray(draw_matrix, dtype=float)
    w = grid_weights(grid)
    logs = np.array([kde_logpdf(D[:, g], t) for g, t in enumerate(np.asarray(truth))])
    return float(np.sum(w * logs) / np.sum(w))


def hpd_interval(draws, prob=0.95):
    """Shortest interval containing ``prob`` of the draws."""
    x = np.sort(np.asarray(draws, dtype=float))
    m = x.size
    k = max(1, int(math.ceil(prob * m)))
    widths = x[k - 1:] - x[:m - k + 1]
    i = int(np.argmin(widths))
    return x[i], x[i + k - 1]


def summarize_draws(draw_matrix, prob=0.95):
    """Per-column mean, median, central and HPD interval bounds."""
    D = np.asarray(draw_matrix, dtype=float)
    lo_q, hi_q = (1 - prob) / 2, 1 - (1 - prob) / 2
    hpd = np.array([hpd_interval(D[:, g], prob) for g in range(D.shape[1])])
    return {
        "mean": D.mean(axis=0),
        "median": np.median(D, axis=0),
        "q_lo": np.quantile(D, lo_q, axis=0),
        "q_hi": np.quantile(D, hi_q, axis=0),
        "hpd_lo": hpd[:, 0],
        "hpd_hi": hpd[:, 1],
    }


# -- one-step-ahead benchmark predictors of log scores -----------------------

def _gauss_logpdf(x, mu, var):
    return -0.5 * math.log(2 * math.pi * var) - 0.5 * (x - mu) ** 2 / var


def benchmark_predict(dataset: ScoreDataset, method: str, min_history=MIN_HISTORY):
    """One-step-ahead log densities of the raw log scores.

    Entry ``i`` is the log density of record ``i`` given records ``0..i-1``;
    entries with fewer than ``min_history`` predecessors are NaN.  Variances
    (and the mean for the cumulative-mean models) are maximum-likelihood
    estimates on the expanding window.  Predictions on the ``l''`` scale
    carry the Jacobian of ``l -> (a - l)^(1/3)``.
    """
    if method not in BENCHMARKS:
        raise ValueError(f"unknown benchmark {method!r}")
    if min_history < MIN_HISTORY:
        raise ValueError(f"need at least {MIN_HISTORY} history points")
    n = dataset.n
    if n <= min_history:
        raise ValueError(f"need more than {min_history} records")
    cube = method.startswith("ldblprime")
    x = np.asarray(dataset.ldblprime if cube else dataset.lprime, dtype=float)
    out = np.full(n, np.nan)
    for i in range(min_history, n):
        hist = x[:i]
        if method.endswith("_rw"):
            inc = np.diff(hist)
            mu, var = hist[-1], float(np.mean(inc**2))
        else:
            mu, var = float(hist.mean()), float(hist.var())
        var = max(var, 1e-300)
        lp = _gauss_logpdf(x[i], mu, var)
        if cube:
            lprime = max(float(dataset.lprime[i]), 1e-300)
            lp += math.log(1.0 / 3.0) - (2.0 / 3.0) * math.log(lprime)
        out[i] = lp
    return out


# -- the replicated study -----------------------------------------------------

STUDY_HMC = hmc.HmcConfig(warmup=200, draws=250, chains=2)


@dataclass
class ReplicationResult:
    replication: int
    model: str
    mise: float
    mils: float
    summary: dict
    seconds: float = 0.0
    divergences: int = 0
    max_rhat: float = float("nan")


@dataclass
class StudyResult:
    scenario: SimScenario
    results: list = field(default_factory=list)

    def for_model(self, model):
        return sorted((r for r in self.results if r.model == model), key=lambda r: r.replication)

    def percentile_replications(self, model, percentiles=(2.5, 50.0, 97.5)):
        """Replication indices at the given percentiles of the MISE ranking."""
        rs = self.for_model(model)
        order = sorted(rs, key=lambda r: r.mise)
        out = {}
        for p in percentiles:
            k = int(round(p / 100.0 * (len(order) - 1)))
            out[p] = order[k].replication
        return out

    def metrics_rows(self):
        return [
            {"replication": r.replication, "model": r.model, "mise": r.mise,
             "log_mise": math.log(r.mise), "mils": r.mils, "seconds": r.seconds,
             "divergences": r.divergences, "max_rhat": r.max_rhat}
            for r in sorted(self.results, key=lambda r: (r.model, r.replication))
        ]

    def grid_rows(self):
        rows = []
        truth = true_elpd(self.scenario.grid)
        for r in sorted(self.results, key=lambda r: (r.model, r.replication)):
            for g, x2 in enumerate(self.scenario.grid):
                row = {"replication": r.replication, "model": r.model, "x2": x2,
                       "truth": truth[g]}
                row.update({k: float(v[g]) for k, v in r.summary.items()})
                rows.append(row)
        return rows


def fit_model(model, dataset, cfg, prior=PriorConfig()):
    if model == "gp_cube":
        return gp_cube.fit(dataset, cfg, prior)
    if model == "gp_chisq":
        return gp_chisq.fit(dataset, cfg, prior)
    raise ValueError(f"unknown model {model!r}")


def run_replication(scenario: SimScenario, r: int, model: str,
                    cfg: hmc.HmcConfig = STUDY_HMC, prior=PriorConfig()) -> ReplicationResult:
    import time
    t0 = time.perf_counter()
    ds, _ = simulate(scenario, r)
    ss = scenario.replication_seed(r)
    fit_seed, pred_seed = ss.generate_state(2)
    m = fit_model(model, ds, replace(cfg, seed=int(fit_seed)), prior)
    grid = np.asarray(scenario.grid)
    eta = m.elpd_draws(grid[:, None], A_SIM, np.random.default_rng(int(pred_seed)))
    truth = true_elpd(grid)
    summary = summarize_draws(eta)
    rhat = max(v for v in m.draws.rhat().values() if np.isfinite(v))
    return ReplicationResult(r, model, mise(summary["mean"], truth, grid), mils(eta, truth, grid),
                             summary, time.perf_counter() - t0, m.draws.divergences, rhat)


def default_jobs():
    try:
        return max(1, int(os.environ.get("ELPDGP_THREADS", "1")))
    except ValueError:
        return 1


def run_study(scenario: SimScenario, models: Sequence[str] = ("gp_cube", "gp_chisq"),
              cfg: hmc.HmcConfig = STUDY_HMC, prior=PriorConfig(),
              replications: Optional[dict] = None, n_jobs: Optional[int] = None) -> StudyResult:
    """Fit each model to each replication and score its ELPD posterior on the grid.

    ``replications`` optionally caps the replication count per model, e.g.
    ``{"gp_chisq": 10}``.
    """
    replications = replications or {}
    tasks = [(r, m) for m in models
             for r in range(min(scenario.replications, replications.get(m, scenario.replications)))]
    n_jobs = n_jobs or default_jobs()
    if n_jobs == 1:
        results = []
        for r, m in tasks:
            res = run_replication(scenario, r, m, cfg, prior)
            log.info("replication %d %s: MISE=%.4g MILS=%.4g (%.1fs)", r, m, res.mise,
                     res.mils, res.seconds)
            results.append(res)
    else:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=n_jobs)(
            delayed(run_replication)(scenario, r, m, cfg, prior) for r, m in tasks)
    return StudyResult(scenario, list(results))


def hpd_coverage(result: ReplicationResult, grid, lo=-2.0, hi=2.0) -> float:
    """Share of grid points in the open interval (lo, hi) whose HPD band covers the truth."""
    grid = np.asarray(grid)
    inside = (grid > lo) & (grid < hi)
    truth = true_elpd(grid)
    s = result.summary
    covered = (s["hpd_lo"] <= truth) & (truth <= s["hpd_hi"])
    return float(covered[inside].mean())


def median_log_mise_difference(study: StudyResult, a="gp_cube", b="gp_chisq") -> float:
    """Median over shared replications of log MISE(a) - log MISE(b)."""
    ra = {r.replication: r for r in study.for_model(a)}
    rb = {r.replication: r for r in study.for_model(b)}
    shared = sorted(set(ra) & set(rb))
    if not shared:
        raise ValueError("no replications shared by both models")
    return float(np.median([math.log(ra[k].mise) - math.log(rb[k].mise) for k in shared]))
