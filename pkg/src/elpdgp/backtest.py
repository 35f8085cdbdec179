"""Expanding-window one-step-ahead evaluation over aligned expert score files.

Two summaries come out of a run:

* per expert and predictor of log scores, the median and mean one-step
  log density of the realized log score (benchmarks, optionally GP(1/3));
* per pooling method, the summed log score of the pooled predictive
  density, next to each expert on its own.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import gp_cube, hmc, pooling, simlab
from .data import PriorConfig, ScoreDataset

log = logging.getLogger(__name__)


@dataclass
class BacktestConfig:
    start: int = 10
    gp: bool = False
    refit_every: int = 25
    hmc: hmc.HmcConfig = hmc.HmcConfig(warmup=200, draws=250, chains=2)
    max_draws: int = 250
    c: float = 5.0
    c_grid: tuple = pooling.C_GRID
    seed: int = 0
    prior: PriorConfig = PriorConfig()


@dataclass
class BacktestResult:
    experts: tuple
    steps: list = field(default_factory=list)
    table1: list = field(default_factory=list)
    table2: list = field(default_factory=list)
    fits: list = field(default_factory=list)


def align(datasets: Sequence[ScoreDataset]):
    """Restrict every dataset to the ids they all share, in the first one's order."""
    common = set(datasets[0].ids.tolist())
    for ds in datasets[1:]:
        common &= set(ds.ids.tolist())
    out = []
    order = [i for i in datasets[0].ids.tolist() if i in common]
    for ds in datasets:
        pos = {int(i): k for k, i in enumerate(ds.ids)}
        idx = np.array([pos[i] for i in order], dtype=int)
        out.append(ScoreDataset(ds.expert_name, ds.ids[idx], ds.log_score[idx], ds.pred_sd[idx],
                                ds.Z_raw[idx], ds.pooling_names))
    return out


def _summary(values):
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    return (float(np.median(v)), float(np.mean(v))) if v.size else (float("nan"), float("nan"))


def run_backtest(datasets: Sequence[ScoreDataset], cfg: BacktestConfig = BacktestConfig()):
    datasets = align(list(datasets))
    names = tuple(ds.expert_name for ds in datasets)
    if len(set(names)) != len(names):
        raise ValueError("expert names must be unique")
    n = datasets[0].n
    start = max(cfg.start, simlab.MIN_HISTORY)
    if n <= start:
        raise ValueError(f"need more than {start} aligned records")
    K = len(datasets)
    L = np.column_stack([ds.log_score for ds in datasets])
    res = BacktestResult(names)

    bench = {(ds.expert_name, m): simlab.benchmark_predict(ds, m)
             for ds in datasets for m in simlab.BENCHMARKS}
    gp_scores = {name: np.full(n, np.nan) for name in names}
    pooled = {k: np.full(n, np.nan) for k in ("equal", "optimal")}
    if cfg.gp:
        for k in ("natural", "selection", "softmax_fixed_c", "dynamic"):
            pooled[k] = np.full(n, np.nan)
    p_hist, c_used = [], np.full(n, np.nan)

    ss = np.random.SeedSequence(cfg.seed)
    models: list = [None] * K
    for t in range(start, n):
        row = {"step": t, "id": int(datasets[0].ids[t])}
        pooled["equal"][t] = pooling.pooled_log_density(L[t], np.full(K, 1.0 / K))
        w_opt = pooling.optimal_pool_weights(L[:t])
        pooled["optimal"][t] = pooling.pooled_log_density(L[t], w_opt)
        if cfg.gp:
            refit = models[0] is None or (t - start) % cfg.refit_every == 0
            etas = []
            step_rng = np.random.default_rng(ss.spawn(1)[0])
            for k, ds in enumerate(datasets):
                if refit:
                    train = ds.head(t)
                    fit_cfg = replace(cfg.hmc, seed=int(step_rng.integers(2**31)))
                    models[k] = gp_cube.fit(train, fit_cfg, cfg.prior)
                    dr = models[k].draws
                    rh = [v for v in dr.rhat().values() if np.isfinite(v)]
                    res.fits.append({"step": t, "expert": ds.expert_name,
                                     "divergence_fraction": dr.divergence_fraction(),
                                     "max_rhat": max(rh) if rh else float("nan")})
                else:
                    prev = models[k]
                    models[k] = gp_cube.CubeModel(ds.head(t, prev.dataset.standardizer),
                                                  prev.draws, prev.transform, prev.prior)
                m = models[k]
                idx = np.linspace(0, m.M - 1, min(cfg.max_draws, m.M)).astype(int)
                z = ds.Z_raw[t:t + 1]
                etas.append(m.elpd_draws(z, ds.a[t], step_rng, draws=idx)[:, 0])
                gp_scores[ds.expert_name][t] = m.log_score_density(
                    z, ds.a[t], ds.log_score[t], draws=idx)[0]
            p = pooling.prob_best(etas, step_rng)
            pooled["natural"][t] = pooling.pooled_log_density(L[t], pooling.natural_weights(p))
            pooled["selection"][t] = pooling.pooled_log_density(
                L[t], pooling.selection_weights(etas))
            pooled["softmax_fixed_c"][t] = pooling.pooled_log_density(
                L[t], pooling.softmax_weights(p, cfg.c))
            c = pooling.dynamic_c(p_hist, L[start:t], cfg.c_grid) if p_hist else 0.0
            c_used[t] = c
            pooled["dynamic"][t] = pooling.pooled_log_density(L[t], pooling.softmax_weights(p, c))
            p_hist.append(p)
            row.update({f"p_{nm}": float(v) for nm, v in zip(names, p)})
            row["c_dynamic"] = c
        for (name, m), v in bench.items():
            row[f"{name}:{m}"] = float(v[t])
        for name in names:
            if cfg.gp:
                row[f"{name}:gp_cube"] = float(gp_scores[name][t])
        for k, v in pooled.items():
            row[f"pool:{k}"] = float(v[t])
        res.steps.append(row)
        log.debug("backtest step %d done", t)

    for ds in datasets:
        for m in simlab.BENCHMARKS:
            med, mean = _summary(bench[(ds.expert_name, m)][start:])
            res.table1.append({"expert": ds.expert_name, "method": m, "median": med, "mean": mean})
        if cfg.gp:
            med, mean = _summary(gp_scores[ds.expert_name][start:])
            res.table1.append({"expert": ds.expert_name, "method": "gp_cube",
                               "median": med, "mean": mean})
    for k, name in enumerate(names):
        res.table2.append({"method": name, "sum_log_score": float(L[start:, k].sum())})
    for k, v in pooled.items():
        res.table2.append({"method": k, "sum_log_score": float(np.nansum(v[start:]))})
    return res
