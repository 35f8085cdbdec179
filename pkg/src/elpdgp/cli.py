"""Command-line entry point: simulate, fit, predict, pool, evaluate, backtest.

Every command takes an optional ``--config`` JSON file whose keys are the
long option names of that command (dashes or underscores); flags given on
the command line win.  Each run writes ``manifest.json`` to its output
directory, and exits with status 3 when any sampler diagnostic fails.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import platform
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__, backtest, gp_chisq, gp_cube, pooling, simlab
from .data import (ColumnMap, DataError, PriorConfig, ScoreDataset, Standardizer,
                   atomic_write_text, load_dataset, load_draws, save_draws, write_dataset)
from .hmc import HMCError, HmcConfig
from .transforms import CUBE_ROOT, TransformSpec, offset_a

log = logging.getLogger("elpdgp")

EXIT_OK, EXIT_USAGE, EXIT_DIAGNOSTICS = 0, 2, 3
MAX_DIVERGENCE_FRACTION = 0.05
MAX_RHAT = 1.05
METHODS = ("natural", "selection", "softmax_fixed_c", "dynamic", "equal", "optimal")
MODELS = {"cube": "gp_cube", "power": "gp_cube", "chisq": "gp_chisq"}


class ConfigError(ValueError):
    pass


def default_threads():
    return simlab.default_jobs()


# -- tables and manifests -----------------------------------------------------

def write_table(path, rows, columns=None):
    """Write a list of dicts as CSV; floats use ``repr`` so values round-trip."""
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in (r.get(c, "") for c in columns)])
    atomic_write_text(path, buf.getvalue())


def read_table(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _jsonable(v):
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, np.generic):
        return v.item()
    return v


def versions():
    import joblib
    import scipy
    return {"elpdgp": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "joblib": joblib.__version__}


def write_manifest(out, args, argv, extra=None):
    cfg = {k: _jsonable(v) for k, v in vars(args).items() if k not in ("func", "verbose")}
    doc = {"command": args.command, "argv": list(argv), "config": cfg,
           "seed": getattr(args, "seed", None), "versions": versions()}
    if extra:
        doc.update(_jsonable(extra))
    atomic_write_text(Path(out) / "manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- config file --------------------------------------------------------------

def _key_line(text, key):
    for i, line in enumerate(text.splitlines(), 1):
        if f'"{key}"' in line:
            return i
    return None


def load_config(path, parser: argparse.ArgumentParser):
    """Parse a JSON config into defaults for ``parser``; errors name line and field."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: line 1: top level must be an object")
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config")}
    out = {}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        where = f"{path}: line {_key_line(text, key)}, field {key!r}"
        if dest == "prior":
            out["prior"] = _prior_overrides(value, where)
            continue
        if dest not in actions:
            raise ConfigError(f"{where}: unknown field for this command")
        act = actions[dest]
        try:
            if act.nargs in ("*", "+") or isinstance(act, argparse._AppendAction):
                items = value if isinstance(value, list) else [value]
                value = [act.type(v) if act.type else v for v in items]
            elif isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                if not isinstance(value, bool):
                    raise ValueError("expected true or false")
            elif act.type is not None:
                value = act.type(value)
            if act.choices is not None and value not in act.choices:
                raise ValueError(f"must be one of {sorted(act.choices)}")
        except (TypeError, ValueError, argparse.ArgumentTypeError) as e:
            raise ConfigError(f"{where}: {e}") from None
        out[dest] = value
    return out


def _prior_overrides(value, where):
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(PriorConfig)}
    for k in value:
        if k not in names:
            raise ConfigError(f"{where}: unknown prior field {k!r}")
    try:
        PriorConfig(**value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None
    return value


# -- shared helpers -----------------------------------------------------------

def _csv_list(s):
    return [x.strip() for x in s.split(",") if x.strip()] if s else None


def _c_grid(s):
    """``start:stop:step`` or a comma list."""
    if ":" in s:
        parts = [float(x) for x in s.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise argparse.ArgumentTypeError(f"bad grid {s!r}")
        return tuple(np.arange(parts[0], parts[1] + parts[2] * 1e-9, parts[2]).tolist())
    vals = tuple(float(x) for x in s.split(","))
    if not vals or min(vals) < 0:
        raise argparse.ArgumentTypeError(f"bad grid {s!r}")
    return vals


def _nonneg_float(s):
    v = float(s)
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _prior(args):
    return PriorConfig(**(getattr(args, "prior", None) or {}))


def _hmc(args, seed=None):
    return HmcConfig(warmup=args.warmup, draws=args.draws, chains=args.chains,
                     seed=args.seed if seed is None else seed,
                     n_jobs=min(args.threads, args.chains))


def _schema(args):
    return ColumnMap(args.id_col, args.score_col, args.sd_col, _csv_list(args.pooling_vars))


def _load_experts(args):
    datasets = []
    for spec in args.expert_file:
        name, _, path = spec.rpartition("=")
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"expert file not found: {p}")
        datasets.append(load_dataset(p, _schema(args), name or None))
    names = [d.expert_name for d in datasets]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate expert names {names}; use NAME=PATH")
    return datasets


def diagnostics(draws):
    rh = [v for v in draws.rhat().values() if np.isfinite(v)]
    d = {"draws": draws.M, "chains": draws.n_chains, "divergences": draws.divergences,
         "divergence_fraction": draws.divergence_fraction(),
         "max_rhat": max(rh) if rh else float("nan"),
         "accept_stats": list(draws.accept_stats), "step_sizes": list(draws.step_sizes)}
    problems = []
    if d["divergence_fraction"] > MAX_DIVERGENCE_FRACTION:
        problems.append(f"divergence fraction {d['divergence_fraction']:.3f} > {MAX_DIVERGENCE_FRACTION}")
    if draws.n_chains > 1 and rh and d["max_rhat"] > MAX_RHAT:
        problems.append(f"max R-hat {d['max_rhat']:.3f} > {MAX_RHAT}")
    d["problems"] = problems
    d["ok"] = not problems
    return d


# -- fitted-model persistence -------------------------------------------------

def save_fit(model, model_kind, outdir):
    outdir = Path(outdir)
    ds = model.dataset
    write_dataset(ds, outdir / "data.csv")
    save_draws(model.draws, outdir / "draws.csv")
    info = {"model": model_kind, "expert": ds.expert_name, "pooling": ds.pooling_names,
            "standardizer": ds.standardizer.to_dict(), "prior": asdict(model.prior),
            "jitter": model.jitter}
    if model_kind != "chisq":
        info["transform"] = asdict(model.transform)
    atomic_write_text(outdir / "model.json", json.dumps(info, indent=2) + "\n")


def load_fit(fitdir):
    fitdir = Path(fitdir)
    try:
        info = json.loads((fitdir / "model.json").read_text())
    except FileNotFoundError:
        raise ConfigError(f"{fitdir}: no model.json (not a fit directory)") from None
    ds = load_dataset(fitdir / "data.csv", ColumnMap(pooling=info["pooling"]), info["expert"])
    ds = ScoreDataset(ds.expert_name, ds.ids, ds.log_score, ds.pred_sd, ds.Z_raw,
                      ds.pooling_names, Standardizer.from_dict(info["standardizer"]))
    draws = load_draws(fitdir / "draws.csv")
    prior = PriorConfig(**info["prior"])
    if info["model"] == "chisq":
        return gp_chisq.ChisqModel(ds, draws, prior, info["jitter"])
    return gp_cube.CubeModel(ds, draws, TransformSpec(**info["transform"]), prior, info["jitter"])


def _fit_one(ds, args, seed):
    cfg = _hmc(args, seed)
    prior = _prior(args)
    if args.model == "chisq":
        return gp_chisq.fit(ds, cfg, prior)
    transform = TransformSpec("power") if args.model == "power" else CUBE_ROOT
    return gp_cube.fit(ds, cfg, prior, transform)


# -- commands -----------------------------------------------------------------

def cmd_simulate(args):
    out = Path(args.out)
    scen = simlab.SimScenario(n=args.n, replications=args.replications, seed=args.seed)
    files = []
    for r in range(args.replications):
        ds, cov = simlab.simulate(scen, r)
        path = out / f"sim_rep{r}.csv"
        write_dataset(ds, path)
        write_table(out / f"sim_rep{r}_covariates.csv",
                    [{"id": int(i), "x1": float(a), "x2": float(b), "y": float(c)}
                     for i, a, b, c in zip(ds.ids, cov.x1, cov.x2, cov.y)])
        files.append(str(path))
    grid = np.asarray(scen.grid)
    write_table(out / "query_grid.csv",
                [{"x2": float(g), "pred_sd": math.sqrt(simlab.EXPERT_VAR)} for g in grid])
    write_table(out / "truth.csv",
                [{"x2": float(g), "elpd": float(e)} for g, e in zip(grid, simlab.true_elpd(grid))])
    log.info("wrote %d simulated datasets to %s", len(files), out)
    return EXIT_OK, {"files": files}


def cmd_fit(args):
    datasets = _load_experts(args)
    out = Path(args.out)
    seeds = np.random.SeedSequence(args.seed).generate_state(len(datasets))
    status, summary = EXIT_OK, {}
    for ds, seed in zip(datasets, seeds):
        model = _fit_one(ds, args, int(seed))
        sub = out / ds.expert_name if len(datasets) > 1 else out
        save_fit(model, args.model, sub)
        diag = diagnostics(model.draws)
        diag["seed"] = int(seed)
        atomic_write_text(sub / "diagnostics.json", json.dumps(_jsonable(diag), indent=2) + "\n")
        summary[ds.expert_name] = diag
        if not diag["ok"]:
            log.error("%s: diagnostics failed: %s", ds.expert_name, "; ".join(diag["problems"]))
            status = EXIT_DIAGNOSTICS
        else:
            log.info("%s: fit ok (max R-hat %.3f, %d divergences)", ds.expert_name,
                     diag["max_rhat"], diag["divergences"])
    return status, {"diagnostics": summary}


def _query_points(path, model):
    rows = read_table(path)
    if not rows:
        raise ConfigError(f"{path}: no query rows")
    names = model.dataset.pooling_names
    missing = [c for c in names if c not in rows[0]]
    if missing:
        raise ConfigError(f"{path}: missing pooling columns {missing}")
    try:
        Zq = np.array([[float(r[c]) for c in names] for r in rows])
        if "a_tilde" in rows[0]:
            a = np.array([float(r["a_tilde"]) for r in rows])
        elif "pred_sd" in rows[0]:
            a = offset_a(np.array([float(r["pred_sd"]) for r in rows]))
        else:
            raise ConfigError(f"{path}: need a pred_sd or a_tilde column")
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from None
    return Zq, np.atleast_1d(a)


def cmd_predict(args):
    out = Path(args.out)
    ss = np.random.SeedSequence(args.seed)
    written = []
    for fitdir, child in zip(args.fit_dir, ss.spawn(len(args.fit_dir))):
        model = load_fit(fitdir)
        Zq, a = _query_points(args.query_file, model)
        eta = model.elpd_draws(Zq, a, np.random.default_rng(child))
        s = simlab.summarize_draws(eta)
        name = model.dataset.expert_name
        rows = []
        for q in range(Zq.shape[0]):
            row = {"query": q}
            row.update({c: float(Zq[q, j]) for j, c in enumerate(model.dataset.pooling_names)})
            row.update({k: float(v[q]) for k, v in s.items()})
            rows.append(row)
        write_table(out / f"elpd_summary_{name}.csv", rows)
        buf = io.StringIO()
        buf.write("# " + json.dumps({"expert": name}) + "\n")
        buf.write(",".join(f"q{q}" for q in range(Zq.shape[0])) + "\n")
        for r in eta:
            buf.write(",".join(repr(float(v)) for v in r) + "\n")
        path = out / f"elpd_draws_{name}.csv"
        atomic_write_text(path, buf.getvalue())
        written.append(str(path))
    return EXIT_OK, {"draw_files": written}


def read_elpd_draws(path):
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise ConfigError(f"{path}: missing header line")
    name = json.loads(text[0][1:])["expert"]
    mat = np.array([[float(v) for v in ln.split(",")] for ln in text[2:] if ln.strip()])
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise ConfigError(f"{path}: no draws")
    return name, mat


def cmd_pool(args):
    out = Path(args.out)
    experts, mats = [], []
    for p in args.elpd_draws or []:
        name, mat = read_elpd_draws(p)
        experts.append(name)
        mats.append(mat)
    L = None
    if args.log_pred_file:
        rows = read_table(args.log_pred_file)
        cols = list(rows[0]) if rows else []
        if experts:
            missing = [e for e in experts if e not in cols]
            if missing:
                raise ConfigError(f"{args.log_pred_file}: missing expert columns {missing}")
        else:
            experts = cols
        L = np.array([[float(r[e]) for e in experts] for r in rows])
    if not experts:
        raise ConfigError("pool needs --elpd-draws files or a --log-pred-file")
    if mats:
        if len({m.shape for m in mats}) != 1:
            raise ConfigError("ELPD draw files disagree in shape")
        Q = mats[0].shape[1]
    else:
        if args.method not in ("equal", "optimal"):
            raise ConfigError(f"method {args.method!r} needs --elpd-draws")
        Q = L.shape[0]
    if L is not None and L.shape[0] != Q:
        raise ConfigError(f"{args.log_pred_file}: {L.shape[0]} rows, expected {Q}")
    if args.method in ("dynamic", "optimal") and L is None:
        raise ConfigError(f"method {args.method!r} needs --log-pred-file")

    rng = np.random.default_rng(args.seed)
    K = len(experts)
    weight_rows, pooled_rows, p_hist = [], [], []
    for q in range(Q):
        draws = [m[:, q] for m in mats]
        p = pooling.prob_best(draws, rng) if mats else None
        c = None
        if args.method == "equal":
            w = pooling.equal_weights(K, experts)
        elif args.method == "optimal":
            w = (pooling.PoolWeights(experts, pooling.optimal_pool_weights(L[:q])) if q
                 else pooling.equal_weights(K, experts))
        elif args.method == "natural":
            w = pooling.natural_weights(p, experts)
        elif args.method == "selection":
            w = pooling.selection_weights(draws, experts)
        elif args.method == "softmax_fixed_c":
            w = pooling.softmax_weights(p, args.c, experts)
        else:
            c = pooling.dynamic_c(p_hist, L[:q], args.c_grid) if q else 0.0
            w = pooling.softmax_weights(p, c, experts)
        if p is not None:
            p_hist.append(p)
        c = w.c if c is None else c
        row = {"query": q, "method": args.method, "c": "" if c is None else float(c)}
        row.update({f"w_{e}": float(v) for e, v in zip(experts, w.weights)})
        if p is not None:
            row.update({f"p_{e}": float(v) for e, v in zip(experts, p)})
        weight_rows.append(row)
        if L is not None:
            pooled_rows.append({"query": q, "pooled_log_density":
                                pooling.pooled_log_density(L[q], w.weights)})
    write_table(out / "weights.csv", weight_rows)
    extra = {"experts": experts}
    if pooled_rows:
        write_table(out / "pooled.csv", pooled_rows)
        extra["sum_pooled_log_density"] = float(sum(r["pooled_log_density"] for r in pooled_rows))
    return EXIT_OK, extra


def cmd_evaluate(args):
    out = Path(args.out)
    R = 1000 if args.full else args.replications
    scen = simlab.SimScenario(n=args.n, replications=R, seed=args.seed)
    models = [MODELS[m] if m in MODELS else m for m in _csv_list(args.models)]
    caps = {"gp_chisq": args.chisq_replications} if args.chisq_replications else None
    cfg = HmcConfig(warmup=args.warmup, draws=args.draws, chains=args.chains)
    study = simlab.run_study(scen, models, cfg, _prior(args), caps, n_jobs=args.threads)
    write_table(out / "metrics.csv", study.metrics_rows())
    write_table(out / "grid.csv", study.grid_rows())
    summary = {"replications": R, "models": models, "percentile_replications": {}}
    failures = []
    for m in models:
        pr = study.percentile_replications(m)
        summary["percentile_replications"][m] = {str(k): v for k, v in pr.items()}
        med = next(r for r in study.for_model(m) if r.replication == pr[50.0])
        summary.setdefault("median_mise_hpd_coverage", {})[m] = simlab.hpd_coverage(med, scen.grid)
        for r in study.for_model(m):
            div_frac = r.divergences / (cfg.draws * cfg.chains)
            if div_frac > MAX_DIVERGENCE_FRACTION or r.max_rhat > MAX_RHAT:
                failures.append({"model": m, "replication": r.replication,
                                 "divergence_fraction": div_frac, "max_rhat": r.max_rhat})
    if {"gp_cube", "gp_chisq"} <= set(models):
        summary["median_log_mise_difference"] = simlab.median_log_mise_difference(study)
    summary["diagnostic_failures"] = failures
    atomic_write_text(out / "summary.json", json.dumps(_jsonable(summary), indent=2) + "\n")
    if failures:
        log.error("%d fits failed diagnostics (see summary.json)", len(failures))
        return EXIT_DIAGNOSTICS, summary
    return EXIT_OK, summary


def cmd_backtest(args):
    datasets = _load_experts(args)
    out = Path(args.out)
    cfg = backtest.BacktestConfig(
        start=args.start, gp=args.gp, refit_every=args.refit_every,
        hmc=HmcConfig(warmup=args.warmup, draws=args.draws, chains=args.chains,
                      n_jobs=min(args.threads, args.chains)),
        max_draws=args.max_draws, c=args.c, c_grid=args.c_grid, seed=args.seed,
        prior=_prior(args))
    res = backtest.run_backtest(datasets, cfg)
    write_table(out / "table1.csv", res.table1)
    write_table(out / "table2.csv", res.table2)
    write_table(out / "steps.csv", res.steps)
    extra = {"experts": list(res.experts)}
    if res.fits:
        write_table(out / "fits.csv", res.fits)
        failed = [f for f in res.fits if f["divergence_fraction"] > MAX_DIVERGENCE_FRACTION
                  or f["max_rhat"] > MAX_RHAT]
        extra["diagnostic_failures"] = failed
        if failed:
            log.error("%d refits failed diagnostics (see fits.csv)", len(failed))
            return EXIT_DIAGNOSTICS, extra
    return EXIT_OK, extra


# -- parser -------------------------------------------------------------------

def _add_common(p, seed_default=0):
    p.add_argument("--config", help="JSON file of option defaults (flags win)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("-v", "--verbose", action="count", default=0)


def _add_hmc(p, warmup=500, draws=1000, chains=4):
    p.add_argument("--draws", type=_positive_int, default=draws, help="post-warmup draws per chain")
    p.add_argument("--warmup", type=_positive_int, default=warmup)
    p.add_argument("--chains", type=_positive_int, default=chains)
    p.add_argument("--threads", type=_positive_int, default=default_threads(),
                   help="parallel workers (default from ELPDGP_THREADS, else 1)")


def _add_data(p):
    p.add_argument("--expert-file", action="append", required=True, metavar="[NAME=]PATH",
                   help="score file of one expert; repeat for several")
    p.add_argument("--pooling-vars", help="comma-separated pooling columns (default: all others)")
    p.add_argument("--id-col", default="id")
    p.add_argument("--score-col", default="log_score")
    p.add_argument("--sd-col", default="pred_sd")


def build_parser():
    parser = argparse.ArgumentParser(prog="elpdgp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write simulated score datasets")
    _add_common(p, seed_default=2024)
    p.add_argument("--n", type=_positive_int, default=150)
    p.add_argument("--replications", type=_positive_int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a GP model to each expert's scores")
    _add_common(p)
    _add_data(p)
    p.add_argument("--model", choices=sorted(MODELS), default="cube")
    _add_hmc(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="ELPD draws and summaries at query points")
    _add_common(p)
    p.add_argument("--fit-dir", action="append", required=True, help="output of fit; repeatable")
    p.add_argument("--query-file", required=True,
                   help="CSV with the pooling columns and pred_sd or a_tilde")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("pool", help="combination weights and pooled log densities")
    _add_common(p)
    p.add_argument("--elpd-draws", action="append", help="elpd_draws_*.csv from predict; repeatable")
    p.add_argument("--log-pred-file",
                   help="CSV, one column per expert: realized log predictive density per query row")
    p.add_argument("--method", choices=METHODS, default="dynamic")
    p.add_argument("--c", type=_nonneg_float, default=5.0, help="fixed discrimination factor")
    p.add_argument("--c-grid", type=_c_grid, default=pooling.C_GRID,
                   help="grid for dynamic c, start:stop:step or comma list")
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("evaluate", help="replicated simulation study of both models")
    _add_common(p, seed_default=2024)
    p.add_argument("--n", type=_positive_int, default=150)
    p.add_argument("--replications", type=_positive_int, default=50)
    p.add_argument("--chisq-replications", type=_positive_int, default=10)
    p.add_argument("--full", action="store_true", help="1000 replications")
    p.add_argument("--models", default="cube,chisq")
    _add_hmc(p, warmup=simlab.STUDY_HMC.warmup, draws=simlab.STUDY_HMC.draws,
             chains=simlab.STUDY_HMC.chains)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("backtest", help="expanding-window one-step-ahead evaluation")
    _add_common(p)
    _add_data(p)
    p.add_argument("--start", type=_positive_int, default=10, help="first evaluated record")
    p.add_argument("--gp", action="store_true", help="include GP(1/3) and ELPD-based pools")
    p.add_argument("--refit-every", type=_positive_int, default=25)
    p.add_argument("--max-draws", type=_positive_int, default=250)
    p.add_argument("--c", type=_nonneg_float, default=5.0)
    p.add_argument("--c-grid", type=_c_grid, default=pooling.C_GRID)
    _add_hmc(p, warmup=200, draws=250, chains=2)
    p.set_defaults(func=cmd_backtest)
    return parser


def parse_args(argv):
    parser = build_parser()
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    config = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    prior = None
    if command and config:
        subparser = choices[command]
        try:
            defaults = load_config(config, subparser)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config}") from None
        prior = defaults.pop("prior", None)
        subparser.set_defaults(**defaults)
        # required options may now come from the config
        for act in subparser._actions:
            if act.dest in defaults:
                act.required = False
    args = parser.parse_args(argv)
    args.prior = prior
    return args


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except ConfigError as e:
        print(f"elpdgp: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else
                        logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        status, extra = args.func(args)
    except (ConfigError, DataError, pooling.PoolingError) as e:
        print(f"elpdgp: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except HMCError as e:
        # a sampler that cannot run is a diagnostics failure, recorded like one
        print(f"elpdgp: sampler failure: {e}", file=sys.stderr)
        status, extra = EXIT_DIAGNOSTICS, {"error": str(e)}
    write_manifest(args.out, args, argv, {"exit_status": status, "result": extra})
    return status


if __name__ == "__main__":
    sys.exit(main())
