"""Score datasets, prior settings and posterior draw persistence."""
from __future__ import annotations

import csv
import json
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import transforms


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreRecord:
    observation_id: int
    raw_log_score: float
    expert_predictive_sd: float
    pooling_point: tuple


@dataclass(frozen=True)
class Standardizer:
    """Affine map ``(z - center) / scale`` applied to pooling variables."""

    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, Z):
        Z = np.asarray(Z, dtype=float)
        center = Z.mean(axis=0)
        scale = Z.std(axis=0, ddof=1) if Z.shape[0] > 1 else np.ones(Z.shape[1])
        scale = np.where((scale > 0) & np.isfinite(scale), scale, 1.0)
        return cls(center, scale)

    @classmethod
    def identity(cls, d):
        return cls(np.zeros(d), np.ones(d))

    def __call__(self, Z):
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z.reshape(-1, self.center.size)
        if Z.shape[1] != self.center.size:
            raise DataError(f"expected {self.center.size} pooling variables, got {Z.shape[1]}")
        return (Z - self.center) / self.scale

    def to_dict(self):
        return {"center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["center"], dtype=float), np.asarray(d["scale"], dtype=float))


class ScoreDataset:
    """Log scores of one expert in temporal order.

    Raw columns are stored as read; ``a``, ``lprime`` and ``ldblprime`` are
    derived from ``(log_score, pred_sd)`` at construction.
    """

    def __init__(self, expert_name, ids, log_score, pred_sd, Z, pooling_names=None,
                 standardizer: Optional[Standardizer] = None):
        ids = np.asarray(ids, dtype=np.int64)
        log_score = np.array(log_score, dtype=float)
        pred_sd = np.array(pred_sd, dtype=float)
        Z = np.array(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z.reshape(-1, 1)
        n = log_score.size
        if not (ids.size == pred_sd.size == Z.shape[0] == n):
            raise DataError("column lengths differ")
        if Z.shape[1] < 1:
            raise DataError("at least one pooling variable is required")
        for name, col in (("log score", log_score), ("predictive sd", pred_sd)):
            bad = np.flatnonzero(~np.isfinite(col))
            if bad.size:
                raise DataError(f"non-finite {name} at row {int(bad[0])} (id {int(ids[bad[0]])})")
        bad = np.flatnonzero(~(pred_sd > 0))
        if bad.size:
            raise DataError(f"predictive sd must be positive: row {int(bad[0])} (id {int(ids[bad[0]])})")
        bad = np.flatnonzero(~np.all(np.isfinite(Z), axis=1))
        if bad.size:
            raise DataError(f"non-finite pooling variable at row {int(bad[0])} (id {int(ids[bad[0]])})")

        a = transforms.offset_a(pred_sd) if n else np.zeros(0)
        raw_lprime = np.atleast_1d(a - log_score)
        bad = np.flatnonzero(raw_lprime < -transforms.CLAMP_TOL)
        if bad.size:
            i = int(bad[0])
            raise DataError(
                f"inconsistent score at row {i} (id {int(ids[i])}): log score "
                f"{log_score[i]:.6g} exceeds the maximum {a[i]:.6g} implied by its predictive sd"
            )
        self.expert_name = str(expert_name)
        self.ids = ids
        self.log_score = log_score
        self.pred_sd = pred_sd
        self.Z_raw = Z
        self.pooling_names = list(pooling_names or [f"z{j}" for j in range(Z.shape[1])])
        self.a = np.atleast_1d(a)
        self.lprime = np.maximum(raw_lprime, 0.0)
        self.ldblprime = np.cbrt(self.lprime)
        self.standardizer = standardizer or (
            Standardizer.fit(Z) if n else Standardizer.identity(Z.shape[1])
        )
        self.Z = self.standardizer(Z)
        for arr in (self.ids, self.log_score, self.pred_sd, self.Z_raw, self.a,
                    self.lprime, self.ldblprime, self.Z):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.log_score.size

    @property
    def d(self) -> int:
        return self.Z_raw.shape[1]

    def __len__(self):
        return self.n

    @property
    def records(self):
        return [
            ScoreRecord(int(i), float(l), float(s), tuple(map(float, z)))
            for i, l, s, z in zip(self.ids, self.log_score, self.pred_sd, self.Z_raw)
        ]

    def head(self, m, standardizer: Optional[Standardizer] = None):
        """First ``m`` records; the standardization map is refit unless given."""
        return ScoreDataset(self.expert_name, self.ids[:m], self.log_score[:m],
                            self.pred_sd[:m], self.Z_raw[:m], self.pooling_names,
                            standardizer)

    def __repr__(self):
        return f"ScoreDataset({self.expert_name!r}, n={self.n}, d={self.d})"


@dataclass(frozen=True)
class ColumnMap:
    id: str = "id"
    log_score: str = "log_score"
    pred_sd: str = "pred_sd"
    pooling: Optional[Sequence[str]] = None


def _delimiter_for(path: Path, head: str) -> str:
    if path.suffix.lower() in (".tsv", ".tab"):
        return "\t"
    try:
        return csv.Sniffer().sniff(head, delimiters=",\t;").delimiter
    except csv.Error:
        return ","


def load_dataset(path, schema: ColumnMap = ColumnMap(), expert_name=None) -> ScoreDataset:
    """Read one expert's scores from a delimited text file with a header row.

    Pooling columns default to every column other than id, log score and
    predictive sd, in file order.
    """
    path = Path(path)
    text = path.read_text()
    delim = _delimiter_for(path, text[:4096])
    rows = list(csv.reader(text.splitlines(), delimiter=delim))
    rows = [r for r in rows if r and not all(c.strip() == "" for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    pooling = list(schema.pooling) if schema.pooling else [
        h for h in header if h not in (schema.id, schema.log_score, schema.pred_sd)
    ]
    for col in [schema.id, schema.log_score, schema.pred_sd, *pooling]:
        if col not in header:
            raise DataError(f"{path}: missing column {col!r}")
    if not pooling:
        raise DataError(f"{path}: no pooling variable columns")
    idx = {h: k for k, h in enumerate(header)}
    body = rows[1:]

    def column(name, conv=float):
        out = []
        for r, row in enumerate(body):
            try:
                out.append(conv(row[idx[name]]))
            except (ValueError, IndexError):
                raise DataError(f"{path}: bad value in column {name!r} at row {r}") from None
        return out

    ids = column(schema.id, lambda s: int(float(s)))
    Z = np.column_stack([column(c) for c in pooling]) if body else np.zeros((0, len(pooling)))
    try:
        return ScoreDataset(expert_name or path.stem, ids, column(schema.log_score),
                            column(schema.pred_sd), Z, pooling)
    except DataError as e:
        raise DataError(f"{path}: {e}") from None


def write_dataset(ds: ScoreDataset, path):
    header = ["id", "log_score", "pred_sd", *ds.pooling_names]
    rows = [
        [str(int(i)), repr(float(l)), repr(float(s)), *(repr(float(v)) for v in z)]
        for i, l, s, z in zip(ds.ids, ds.log_score, ds.pred_sd, ds.Z_raw)
    ]
    atomic_write_text(path, "\n".join(",".join(r) for r in [header, *rows]) + "\n")


@dataclass(frozen=True)
class PriorConfig:
    """Hyperpriors shared by both GP models.

    Lengthscales get Inverse-Gamma(shape, scale) priors; signal sd, noise sd
    and (for the chi-squared model) ``b`` get half-normal priors, ``b``
    centred on 1/2.  ``gp_mean=None`` means the data-driven default.
    """

    lengthscale_shape: float = 5.0
    lengthscale_scale: float = 5.0
    signal_sd_prior_scale: float = 1.0
    noise_sd_prior_scale: float = 1.0
    b_prior_scale: float = 0.25
    gp_mean: Optional[float] = None
    power_prior_mean: float = 1.0 / 3.0
    power_prior_scale: float = 0.1

    def __post_init__(self):
        for name in ("lengthscale_shape", "lengthscale_scale", "signal_sd_prior_scale",
                     "noise_sd_prior_scale", "b_prior_scale", "power_prior_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def lengthscale_prior(self):
        return (self.lengthscale_shape, self.lengthscale_scale)


_COLUMN_RE = re.compile(
    r"^(lengthscale\[\d+\]|latent\[\d+\]|theta\[\d+\]|signal_sd|noise_sd|b|power_alpha)$"
)
RESERVED = ("chain", "lp__")


@dataclass(frozen=True)
class PosteriorDraws:
    """Aligned posterior draws, chains stacked in chain order."""

    names: tuple
    values: np.ndarray
    log_posterior: np.ndarray
    chain: np.ndarray
    seed: Optional[int] = None
    divergences: int = 0
    accept_stats: tuple = ()
    step_sizes: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1:
            raise DataError("no draws")
        if values.shape[1] != len(names):
            raise DataError("column count does not match names")
        if len(set(names)) != len(names):
            raise DataError("duplicate column names")
        if not np.all(np.isfinite(values)):
            raise DataError("non-finite draw")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "log_posterior", np.asarray(self.log_posterior, dtype=float))
        object.__setattr__(self, "chain", np.asarray(self.chain, dtype=np.int64))

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def n_chains(self) -> int:
        return int(self.chain.max()) + 1

    def __getitem__(self, name):
        return self.values[:, self.names.index(name)]

    def columns(self, prefix):
        """All columns named ``prefix[j]`` stacked as an (M, k) matrix."""
        idx = [i for i, n in enumerate(self.names) if n.startswith(prefix + "[")]
        idx.sort(key=lambda i: int(self.names[i][len(prefix) + 1:-1]))
        return self.values[:, idx]

    def by_chain(self, name):
        col = self[name]
        return np.stack([col[self.chain == c] for c in range(self.n_chains)])

    def rhat(self):
        from .hmc import split_rhat
        return {n: split_rhat(self.by_chain(n)) for n in self.names}

    def divergence_fraction(self):
        return self.divergences / self.M


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_draws(draws: PosteriorDraws, path):
    header = {
        "columns": ["chain", "lp__", *draws.names],
        "seed": draws.seed,
        "divergences": int(draws.divergences),
        "accept_stats": [float(v) for v in draws.accept_stats],
        "step_sizes": [float(v) for v in draws.step_sizes],
        "meta": draws.meta,
    }
    lines = ["# " + json.dumps(header), ",".join(header["columns"])]
    for c, lp, row in zip(draws.chain, draws.log_posterior, draws.values):
        lines.append(",".join([str(int(c)), repr(float(lp)), *(repr(float(v)) for v in row)]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_draws(path) -> PosteriorDraws:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise DataError("no draws")
    if not lines[0].startswith("#"):
        raise DataError(f"{path}: missing JSON header line")
    try:
        header = json.loads(lines[0][1:])
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: bad header: {e}") from None
    cols = header.get("columns")
    if len(lines) < 2 or lines[1].split(",") != cols:
        raise DataError(f"{path}: column row does not match header")
    if cols[:2] != list(RESERVED):
        raise DataError(f"{path}: expected leading columns chain, lp__")
    for name in cols[2:]:
        if not _COLUMN_RE.match(name):
            raise DataError(f"{path}: unknown column {name!r}")
    body = lines[2:]
    if not body:
        raise DataError("no draws")
    try:
        mat = np.array([[float(v) for v in ln.split(",")] for ln in body])
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None
    if mat.ndim != 2 or mat.shape[1] != len(cols):
        raise DataError(f"{path}: ragged draw rows")
    return PosteriorDraws(
        names=tuple(cols[2:]), values=mat[:, 2:], log_posterior=mat[:, 1],
        chain=mat[:, 0].astype(np.int64), seed=header.get("seed"),
        divergences=int(header.get("divergences", 0)),
        accept_stats=tuple(header.get("accept_stats", ())),
        step_sizes=tuple(header.get("step_sizes", ())), meta=header.get("meta", {}),
    )
