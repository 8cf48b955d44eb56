"""Dataset ingestion, synthetic ensembles, r-sweeps and result files.

On-disk dataset layout::

    manifest.json  {"name": ..., "classes": L, "labels": "labels.csv",
                    "ensembles": [["m0.csv", "m1.csv", ...], ...]}
    m*.csv         N rows x L probabilities, no header
    labels.csv     N rows, one integer class index each

Paths in the manifest are relative to the manifest's directory.
"""

from __future__ import annotations

import csv
import functools
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import discrete
from .errors import GenMeanError, InvalidInputError
from .gaussian import (
    GaussianDensity,
    IntegrationConfig,
    estimate_nll,
    normalize,
    sample_gaussian,
)
from .powermean import PowerOrder, as_order

log = logging.getLogger(__name__)

#: rows further than this from summing to one are rejected outright
HARD_ROW_TOL = 1e-4
#: rows closer than this to one are kept verbatim (keeps load/save idempotent)
EXACT_ROW_TOL = 1e-12

DEFAULT_GRID = ("-inf", "-4", "-2", "-1", "-0.5", "0", "0.25", "0.5", "0.75", "1", "1.5", "2", "4", "+inf")


class DatasetError(InvalidInputError):
    """Problem with a manifest or one of the files it references."""


class MissingFileError(DatasetError, FileNotFoundError):
    pass


class SchemaError(DatasetError):
    pass


class RowNormalizationError(DatasetError):
    pass


class LabelRangeError(DatasetError):
    pass


def _threads():
    env = os.environ.get("GENMEAN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidInputError(f"GENMEAN_THREADS={env!r} is not an integer") from None
    return os.cpu_count() or 1


def _map(fn, items):
    items = list(items)
    n = min(_threads(), len(items))
    if n <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


@dataclass
class EnsembleDataset:
    """E ensembles of k models predicting N samples over L classes.

    ``probs`` has shape (E, N, k, L); rows are already renormalised.
    """

    probs: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.probs.ndim != 4:
            raise SchemaError(f"probs must have shape (E, N, k, L), got {self.probs.shape}")
        E, N, k, L = self.probs.shape
        if E < 1 or N < 1 or k < 1 or L < 2:
            raise SchemaError(f"degenerate dataset shape {self.probs.shape}")
        if self.labels.shape != (N,):
            raise SchemaError(f"{self.labels.size} labels for {N} samples")
        if (self.labels < 0).any() or (self.labels >= L).any():
            bad = int(np.flatnonzero((self.labels < 0) | (self.labels >= L))[0])
            raise LabelRangeError(f"label {self.labels[bad]} at row {bad} outside [0, {L})")

    @property
    def shape(self):
        return self.probs.shape

    @property
    def n_ensembles(self):
        return self.probs.shape[0]

    @property
    def n_samples(self):
        return self.probs.shape[1]

    @property
    def n_models(self):
        return self.probs.shape[2]

    @property
    def n_classes(self):
        return self.probs.shape[3]

    @property
    def log_probs(self):
        with np.errstate(divide="ignore"):
            return np.log(self.probs)

    def manifest(self):
        E, N, k, L = self.shape
        return {"name": self.name, "N": N, "k": k, "L": L, "E": E}


def _renormalize(p, where):
    s = p.sum(axis=-1)
    off = np.abs(s - 1.0)
    if (off > HARD_ROW_TOL).any():
        row = int(np.flatnonzero(off > HARD_ROW_TOL)[0])
        raise RowNormalizationError(f"{where}: row {row} sums to {s[row]!r}")
    fix = off > EXACT_ROW_TOL
    if fix.any():
        p = p.copy()
        p[fix] /= s[fix, None]
    return p


def _read_matrix(path, L):
    if not path.exists():
        raise MissingFileError(f"missing model file {path}")
    rows = []
    with path.open(newline="") as fh:
        for i, rec in enumerate(csv.reader(fh)):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != L:
                raise SchemaError(f"{path}: row {i} has {len(rec)} columns, expected {L}")
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                raise SchemaError(f"{path}: row {i} is not numeric") from None
            if any(not (math.isfinite(v) and v >= 0) for v in vals):
                raise SchemaError(f"{path}: row {i} has a negative or non-finite probability")
            rows.append(vals)
    if not rows:
        raise SchemaError(f"{path}: no rows")
    return _renormalize(np.array(rows, dtype=float), str(path))


def _read_labels(path):
    if not path.exists():
        raise MissingFileError(f"missing labels file {path}")
    out = []
    with path.open(newline="") as fh:
        for i, rec in enumerate(csv.reader(fh)):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != 1:
                raise SchemaError(f"{path}: row {i} must hold a single label")
            try:
                out.append(int(rec[0]))
            except ValueError:
                raise SchemaError(f"{path}: row {i} label {rec[0]!r} is not an integer") from None
    return np.array(out, dtype=np.int64)


def load_dataset(manifest_path) -> EnsembleDataset:
    path = Path(manifest_path)
    if not path.exists():
        raise MissingFileError(f"missing manifest {path}")
    try:
        man = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    for key in ("classes", "labels", "ensembles"):
        if key not in man:
            raise SchemaError(f"{path}: manifest lacks {key!r}")
    L = man["classes"]
    if not isinstance(L, int) or L < 2:
        raise SchemaError(f"{path}: 'classes' must be an integer >= 2")
    ens = man["ensembles"]
    if not isinstance(ens, list) or not ens or not all(isinstance(e, list) and e for e in ens):
        raise SchemaError(f"{path}: 'ensembles' must be a nonempty list of nonempty file lists")
    k = len(ens[0])
    if any(len(e) != k for e in ens):
        raise SchemaError(f"{path}: ensembles have different sizes")
    root = path.parent
    labels = _read_labels(root / man["labels"])
    N = len(labels)
    bad = np.flatnonzero((labels < 0) | (labels >= L))
    if bad.size:
        raise LabelRangeError(f"{root / man['labels']}: row {bad[0]} label {labels[bad[0]]} outside [0, {L})")
    probs = np.empty((len(ens), N, k, L))
    for e, files in enumerate(ens):
        for i, fname in enumerate(files):
            m = _read_matrix(root / fname, L)
            if m.shape[0] != N:
                raise SchemaError(f"{root / fname}: {m.shape[0]} rows but {N} labels")
            probs[e, :, i, :] = m
    return EnsembleDataset(probs, labels, name=str(man.get("name", path.stem)))


def save_dataset(ds: EnsembleDataset, directory) -> Path:
    """Write ``ds`` in the manifest layout; returns the manifest path."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    E, N, k, L = ds.shape
    ensembles = []
    for e in range(E):
        files = []
        for i in range(k):
            fname = f"e{e}_m{i}.csv"
            with (root / fname).open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                for row in ds.probs[e, :, i, :]:
                    w.writerow([repr(float(v)) for v in row])
            files.append(fname)
        ensembles.append(files)
    with (root / "labels.csv").open("w", newline="") as fh:
        fh.writelines(f"{int(y)}\n" for y in ds.labels)
    man = {"name": ds.name, "classes": L, "labels": "labels.csv", "ensembles": ensembles}
    mpath = root / "manifest.json"
    mpath.write_text(json.dumps(man, indent=2) + "\n")
    return mpath


@dataclass
class SweepResult:
    """NLL per order, averaged over ensembles, plus the individual-model band.

    ``stderr`` is only filled by sampling-based sweeps (Monte Carlo error of
    each NLL estimate).
    """

    grid: list
    mean_nll: np.ndarray
    std_nll: np.ndarray
    baseline_mean: float
    baseline_std: float
    per_ensemble: np.ndarray
    stderr: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = [as_order(r) for r in self.grid]
        self.mean_nll = np.asarray(self.mean_nll, dtype=float)
        self.std_nll = np.asarray(self.std_nll, dtype=float)
        self.per_ensemble = np.atleast_2d(np.asarray(self.per_ensemble, dtype=float))
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float)
        if any(not a < b for a, b in zip(self.grid, self.grid[1:])):
            raise InvalidInputError("grid must be strictly increasing")

    def nll(self, order):
        return float(self.mean_nll[self.grid.index(as_order(order))])

    def __eq__(self, other):
        if not isinstance(other, SweepResult):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is b
            return np.array_equal(a, b)

        return (
            self.grid == other.grid
            and same(self.mean_nll, other.mean_nll)
            and same(self.std_nll, other.std_nll)
            and self.baseline_mean == other.baseline_mean
            and self.baseline_std == other.baseline_std
            and same(self.per_ensemble, other.per_ensemble)
            and same(self.stderr, other.stderr)
        )


def parse_grid(spec):
    """Comma-separated orders, sorted and deduplicated."""
    items = [s for s in (spec.split(",") if isinstance(spec, str) else spec)]
    orders = sorted({as_order(s.strip() if isinstance(s, str) else s) for s in items})
    if not orders:
        raise InvalidInputError("empty grid")
    return orders


def _check_grid(grid):
    orders = [as_order(r) for r in grid]
    if not orders:
        raise InvalidInputError("empty grid")
    if any(not a < b for a, b in zip(orders, orders[1:])):
        raise InvalidInputError("grid must be strictly increasing")
    return orders


def sweep_discrete(ds: EnsembleDataset, grid) -> SweepResult:
    orders = _check_grid(grid)
    lp = ds.log_probs
    E = ds.n_ensembles

    def run(job):
        e, j = job
        agg, _ = discrete.aggregate_batch(lp[e], orders[j])
        return discrete.cross_entropy(agg, ds.labels)

    jobs = [(e, j) for e in range(E) for j in range(len(orders))]
    per = np.empty((E, len(orders)))
    for (e, j), v in zip(jobs, _map(run, jobs)):
        per[e, j] = v
    per_model = np.concatenate(
        [discrete.individual_nll_baseline(lp[e], ds.labels)[1] for e in range(E)]
    )
    return SweepResult(
        grid=orders,
        mean_nll=np.mean(per, axis=0),
        std_nll=np.std(per, axis=0),
        baseline_mean=float(np.mean(per_model)),
        baseline_std=float(np.std(per_model)),
        per_ensemble=per,
        metadata={
            "kind": "discrete",
            "dataset": ds.manifest(),
            "baseline": "mean and population std of per-model NLL pooled over all ensembles",
        },
    )


def _softmax_floor(p, floor=1e-12):
    p = np.maximum(p, floor)
    return p / p.sum(axis=-1, keepdims=True)


def synth_ensemble(generator, N, k, L, E, seed, *, alpha=5.0, accuracy=0.6, sigma=0.05):
    """Synthetic ensemble dataset, reproducible from ``seed``.

    ``dirichlet_jitter``: every model draws its prediction for a sample from
    Dirichlet(alpha * L * c), where c puts ``accuracy`` on a per-sample
    target class (the true class with probability ``accuracy``, otherwise a
    random wrong class) and spreads the rest uniformly. Smaller ``alpha``
    means more disagreement.

    ``near_consensus``: a single base predictor per sample with mass
    ``accuracy`` on the true class and a random Dirichlet spread elsewhere,
    copied k times with :func:`discrete.near_consensus_perturb`.
    """
    if generator not in ("dirichlet_jitter", "near_consensus"):
        raise InvalidInputError(f"unknown generator {generator!r}")
    if min(N, k, E) < 1 or L < 2:
        raise InvalidInputError("N, k, E must be >= 1 and L >= 2")
    if not 0 < accuracy < 1:
        raise InvalidInputError("accuracy must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    labels = rng.integers(L, size=N)
    probs = np.empty((E, N, k, L))
    if generator == "dirichlet_jitter":
        if not alpha > 0:
            raise InvalidInputError("alpha must be positive")
        for e in range(E):
            hit = rng.random(N) < accuracy
            wrong = (labels + rng.integers(1, L, size=N)) % L
            target = np.where(hit, labels, wrong)
            center = np.full((N, L), (1.0 - accuracy) / (L - 1))
            center[np.arange(N), target] = accuracy
            conc = alpha * L * center
            g = rng.gamma(np.broadcast_to(conc[:, None, :], (N, k, L)))
            probs[e] = _softmax_floor(g / g.sum(axis=-1, keepdims=True))
        name = f"dirichlet_jitter(alpha={alpha}, accuracy={accuracy})"
    else:
        if k < 2:
            raise InvalidInputError("near_consensus needs k >= 2")
        if not sigma >= 0:
            raise InvalidInputError("sigma must be nonnegative")
        for e in range(E):
            rest = rng.dirichlet(np.ones(L - 1), size=N)
            for n in range(N):
                base = np.empty(L)
                base[labels[n]] = accuracy
                base[np.arange(L) != labels[n]] = (1.0 - accuracy) * rest[n]
                base = _softmax_floor(base)
                rows = discrete.near_consensus_perturb(
                    np.log(base), int(labels[n]), sigma, k, rng.integers(2**63)
                )
                probs[e, n] = np.exp(rows)
        name = f"near_consensus(sigma={sigma}, accuracy={accuracy})"
    probs /= probs.sum(axis=-1, keepdims=True)
    return EnsembleDataset(probs, labels, name=name)


def sweep_gaussian(experts, sample_law, n_samples, grid, cfg: IntegrationConfig | None = None):
    """NLL of the pooled 1D density over shared samples from ``sample_law``."""
    cfg = cfg or IntegrationConfig()
    orders = _check_grid(grid)
    gs = list(experts)
    if not gs or any(g.dim != 1 for g in gs) or sample_law.dim != 1:
        raise InvalidInputError("sweep_gaussian works with 1D experts and sample law")
    ys = sample_gaussian(sample_law, n_samples, cfg.seed)[:, 0]

    def run(r):
        norm = normalize(gs, r, cfg)
        nll, se = estimate_nll(gs, r, norm, ys)
        return nll, se, norm.method, norm.log_z

    out = _map(run, orders)
    mean = np.array([o[0] for o in out])
    se = np.array([o[1] for o in out])
    per_expert = np.array([-np.mean(g.log_density(ys)) for g in gs])
    return SweepResult(
        grid=orders,
        mean_nll=mean,
        std_nll=np.zeros(len(orders)),
        baseline_mean=float(np.mean(per_expert)),
        baseline_std=float(np.std(per_expert)),
        per_ensemble=mean[None, :],
        stderr=se,
        metadata={
            "kind": "gaussian",
            "experts": [[float(g.mean[0]), math.sqrt(g.covariance[0, 0])] for g in gs],
            "sample_law": [float(sample_law.mean[0]), math.sqrt(sample_law.covariance[0, 0])],
            "n_samples": int(n_samples),
            "seed": cfg.seed,
            "normalization": {str(r): [o[2], o[3]] for r, o in zip(orders, out)},
        },
    )


CSV_COLUMNS = ("order", "mean_nll", "std_nll", "baseline_mean", "baseline_std")


def _fmt(x, digits=None):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return repr(x) if digits is None else f"{x:.{digits}g}"


def _parse_float(s):
    return float(s.replace("+inf", "inf"))


def result_to_csv(result: SweepResult, digits=None) -> str:
    """CSV table; ``digits=None`` writes round-trippable floats."""
    fmt = functools.partial(_fmt, digits=digits)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    E = result.per_ensemble.shape[0]
    header = list(CSV_COLUMNS)
    if result.stderr is not None:
        header.append("stderr")
    header += [f"nll_ensemble_{e}" for e in range(E)]
    w.writerow(header)
    for j, r in enumerate(result.grid):
        row = [str(r), fmt(result.mean_nll[j]), fmt(result.std_nll[j]),
               fmt(result.baseline_mean), fmt(result.baseline_std)]
        if result.stderr is not None:
            row.append(fmt(result.stderr[j]))
        row += [fmt(result.per_ensemble[e, j]) for e in range(E)]
        w.writerow(row)
    return buf.getvalue()


def result_to_json(result: SweepResult) -> str:
    def enc(a):
        return [_fmt(v) if not math.isfinite(v) else float(v) for v in np.ravel(a)]

    doc = {
        "grid": [str(r) for r in result.grid],
        "mean_nll": enc(result.mean_nll),
        "std_nll": enc(result.std_nll),
        "baseline_mean": enc([result.baseline_mean])[0],
        "baseline_std": enc([result.baseline_std])[0],
        "per_ensemble": [enc(row) for row in result.per_ensemble],
        "stderr": None if result.stderr is None else enc(result.stderr),
        "metadata": result.metadata,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def save_result(result: SweepResult, path, format=None):
    p = Path(path)
    fmt = format or ("json" if p.suffix.lower() == ".json" else "csv")
    if fmt not in ("csv", "json"):
        raise InvalidInputError(f"unknown format {fmt!r}")
    text = result_to_csv(result) if fmt == "csv" else result_to_json(result)
    p.write_text(text)


def load_result(path, format=None) -> SweepResult:
    p = Path(path)
    fmt = format or ("json" if p.suffix.lower() == ".json" else "csv")
    if fmt == "json":
        doc = json.loads(p.read_text())

        def dec(a):
            return np.array([_parse_float(v) if isinstance(v, str) else v for v in a], dtype=float)

        return SweepResult(
            grid=doc["grid"],
            mean_nll=dec(doc["mean_nll"]),
            std_nll=dec(doc["std_nll"]),
            baseline_mean=float(dec([doc["baseline_mean"]])[0]),
            baseline_std=float(dec([doc["baseline_std"]])[0]),
            per_ensemble=np.array([dec(r) for r in doc["per_ensemble"]]),
            stderr=None if doc.get("stderr") is None else dec(doc["stderr"]),
            metadata=doc.get("metadata", {}),
        )
    with p.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if tuple(header[:5]) != CSV_COLUMNS:
        raise SchemaError(f"{p}: unexpected header {header[:5]}")
    col = {h: i for i, h in enumerate(header)}
    ens_cols = [col[h] for h in header if h.startswith("nll_ensemble_")]
    get = lambda name: np.array([_parse_float(r[col[name]]) for r in body])  # noqa: E731
    return SweepResult(
        grid=[r[0] for r in body],
        mean_nll=get("mean_nll"),
        std_nll=get("std_nll"),
        baseline_mean=float(_parse_float(body[0][col["baseline_mean"]])),
        baseline_std=float(_parse_float(body[0][col["baseline_std"]])),
        per_ensemble=np.array([[_parse_float(r[c]) for r in body] for c in ens_cols]),
        stderr=get("stderr") if "stderr" in col else None,
    )


__all__ = [
    "DEFAULT_GRID",
    "EnsembleDataset",
    "SweepResult",
    "IntegrationConfig",
    "GenMeanError",
    "load_dataset",
    "save_dataset",
    "sweep_discrete",
    "synth_ensemble",
    "sweep_gaussian",
    "save_result",
    "load_result",
    "parse_grid",
    "PowerOrder",
    "GaussianDensity",
]
