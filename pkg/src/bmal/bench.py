"""Benchmark harness: data ingestion and preprocessing, the pool-based
batch active-learning loop, error metrics, and report generation.

Each loop step trains the network from scratch, evaluates it on the held-out
test set, builds the configured kernel from the trained model, selects a
batch from the pool, and moves it (with labels) into the training set.  All
randomness derives from one root seed through named streams, so data splits
do not depend on the selection method.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
import time
import urllib.request
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .kernels import GroundSet, build_kernel, parse_kernel_spec
from .model import ModelConfig, TrainConfig, init_network, train
from .selection import SelectionRequest, select

METRIC_NAMES = ("mae", "rmse", "q95", "q99", "maxe")

# activation -> (sigma_w, sigma_b)
ACTIVATION_SCALES = {"relu": (0.2, 0.2), "silu": (0.5, 1.0)}

ONE_HOT_BUDGET = 300

# named seed streams derived from the root seed
_STREAM_DATA = 0
_STREAM_SPLIT = 1
_STREAM_INIT = 2
_STREAM_TRAIN = 3
_STREAM_SKETCH = 4
_STREAM_SELECT = 5


def derived_seed(root_seed: int, stream: int, *key) -> int:
    """Deterministic child seed for (root, stream, step, ...)."""
    return int(np.random.SeedSequence((root_seed, stream) + key).generate_state(1)[0])


class BmalStepError(RuntimeError):
    """A loop step failed; the original module error is the cause."""

    def __init__(self, step: int, cause: BaseException):
        super().__init__(f"BMAL step {step} failed: {cause}")
        self.step = step


@dataclass
class Dataset:
    name: str
    X: np.ndarray
    y: np.ndarray
    feature_names: list

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass
class SplitConfig:
    n_train_init: int = 256
    n_valid: int = 1024
    test_fraction: float = 0.2
    max_trainpool: int = 200000
    split_seed: int = 0


@dataclass
class Split:
    train: np.ndarray
    valid: np.ndarray
    pool: np.ndarray
    test: np.ndarray


def split_dataset(dataset: Dataset, config: SplitConfig) -> Split:
    """Shuffle rows and carve out train/valid/pool/test index sets."""
    n = dataset.n
    rng = np.random.default_rng(config.split_seed)
    perm = rng.permutation(n)
    n_tvp = min(int(round((1.0 - config.test_fraction) * n)), config.max_trainpool)
    head = config.n_train_init + config.n_valid
    if head > n_tvp:
        raise ValueError(
            f"n_train_init + n_valid = {head} exceeds available train/pool rows {n_tvp}"
        )
    if n_tvp >= n:
        raise ValueError("no rows left for the test set")
    return Split(
        train=perm[: config.n_train_init],
        valid=perm[config.n_train_init : head],
        pool=perm[head:n_tvp],
        test=perm[n_tvp:],
    )


def load_csv(path, target_column: str) -> Dataset:
    """Load a CSV for regression.

    Rows with missing values are dropped, constant columns are removed, and
    non-numeric columns are one-hot encoded while the total number of new
    columns stays within the budget; larger categorical columns are
    discarded.
    """
    df = pd.read_csv(path)
    if target_column not in df.columns:
        raise ValueError(f"target column {target_column!r} not in {list(df.columns)}")
    df = df.dropna(axis=0).reset_index(drop=True)
    if df.empty:
        raise ValueError("no rows left after dropping missing values")
    y = pd.to_numeric(df[target_column]).to_numpy(dtype=np.float64)
    feats = df.drop(columns=[target_column])

    blocks, names = [], []
    budget = ONE_HOT_BUDGET
    for col in feats.columns:
        s = feats[col]
        if s.nunique() <= 1:
            continue  # constant column
        if pd.api.types.is_numeric_dtype(s):
            blocks.append(s.to_numpy(dtype=np.float64)[:, None])
            names.append(str(col))
        else:
            k = s.nunique()
            if k > budget:
                continue  # categorical too large for the one-hot budget
            dummies = pd.get_dummies(s, prefix=str(col), prefix_sep="=")
            dummies = dummies[sorted(dummies.columns)]
            blocks.append(dummies.to_numpy(dtype=np.float64))
            names.extend(str(c) for c in dummies.columns)
            budget -= k
    if not blocks:
        raise ValueError("no usable feature columns")
    X = np.hstack(blocks)
    return Dataset(Path(path).stem, X, y, names)


def preprocess(dataset: Dataset, split: Split) -> Dataset:
    """Soft-clip features and standardize labels, using train+pool statistics.

    Features map through 5*tanh((x - mu)/(5*sigma)); labels are shifted and
    scaled to mean 0 and variance 1 over the train+pool rows.
    """
    ref = np.concatenate([split.train, split.pool])
    X = np.asarray(dataset.X, dtype=np.float64)
    y = np.asarray(dataset.y, dtype=np.float64)
    mu = X[ref].mean(axis=0)
    sd = X[ref].std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)  # constant columns are dropped upstream
    Xp = 5.0 * np.tanh((X - mu) / (5.0 * sd))
    y_mu = y[ref].mean()
    y_sd = y[ref].std()
    if y_sd <= 0:
        raise ValueError("labels are constant over train+pool")
    yp = (y - y_mu) / y_sd
    return Dataset(dataset.name, Xp.astype(np.float32), yp.astype(np.float32), list(dataset.feature_names))


def synthetic_friedman(n: int, noise_sd: float, seed: int) -> Dataset:
    """Friedman #1 data: ten uniform features, five informative, then
    standardized labels."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, 10))
    y = (
        10.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
        + 20.0 * (X[:, 2] - 0.5) ** 2
        + 10.0 * X[:, 3]
        + 5.0 * X[:, 4]
    )
    if noise_sd > 0:
        y = y + noise_sd * rng.standard_normal(n)
    y = (y - y.mean()) / y.std()
    return Dataset("friedman", X, y, [f"x{j + 1}" for j in range(10)])


def default_cache_dir() -> Path:
    env = os.environ.get("BMAL_CACHE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "bmal"


def fetch_dataset(url: str, cache_dir=None) -> Path:
    """Download a CSV over HTTP(S) with on-disk caching keyed by URL hash."""
    cache = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    cache.mkdir(parents=True, exist_ok=True)
    key = hashlib.sha256(url.encode()).hexdigest()[:32]
    suffix = Path(url.split("?")[0]).suffix or ".csv"
    target = cache / f"{key}{suffix}"
    if target.exists():
        return target
    with urllib.request.urlopen(url) as resp:
        body = resp.read()
    if not body:
        raise ValueError(f"empty response from {url}")
    tmp = target.with_suffix(target.suffix + ".part")
    tmp.write_bytes(body)
    os.replace(tmp, target)
    return target


def compute_metrics(predictions, labels) -> dict:
    """Absolute-error summary: mean, root mean square, 95%/99% quantiles, max."""
    e = np.abs(np.asarray(predictions, dtype=np.float64) - np.asarray(labels, dtype=np.float64))
    return {
        "mae": float(e.mean()),
        "rmse": float(np.sqrt(np.mean(e * e))),
        "q95": float(np.quantile(e, 0.95)),
        "q99": float(np.quantile(e, 0.99)),
        "maxe": float(e.max()),
    }


@dataclass
class BmalRunConfig:
    data: str = ""
    target: str | None = None
    method: str = "random"
    mode: str = "p"
    kernel: str = "ll"
    sigma_sq: float = 1e-6
    batch_sizes: tuple = tuple([256] * 16)
    n_train_init: int = 256
    n_valid: int = 1024
    test_fraction: float = 0.2
    max_trainpool: int = 200000
    widths: tuple = (512, 512)  # hidden layer widths
    activation: str = "relu"
    sigma_w: float | None = None
    sigma_b: float | None = None
    epochs: int = 256
    minibatch_size: int = 256
    initial_lr: float | None = None
    seed: int = 0

    def __post_init__(self):
        self.batch_sizes = tuple(int(b) for b in self.batch_sizes)
        if any(b < 1 for b in self.batch_sizes):
            raise ValueError("batch sizes must be positive")
        self.widths = tuple(int(w) for w in self.widths)

    def resolved_scales(self):
        sw, sb = ACTIVATION_SCALES[self.activation]
        return (
            self.sigma_w if self.sigma_w is not None else sw,
            self.sigma_b if self.sigma_b is not None else sb,
        )


@dataclass
class RunResult:
    records: list
    config: dict
    versions: dict

    def to_dict(self) -> dict:
        return {"records": self.records, "config": self.config, "versions": self.versions}

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        return cls(d["records"], d["config"], d["versions"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "RunResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


def strip_timings(result: RunResult) -> dict:
    """Result dict without wall-clock fields, for reproducibility comparisons."""
    d = json.loads(json.dumps(result.to_dict()))
    for rec in d["records"]:
        rec.pop("train_seconds", None)
        rec.pop("selection_seconds", None)
    return d


def resolve_dataset(config: BmalRunConfig) -> Dataset:
    """Turn the config's data field into a Dataset.

    ``synthetic:friedman:n=4000,noise=0.3`` generates Friedman data with a
    seed derived from the run seed; anything else is read as a CSV path.
    """
    spec = config.data
    if spec.startswith("synthetic:"):
        parts = spec.split(":")
        if len(parts) != 3 or parts[1] != "friedman":
            raise ValueError(f"unknown synthetic dataset spec {spec!r}")
        params = dict(kv.split("=") for kv in parts[2].split(","))
        return synthetic_friedman(
            n=int(params["n"]),
            noise_sd=float(params.get("noise", 0.0)),
            seed=derived_seed(config.seed, _STREAM_DATA),
        )
    if config.target is None:
        raise ValueError("CSV data needs a target column")
    return load_csv(spec, config.target)


def _train_step_models(config, ds, train_rows, valid_rows, step, n_models):
    sw, sb = config.resolved_scales()
    d_in = ds.X.shape[1]
    models = []
    for i in range(n_models):
        mcfg = ModelConfig(
            widths=(d_in,) + config.widths + (1,),
            activation=config.activation,
            sigma_w=sw,
            sigma_b=sb,
            init_seed=derived_seed(config.seed, _STREAM_INIT, step, i),
        )
        tcfg = TrainConfig(
            epochs=config.epochs,
            minibatch_size=config.minibatch_size,
            initial_lr=config.initial_lr,
            valid_size=config.n_valid,
            train_seed=derived_seed(config.seed, _STREAM_TRAIN, step, i),
        )
        params = init_network(mcfg)
        models.append(
            train(params, mcfg, tcfg, (ds.X[train_rows], ds.y[train_rows]),
                  (ds.X[valid_rows], ds.y[valid_rows]))
        )
    return models


def run_bmal(config: BmalRunConfig, dataset: Dataset | None = None) -> RunResult:
    """Run the full pool-based loop and return per-step records."""
    if dataset is None:
        dataset = resolve_dataset(config)
    split_cfg = SplitConfig(
        n_train_init=config.n_train_init,
        n_valid=config.n_valid,
        test_fraction=config.test_fraction,
        max_trainpool=config.max_trainpool,
        split_seed=derived_seed(config.seed, _STREAM_SPLIT),
    )
    split = split_dataset(dataset, split_cfg)
    ds = preprocess(dataset, split)

    batches = list(config.batch_sizes)
    if sum(batches) > len(split.pool):
        raise ValueError(
            f"total batch size {sum(batches)} exceeds pool size {len(split.pool)}"
        )
    spec = parse_kernel_spec(config.kernel)
    n_models = max((t.args[0] for t in spec.transforms if t.name == "ens"), default=1)

    train_rows = split.train.copy()
    pool_rows = split.pool.copy()
    records = []
    for step in range(len(batches) + 1):
        try:
            records.append(
                _run_step(config, ds, split, spec, n_models, batches,
                          train_rows, pool_rows, step)
            )
        except Exception as exc:
            raise BmalStepError(step, exc) from exc
        picked = records[-1].pop("_picked")
        if picked is not None:
            train_rows = np.concatenate([train_rows, picked])
            pool_rows = pool_rows[~np.isin(pool_rows, picked)]

    config_echo = asdict(config)
    config_echo["batch_sizes"] = list(config.batch_sizes)
    config_echo["widths"] = list(config.widths)
    config_echo["dataset"] = dataset.name
    versions = {
        "bmal": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }
    return RunResult(records, config_echo, versions)


def _run_step(config, ds, split, spec, n_models, batches, train_rows, pool_rows, step):
    t0 = time.perf_counter()
    models = _train_step_models(config, ds, train_rows, split.valid, step, n_models)
    train_seconds = time.perf_counter() - t0
    model = models[0]

    metrics = compute_metrics(model.predict(ds.X[split.test]), ds.y[split.test])
    if not all(math.isfinite(v) for v in metrics.values()):
        raise RuntimeError(f"non-finite test metrics: {metrics}")
    record = {
        "step": step,
        "n_train": int(len(train_rows)),
        "metrics": metrics,
        "train_seconds": float(train_seconds),
        "selection_seconds": None,
        "batch_indices": None,
        "status": None,
        "_picked": None,
    }
    if step < len(batches):
        t1 = time.perf_counter()
        ground = GroundSet.from_split(ds.X[train_rows], ds.X[pool_rows])
        kernel = build_kernel(
            spec,
            ground,
            models,
            ground.train_indices,
            labels=ds.y[train_rows],
            predictions=model.predict(ds.X[train_rows]),
            seed=derived_seed(config.seed, _STREAM_SKETCH, step),
        )
        request = SelectionRequest(
            method=config.method,
            mode=config.mode,
            kernel=kernel,
            train_indices=ground.train_indices,
            pool_indices=ground.pool_indices,
            n_batch=batches[step],
            sigma_sq=config.sigma_sq,
            rng_seed=derived_seed(config.seed, _STREAM_SELECT, step),
        )
        result = select(request)
        record["selection_seconds"] = float(time.perf_counter() - t1)
        picked = pool_rows[result.indices - len(train_rows)]
        record["batch_indices"] = [int(r) for r in picked]
        record["status"] = result.status
        record["_picked"] = picked
    return record


# ---------------------------------------------------------------------------
# Aggregation and reporting
# ---------------------------------------------------------------------------


def _group_key(result: RunResult):
    c = result.config
    return (c.get("dataset", ""), c.get("method", ""), c.get("kernel", ""), c.get("mode", ""))


def aggregate_log_means(results) -> dict:
    """Average natural-log metrics over repetitions, per group and step.

    Also reports the per-dataset initial-step spread predictor: mean log
    RMSE minus mean log MAE on the first record.
    """
    results = list(results)
    groups: dict = {}
    for r in results:
        groups.setdefault(_group_key(r), []).append(r)

    curves = []
    summary = []
    for key in sorted(groups):
        runs = groups[key]
        n_steps = len(runs[0].records)
        step_rows = []
        for step in range(n_steps):
            row = {
                "dataset": key[0],
                "method": key[1],
                "kernel": key[2],
                "mode": key[3],
                "step": step,
                "n_train": runs[0].records[step]["n_train"],
            }
            for m in METRIC_NAMES:
                vals = [math.log(r.records[step]["metrics"][m]) for r in runs]
                row[f"mean_log_{m}"] = float(np.mean(vals))
            step_rows.append(row)
        curves.extend(step_rows)
        overall = {"dataset": key[0], "method": key[1], "kernel": key[2], "mode": key[3]}
        for m in METRIC_NAMES:
            vals = [
                math.log(r.records[s]["metrics"][m])
                for r in runs
                for s in range(n_steps)
            ]
            overall[f"mean_log_{m}"] = float(np.mean(vals))
        summary.append(overall)

    gaps: dict = {}
    by_dataset: dict = {}
    for r in results:
        by_dataset.setdefault(r.config.get("dataset", ""), []).append(r)
    for name, runs in sorted(by_dataset.items()):
        vals = [
            math.log(r.records[0]["metrics"]["rmse"]) - math.log(r.records[0]["metrics"]["mae"])
            for r in runs
        ]
        gaps[name] = float(np.mean(vals))
    return {"curves": curves, "summary": summary, "rmse_mae_gap": gaps}


def _curve_stderr(runs, step, metric):
    """Variance-of-mean estimator: per-dataset sample variances combined.

    Undefined (empty string) when any dataset has fewer than two runs.
    """
    by_dataset: dict = {}
    for r in runs:
        by_dataset.setdefault(r.config.get("dataset", ""), []).append(
            math.log(r.records[step]["metrics"][metric])
        )
    var_sum = 0.0
    for vals in by_dataset.values():
        if len(vals) < 2:
            return ""
        var_sum += float(np.var(vals, ddof=1)) / len(vals)
    return math.sqrt(var_sum / len(by_dataset) ** 2)


def emit_report(results_dir, out_dir) -> list:
    """Write per-metric learning-curve CSVs and a method comparison table."""
    results_dir = Path(results_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = [RunResult.load(p) for p in sorted(results_dir.glob("*.json"))]
    if not results:
        raise ValueError(f"no result files in {results_dir}")

    groups: dict = {}
    for r in results:
        c = r.config
        groups.setdefault((c.get("method", ""), c.get("kernel", ""), c.get("mode", "")), []).append(r)

    written = []
    for metric in METRIC_NAMES:
        path = out_dir / f"curve_{metric}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "kernel", "mode", "step", "n_train",
                             f"mean_log_{metric}", "stderr"])
            for key in sorted(groups):
                runs = groups[key]
                for step in range(len(runs[0].records)):
                    vals = [math.log(r.records[step]["metrics"][metric]) for r in runs]
                    writer.writerow(
                        list(key)
                        + [
                            step,
                            runs[0].records[step]["n_train"],
                            repr(float(np.mean(vals))),
                            _curve_stderr(runs, step, metric),
                        ]
                    )
        written.append(path)

    path = out_dir / "methods.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "kernel", "mode"] + [f"mean_log_{m}" for m in METRIC_NAMES])
        for key in sorted(groups):
            runs = groups[key]
            row = list(key)
            for m in METRIC_NAMES:
                vals = [
                    math.log(r.records[s]["metrics"][m])
                    for r in runs
                    for s in range(len(r.records))
                ]
                row.append(repr(float(np.mean(vals))))
            writer.writerow(row)
    written.append(path)
    return written
