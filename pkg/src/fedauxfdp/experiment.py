"""Sweep harness: one CSV row per (method, alpha, eps_class, lambda, seed) cell.

Work is grouped by (alpha, lambda, seed). Each group partitions the data and
fits every client's heads once, then sanitizes and aggregates once per class
budget. Noise for a given client and mechanism comes from a substream keyed by
the seed alone, so budgets within a group share their underlying normal draws
(common random numbers) and differ only in scale.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import statistics
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import federation as fed
from .config import ExperimentConfig, FileDatasetSpec
from .datamodel import AuxiliarySplit, Dataset, MetricsRecord, PrivacyParams
from .features import BiasedPool, make_extractor, read_flab, read_fvec
from .partition import PartitionConfig, partition_dirichlet
from .synthetic import generate_synthetic

CSV_HEADER = ("method", "alpha", "eps_class", "lambda", "seed", "accuracy",
              "eps_total", "delta_total", "fallback_count", "wall_ms")
THREADS_ENV = "FEDAUXFDP_THREADS"


@dataclass(frozen=True)
class CellFailure:
    method: str
    alpha: float
    eps_class: float | None
    lam: float
    seed: int
    reason: str


@dataclass
class SweepResult:
    records: list[MetricsRecord] = field(default_factory=list)
    failures: list[CellFailure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


# --- data -------------------------------------------------------------------


@dataclass(frozen=True)
class RawData:
    train: Dataset
    test: Dataset
    aux_pool: np.ndarray


def load_data(config: ExperimentConfig) -> RawData:
    """Generate or read the raw data and push it through the configured extractor."""
    spec = config.dataset
    if isinstance(spec, FileDatasetSpec):
        train = Dataset(read_fvec(spec.train_features), read_flab(spec.train_labels), config.class_count)
        test = Dataset(read_fvec(spec.test_features), read_flab(spec.test_labels), config.class_count)
        aux = read_fvec(spec.aux_features)
    else:
        train, test, aux = generate_synthetic(spec, config.master_seed)
    extractor = make_extractor(config.extractor.as_dict(), train.dim)
    return RawData(
        train.with_features(extractor.extract_many(train.features)),
        test.with_features(extractor.extract_many(test.features)),
        extractor.extract_many(aux),
    )


def build_federation(raw: RawData, n_clients: int, alpha: float, seed: int, aux_split: float) -> fed.FederatedData:
    assignment = partition_dirichlet(raw.train, PartitionConfig(n_clients, alpha, seed))
    split = AuxiliarySplit.from_pool(raw.aux_pool, aux_split, np.random.default_rng(seed))
    clients = tuple(raw.train.subset(idx) for idx in assignment.clients)
    return fed.FederatedData(clients, split, raw.test)


def _privacy(eps: float | None, delta: float) -> PrivacyParams:
    return PrivacyParams.disabled() if eps is None else PrivacyParams(eps, delta)


def round_config(config: ExperimentConfig, lam: float, seed: int, eps_class: float | None) -> fed.RoundConfig:
    return fed.RoundConfig(
        class_count=config.class_count,
        seed=seed,
        lambda_class=lam,
        lambda_score=config.lambda_score,
        lambda_server=config.lambda_server,
        class_dp=_privacy(eps_class, config.delta_class),
        score_dp=_privacy(config.epsilon_score, config.delta_score),
        tolerance=config.tolerance,
        max_iterations=config.max_iterations,
        methods=config.methods,
        normalizer=config.normalizer,
        per_client_class_count=config.per_client_class_count,
    )


# --- one group --------------------------------------------------------------


def run_group(config: ExperimentConfig, raw: RawData, alpha: float, lam: float, seed: int) -> SweepResult:
    """All class budgets and methods for one (alpha, lambda, seed); failures are recorded, not raised."""
    out = SweepResult()

    def fail(eps_values, exc):
        reason = f"{type(exc).__name__}: {exc}"
        for eps in eps_values:
            for method in config.methods:
                out.failures.append(CellFailure(method, alpha, eps, lam, seed, reason))

    try:
        data = build_federation(raw, config.n_clients, alpha, seed, config.aux_split)
        fits = fed.fit_clients(data, round_config(config, lam, seed, None))
        pool = BiasedPool(data.aux.distill)
    except Exception as exc:  # noqa: BLE001 - a cell failure must not stop the sweep
        fail(config.epsilon_class, exc)
        return out
    for eps in config.epsilon_class:
        try:
            start = time.perf_counter()
            rc = round_config(config, lam, seed, eps)
            artifacts = fed.privatize_clients(fits, rc, pool)
            shared_ms = 1000 * (time.perf_counter() - start)
            result = fed.run_methods(artifacts, data, rc, alpha)
        except Exception as exc:  # noqa: BLE001
            fail([eps], exc)
            continue
        for record in result.records:
            wall = int(round(record.wall_ms + shared_ms)) if config.record_wall_time else 0
            out.records.append(replace(record, wall_ms=wall))
    return out


_WORKER_STATE: dict = {}


def _worker_init(config: ExperimentConfig) -> None:
    _WORKER_STATE["config"] = config
    _WORKER_STATE["raw"] = load_data(config)


def _worker_run(job) -> SweepResult:
    alpha, lam, seed = job
    try:
        return run_group(_WORKER_STATE["config"], _WORKER_STATE["raw"], alpha, lam, seed)
    except Exception:  # noqa: BLE001
        config = _WORKER_STATE["config"]
        reason = traceback.format_exc(limit=1).strip().splitlines()[-1]
        return SweepResult(failures=[CellFailure(m, alpha, e, lam, seed, reason)
                                     for e in config.epsilon_class for m in config.methods])


def thread_count() -> int:
    value = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(value)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {value!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {value!r}")
    return n


def run_sweep(config: ExperimentConfig, raw: RawData | None = None, workers: int | None = None) -> SweepResult:
    """Full Cartesian sweep. Row order is fixed by the config, whatever the scheduling."""
    jobs = [(a, lam, s) for a in config.alpha for lam in config.lambda_class for s in config.seeds()]
    workers = thread_count() if workers is None else workers
    total = SweepResult()
    if workers <= 1 or len(jobs) <= 1:
        try:
            raw = load_data(config) if raw is None else raw
        except Exception as exc:  # noqa: BLE001
            reason = f"{type(exc).__name__}: {exc}"
            total.failures = [CellFailure(m, a, e, lam, s, reason) for a, lam, s in jobs
                              for e in config.epsilon_class for m in config.methods]
            return total
        results = (run_group(config, raw, *job) for job in jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=min(workers, len(jobs)), initializer=_worker_init,
                                   initargs=(config,))
        with pool:
            results = list(pool.map(_worker_run, jobs))
    for part in results:
        total.records.extend(part.records)
        total.failures.extend(part.failures)
    total.records.sort(key=lambda r: _order_key(config, r.method, r.alpha, r.eps_class, r.lam, r.seed))
    return total


def _order_key(config: ExperimentConfig, method, alpha, eps, lam, seed):
    return (config.alpha.index(alpha), config.lambda_class.index(lam), seed,
            config.epsilon_class.index(eps), config.methods.index(method))


# --- output -----------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def csv_text(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow([_fmt(v) for v in (r.method, r.alpha, r.eps_class, r.lam, r.seed, r.accuracy,
                                           r.eps_total, r.delta_total, r.fallback_count, r.wall_ms)])
    return buf.getvalue()


def read_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    for row in rows:
        row["alpha"] = float(row["alpha"])
        row["eps_class"] = None if row["eps_class"] == "none" else float(row["eps_class"])
        row["lambda"] = float(row["lambda"])
        row["seed"] = int(row["seed"])
        row["accuracy"] = float(row["accuracy"])
    return rows


def summarize(records) -> list[dict]:
    """Mean and population standard deviation of accuracy per (method, alpha, eps_class, lambda)."""
    groups: dict[tuple, list[float]] = {}
    for r in records:
        groups.setdefault((r.method, r.alpha, r.eps_class, r.lam), []).append(r.accuracy)
    return [
        {"method": m, "alpha": a, "eps_class": e, "lambda": lam, "n": len(v),
         "mean": math.fsum(v) / len(v), "std": statistics.pstdev(v)}
        for (m, a, e, lam), v in groups.items()
    ]


def summary_text(config: ExperimentConfig, result: SweepResult) -> str:
    doc = {
        "config": _jsonable(asdict(config)),
        "cells": summarize(result.records),
        "failures": [asdict(f) for f in result.failures],
    }
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def atomic_write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_outputs(out_dir: str, config: ExperimentConfig, result: SweepResult) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "metrics.csv")
    json_path = os.path.join(out_dir, "summary.json")
    atomic_write_text(csv_path, csv_text(result.records))
    atomic_write_text(json_path, summary_text(config, result))
    return csv_path, json_path
