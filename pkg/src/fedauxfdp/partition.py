"""Non-iid client splits via per-class Dirichlet draws."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import Dataset

MAX_RETRIES = 100
SINKHORN_ITERATIONS = 1000
SINKHORN_TOL = 1e-10


class PartitionError(RuntimeError):
    pass


@dataclass(frozen=True)
class PartitionConfig:
    n_clients: int
    alpha: float
    seed: int = 0

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class Assignment:
    clients: tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.clients)

    def sizes(self) -> list[int]:
        return [int(c.shape[0]) for c in self.clients]


def _log_dirichlet(rng: np.random.Generator, alpha: float, k: int, rows: int) -> np.ndarray:
    # Gamma(a) = Gamma(a + 1) * U^(1/a), taken in log space: at alpha = 0.01
    # the plain gamma draws underflow to exact zeros.
    g = np.log(rng.gamma(alpha + 1.0, size=(rows, k))) + np.log(rng.random((rows, k))) / alpha
    return g - _logsumexp(g, axis=1)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    return m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))


def balance(log_q: np.ndarray) -> np.ndarray:
    """Sinkhorn-scale a class x client proportion matrix so every client gets an equal share.

    Rows (classes) end up summing to 1 and columns to C/n. Works in log space.
    """
    for _ in range(SINKHORN_ITERATIONS):
        log_q = log_q - _logsumexp(log_q, axis=0)
        log_q = log_q - _logsumexp(log_q, axis=1)
        col = np.exp(_logsumexp(log_q, axis=0))
        if np.max(np.abs(col - col.mean())) < SINKHORN_TOL:
            break
    return np.exp(log_q)


def largest_remainder(shares: np.ndarray, total: int) -> np.ndarray:
    """Integer counts proportional to ``shares`` that sum exactly to ``total``."""
    raw = shares / shares.sum() * total
    counts = np.floor(raw).astype(np.int64)
    left = total - int(counts.sum())
    if left:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:left]] += 1
    return counts


def _draw(labels: np.ndarray, class_count: int, n_clients: int, alpha: float, rng: np.random.Generator):
    props = balance(_log_dirichlet(rng, alpha, n_clients, class_count))
    buckets: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
    for c in range(class_count):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        members = rng.permutation(members)
        counts = largest_remainder(props[c], members.size)
        for i, chunk in enumerate(np.split(members, np.cumsum(counts)[:-1])):
            buckets[i].append(chunk)
    return [np.sort(np.concatenate(b)) if b else np.zeros(0, dtype=np.int64) for b in buckets]


def partition_dirichlet(dataset: Dataset, config: PartitionConfig) -> Assignment:
    """Split ``dataset`` among clients with one Dirichlet(alpha) draw per class.

    Each class's draw over clients is Sinkhorn-balanced against the other
    classes so clients receive equal amounts of data, then apportioned by
    largest remainder. A draw that leaves a client empty is redone with the
    next seed, up to ``MAX_RETRIES`` times.
    """
    if len(dataset) == 0:
        raise ValueError("cannot partition an empty dataset")
    if config.n_clients == 1:
        return Assignment((np.arange(len(dataset), dtype=np.int64),))
    labels = dataset.labels
    for attempt in range(MAX_RETRIES + 1):
        rng = np.random.default_rng((config.seed + attempt) % 2 ** 64)
        clients = _draw(labels, dataset.class_count, config.n_clients, config.alpha, rng)
        if all(c.size for c in clients):
            return Assignment(tuple(clients))
    raise PartitionError(
        f"every draw left a client empty after {MAX_RETRIES} retries "
        f"(n_clients={config.n_clients}, N={len(dataset)}, alpha={config.alpha})"
    )


@dataclass(frozen=True)
class HeterogeneityStats:
    per_client: np.ndarray  # (n_clients, k) class fractions ranked descending
    mean: np.ndarray  # (k,)


def heterogeneity_stats(assignment: Assignment, dataset: Dataset, k: int = 3) -> HeterogeneityStats:
    if k < 1:
        raise ValueError("k must be >= 1")
    rows = []
    for idx in assignment.clients:
        counts = np.bincount(dataset.labels[idx], minlength=dataset.class_count).astype(np.float64)
        if idx.size == 0:
            raise ValueError("assignment contains an empty client")
        fractions = np.sort(counts / counts.sum())[::-1]
        padded = np.zeros(k)
        padded[: min(k, fractions.size)] = fractions[:k]
        rows.append(padded)
    per_client = np.array(rows)
    return HeterogeneityStats(per_client, per_client.mean(axis=0))
