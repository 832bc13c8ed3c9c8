"""Core domain types shared across the simulator.

Feature matrices are stored row-wise: each row is one bias-augmented feature
vector whose first coordinate is the bias constant. Labels are zero-based.
Arrays handed to these types are copied and marked read-only so instances can
be shared freely between concurrent client computations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

PROB_ATOL = 1e-9


def _frozen(array, dtype=np.float64) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 1 or values.shape[0] < 2:
            raise ValueError("feature vector needs at least one feature plus the bias coordinate")
        object.__setattr__(self, "values", values)

    @property
    def bias(self) -> float:
        return float(self.values[0])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True)
class LabeledExample:
    features: FeatureVector
    label: int


@dataclass(frozen=True)
class Dataset:
    """Labeled examples as a feature matrix plus label vector.

    ``features`` has shape (N, d). Whether the rows are raw extracted
    features or bias-augmented normalized vectors depends on the pipeline
    stage; ``erm`` only accepts the latter.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        features = _frozen(self.features)
        labels = _frozen(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {features.shape}")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise ValueError("labels must be 1-D with one entry per feature row")
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __iter__(self) -> Iterator[LabeledExample]:
        for row, label in zip(self.features, self.labels):
            yield LabeledExample(FeatureVector(row), int(label))

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.class_count)

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(features, self.labels, self.class_count)

    @classmethod
    def from_examples(cls, examples, class_count: int) -> "Dataset":
        examples = list(examples)
        if not examples:
            raise ValueError("cannot build a dataset from zero examples")
        features = np.stack([ex.features.values for ex in examples])
        labels = np.array([ex.label for ex in examples], dtype=np.int64)
        return cls(features, labels, class_count)


@dataclass(frozen=True)
class AuxiliarySplit:
    """Public unlabeled data split into scoring negatives and distillation points."""

    negatives: np.ndarray
    distill: np.ndarray
    split_fraction: float
    negative_indices: np.ndarray = field(default=None, repr=False)
    distill_indices: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")
        object.__setattr__(self, "negatives", _frozen(self.negatives))
        object.__setattr__(self, "distill", _frozen(self.distill))
        if self.negative_indices is not None and self.distill_indices is not None:
            if np.intersect1d(self.negative_indices, self.distill_indices).size:
                raise ValueError("negative and distillation indices overlap")
            object.__setattr__(self, "negative_indices", _frozen(self.negative_indices, np.int64))
            object.__setattr__(self, "distill_indices", _frozen(self.distill_indices, np.int64))

    @classmethod
    def from_pool(cls, pool: np.ndarray, split_fraction: float, rng: np.random.Generator) -> "AuxiliarySplit":
        """Shuffle ``pool`` and send ``split_fraction`` of it to distillation, the rest to negatives."""
        pool = np.asarray(pool, dtype=np.float64)
        order = rng.permutation(pool.shape[0])
        n_distill = int(round(split_fraction * pool.shape[0]))
        if n_distill == 0 or n_distill == pool.shape[0]:
            raise ValueError("auxiliary pool too small for the requested split")
        distill_idx = np.sort(order[:n_distill])
        negative_idx = np.sort(order[n_distill:])
        return cls(pool[negative_idx], pool[distill_idx], split_fraction, negative_idx, distill_idx)


@dataclass(frozen=True)
class HeadParams:
    """Logistic head parameters, one row per class (a single row for binary heads).

    Column 0 holds the biases.
    """

    matrix: np.ndarray

    def __post_init__(self):
        matrix = _frozen(self.matrix)
        if matrix.ndim != 2:
            raise ValueError(f"head matrix must be 2-D, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("head parameters must be finite")
        object.__setattr__(self, "matrix", matrix)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def is_binary(self) -> bool:
        return self.matrix.shape[0] == 1

    @classmethod
    def zeros(cls, rows: int, dim: int) -> "HeadParams":
        return cls(np.zeros((rows, dim)))


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float = 0.0
    delta: float = 0.0
    enabled: bool = True

    def __post_init__(self):
        if self.enabled:
            if not self.epsilon > 0:
                raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
            if not 0.0 < self.delta < 1.0:
                raise ValueError(f"delta must lie in (0, 1), got {self.delta}")

    @classmethod
    def disabled(cls) -> "PrivacyParams":
        return cls(0.0, 0.0, enabled=False)


@dataclass(frozen=True)
class SoftLabelMatrix:
    rows: np.ndarray
    fallback_count: int = 0  # points aggregated without weights after a vanishing score sum

    def __post_init__(self):
        rows = _frozen(self.rows)
        if rows.ndim != 2:
            raise ValueError("soft labels must be a 2-D matrix")
        if np.any(rows < 0):
            raise ValueError("soft labels contain negative entries")
        if rows.size and np.max(np.abs(rows.sum(axis=1) - 1.0)) > PROB_ATOL:
            raise ValueError("soft-label rows must sum to 1")
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return int(self.rows.shape[0])

    @property
    def class_count(self) -> int:
        return int(self.rows.shape[1])


@dataclass(frozen=True)
class CertaintyScores:
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 1:
            raise ValueError("certainty scores must be a vector")
        if np.any(values <= 0.0) or np.any(values >= 1.0):
            raise ValueError("certainty scores must lie strictly inside (0, 1)")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class MetricsRecord:
    method: str
    alpha: float
    eps_class: float | None
    lam: float
    seed: int
    accuracy: float
    eps_total: float
    delta_total: float
    fallback_count: int = 0
    wall_ms: int = 0

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy must lie in [0, 1], got {self.accuracy}")
