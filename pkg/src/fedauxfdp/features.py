"""Frozen feature extractors, bias augmentation and max-norm normalization.

Also reads and writes the FVEC1 feature and FLAB1 label file formats.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import FeatureVector

FVEC_MAGIC = b"FVEC1"
FLAB_MAGIC = b"FLAB1"
DEFAULT_PROJECTION_DIM = 64


class NormalizationError(ValueError):
    pass


class FeatureFileError(ValueError):
    pass


# --- extractors -------------------------------------------------------------


class FeatureExtractor:
    kind: str = "abstract"

    def extract(self, raw):
        raise NotImplementedError

    def extract_many(self, raw_rows) -> np.ndarray:
        return np.stack([self.extract(r) for r in raw_rows]) if len(raw_rows) else np.zeros((0, self.output_dim))


@dataclass(frozen=True)
class IdentityExtractor(FeatureExtractor):
    input_dim: int
    kind: str = field(default="identity", init=False)

    @property
    def output_dim(self) -> int:
        return self.input_dim

    def extract(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape != (self.input_dim,):
            raise ValueError(f"expected raw vector of dim {self.input_dim}, got shape {raw.shape}")
        return raw.copy()

    def extract_many(self, raw_rows) -> np.ndarray:
        raw_rows = np.asarray(raw_rows, dtype=np.float64)
        if raw_rows.ndim != 2 or raw_rows.shape[1] != self.input_dim:
            raise ValueError(f"expected rows of dim {self.input_dim}, got shape {raw_rows.shape}")
        return raw_rows.copy()


@dataclass(frozen=True)
class RandomProjectionExtractor(FeatureExtractor):
    """Fixed seeded Gaussian projection ``x -> W x`` with W ~ N(0, 1/output_dim)."""

    input_dim: int
    output_dim: int = DEFAULT_PROJECTION_DIM
    seed: int = 0
    kind: str = field(default="random_projection", init=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("projection dimensions must be positive")
        rng = np.random.default_rng(self.seed)
        w = rng.standard_normal((self.output_dim, self.input_dim)) / np.sqrt(self.output_dim)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def extract(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape != (self.input_dim,):
            raise ValueError(f"expected raw vector of dim {self.input_dim}, got shape {raw.shape}")
        return self.weights @ raw

    def extract_many(self, raw_rows) -> np.ndarray:
        raw_rows = np.asarray(raw_rows, dtype=np.float64)
        if raw_rows.ndim != 2 or raw_rows.shape[1] != self.input_dim:
            raise ValueError(f"expected rows of dim {self.input_dim}, got shape {raw_rows.shape}")
        return raw_rows @ self.weights.T


@dataclass(frozen=True)
class FileBackedExtractor(FeatureExtractor):
    """Looks up precomputed feature rows by index; ``raw`` is the row index."""

    path: str
    kind: str = field(default="file_backed", init=False)
    table: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        table = read_fvec(self.path)
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def output_dim(self) -> int:
        return int(self.table.shape[1])

    def extract(self, raw) -> np.ndarray:
        index = int(np.asarray(raw).reshape(-1)[0]) if np.ndim(raw) else int(raw)
        if not 0 <= index < self.table.shape[0]:
            raise KeyError(f"no feature row {index} in {self.path} ({self.table.shape[0]} rows)")
        return self.table[index].copy()

    def extract_many(self, raw_rows) -> np.ndarray:
        return np.stack([self.extract(r) for r in np.asarray(raw_rows).reshape(-1)])


def extract(extractor: FeatureExtractor, raw) -> np.ndarray:
    return extractor.extract(raw)


def make_extractor(spec: dict, input_dim: int) -> FeatureExtractor:
    kind = spec.get("kind", "identity")
    if kind == "identity":
        return IdentityExtractor(input_dim)
    if kind == "random_projection":
        return RandomProjectionExtractor(input_dim, int(spec.get("output_dim", DEFAULT_PROJECTION_DIM)), int(spec.get("seed", 0)))
    if kind == "file_backed":
        return FileBackedExtractor(str(spec["path"]))
    raise ValueError(f"unknown extractor kind {kind!r}")


# --- bias and normalization -------------------------------------------------


def append_bias(features) -> np.ndarray:
    """Prepend the constant-1 bias coordinate. Works on a vector or row-wise on a matrix."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        return np.concatenate(([1.0], features))
    return np.hstack([np.ones((features.shape[0], 1)), features])


@dataclass(frozen=True)
class NormalizationConstant:
    value: float

    def __post_init__(self):
        if not (self.value > 0 and np.isfinite(self.value)):
            raise NormalizationError(f"normalization constant must be positive and finite, got {self.value}")


def fit_normalizer(reference) -> NormalizationConstant:
    """Largest Euclidean norm over the reference vectors."""
    reference = np.asarray(reference, dtype=np.float64)
    if reference.ndim == 1:
        reference = reference[None, :]
    if reference.shape[0] == 0:
        raise NormalizationError("normalizer reference set is empty")
    value = float(np.max(np.linalg.norm(reference, axis=1)))
    if value == 0.0:
        raise NormalizationError("normalizer reference set is all zeros")
    return NormalizationConstant(value)


def normalize(features, c: NormalizationConstant):
    """Divide by the constant. A single vector comes back as a FeatureVector when it is long enough."""
    scaled = np.asarray(features, dtype=np.float64) / c.value
    if scaled.ndim == 1 and scaled.shape[0] >= 2:
        return FeatureVector(scaled)
    return scaled


def normalize_rows(features, c: NormalizationConstant) -> np.ndarray:
    return np.asarray(features, dtype=np.float64) / c.value


def clip_rows(features: np.ndarray, max_norm: float = 1.0) -> np.ndarray:
    """Rescale rows whose norm exceeds ``max_norm`` back onto the ball."""
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    scale = np.where(norms > max_norm, max_norm / np.maximum(norms, np.finfo(float).tiny), 1.0)
    return features * scale


def prepare(raw_features, c: NormalizationConstant, clip: bool = False) -> np.ndarray:
    """Bias-augment then normalize a feature matrix (optionally clipping unseen points)."""
    if isinstance(raw_features, BiasedPool):
        return raw_features.prepare(c, clip)
    out = normalize_rows(append_bias(np.atleast_2d(raw_features)), c)
    return clip_rows(out) if clip else out


class BiasedPool:
    """A raw matrix with its bias column and row norms computed once.

    Used when the same public points are prepared under many normalization
    constants; ``prepare(c, clip=True)`` agrees with ``prepare(raw, c, True)``
    up to rounding in the last place.
    """

    def __init__(self, raw_features):
        self.rows = append_bias(np.atleast_2d(raw_features))
        self.norms = np.linalg.norm(self.rows, axis=1, keepdims=True)

    def __len__(self) -> int:
        return int(self.rows.shape[0])

    def prepare(self, c: NormalizationConstant, clip: bool = True) -> np.ndarray:
        if not clip:
            return self.rows / c.value
        return self.rows * (1.0 / np.maximum(self.norms, c.value))


# --- file formats -----------------------------------------------------------


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def write_fvec(path, rows) -> None:
    rows = np.asarray(rows, dtype="<f4")
    if rows.ndim != 2:
        raise ValueError("FVEC1 rows must be a 2-D array")
    header = FVEC_MAGIC + struct.pack("<II", rows.shape[0], rows.shape[1])
    _atomic_write(path, header + np.ascontiguousarray(rows).tobytes())


def read_fvec(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:5] != FVEC_MAGIC:
        raise FeatureFileError(f"{path}: bad magic {data[:5]!r}")
    if len(data) < 13:
        raise FeatureFileError(f"{path}: truncated header")
    count, dim = struct.unpack_from("<II", data, 5)
    expected = 13 + 4 * count * dim
    if len(data) != expected:
        raise FeatureFileError(f"{path}: expected {expected} bytes for {count}x{dim}, got {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=13).reshape(count, dim).astype(np.float64)


def write_flab(path, labels) -> None:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise ValueError("FLAB1 labels must fit in u16")
    header = FLAB_MAGIC + struct.pack("<I", labels.shape[0])
    _atomic_write(path, header + labels.astype("<u2").tobytes())


def read_flab(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:5] != FLAB_MAGIC:
        raise FeatureFileError(f"{path}: bad magic {data[:5]!r}")
    if len(data) < 9:
        raise FeatureFileError(f"{path}: truncated header")
    (count,) = struct.unpack_from("<I", data, 5)
    if len(data) != 9 + 2 * count:
        raise FeatureFileError(f"{path}: expected {9 + 2 * count} bytes, got {len(data)}")
    return np.frombuffer(data, dtype="<u2", offset=9).astype(np.int64)
