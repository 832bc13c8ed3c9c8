"""Gaussian-blob stand-in for an image dataset seen through a frozen extractor.

Class structure lives in a low-dimensional subspace (``intrinsic_dim``) that is
embedded into ``feature_dim`` ambient coordinates with a little isotropic
noise on top, roughly how pretrained features concentrate. Within the
subspace every class shares one rotated anisotropic covariance, so a
discriminatively trained head beats an inner-product centroid rule.

The auxiliary (public) pool is unlabeled. In ``matched`` mode it comes from
the same mixture as the client data; in ``mismatched`` mode it is drawn
around an unrelated set of class means in the same subspace.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import Dataset


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 10
    per_class: int = 9000
    test_per_class: int = 500
    feature_dim: int = 64
    intrinsic_dim: int = 16
    spread: float = 0.4
    separation: float = 1.0
    anisotropy: float = 8.0
    ambient_noise: float = 0.05
    aux_size: int = 100000
    aux_mode: str = "matched"

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.per_class < 1 or self.test_per_class < 1 or self.aux_size < 2:
            raise ValueError("sample counts must be positive")
        if not 1 <= self.intrinsic_dim <= self.feature_dim:
            raise ValueError("intrinsic_dim must lie in [1, feature_dim]")
        if self.spread < 0 or self.separation <= 0 or self.anisotropy < 1 or self.ambient_noise < 0:
            raise ValueError("need spread >= 0, separation > 0, anisotropy >= 1, ambient_noise >= 0")
        if self.aux_mode not in ("matched", "mismatched"):
            raise ValueError("aux_mode must be 'matched' or 'mismatched'")


@dataclass(frozen=True)
class _Geometry:
    means: np.ndarray  # (classes, k)
    foreign: np.ndarray  # (classes, k)
    scales: np.ndarray  # (k,) per-axis std before rotation, unit RMS
    rotation: np.ndarray  # (k, k)
    embedding: np.ndarray  # (feature_dim, k) orthonormal columns


def _unit_rows(rng: np.random.Generator, rows: int, k: int, norm: float) -> np.ndarray:
    m = rng.standard_normal((rows, k))
    return m * (norm / np.linalg.norm(m, axis=1, keepdims=True))


def _geometry(rng: np.random.Generator, spec: SyntheticSpec) -> _Geometry:
    k = spec.intrinsic_dim
    means = _unit_rows(rng, spec.classes, k, spec.separation)
    s = np.exp(rng.uniform(-np.log(spec.anisotropy), np.log(spec.anisotropy), k))
    s /= np.sqrt(np.mean(s * s))
    rotation = np.linalg.qr(rng.standard_normal((k, k)))[0]
    embedding = np.linalg.qr(rng.standard_normal((spec.feature_dim, k)))[0]
    foreign = _unit_rows(rng, spec.classes, k, spec.separation)
    return _Geometry(means, foreign, s, rotation, embedding)


def _sample(rng, geo: _Geometry, spec: SyntheticSpec, means: np.ndarray, labels: np.ndarray) -> np.ndarray:
    k = spec.intrinsic_dim
    z = (rng.standard_normal((labels.shape[0], k)) * geo.scales) @ geo.rotation.T
    inner = means[labels] + z * (spec.spread / np.sqrt(k))
    ambient = rng.standard_normal((labels.shape[0], spec.feature_dim)) * (spec.ambient_noise / np.sqrt(spec.feature_dim))
    return inner @ geo.embedding.T + ambient


def generate_synthetic(spec: SyntheticSpec, seed: int):
    """Return ``(train, test, aux_pool)``; train and test do not depend on the aux mode."""
    root = np.random.SeedSequence(seed)
    geometry_ss, train_ss, test_ss, aux_ss = root.spawn(4)
    geo = _geometry(np.random.default_rng(geometry_ss), spec)

    def labelled(ss, per_class):
        rng = np.random.default_rng(ss)
        labels = np.repeat(np.arange(spec.classes), per_class)
        return Dataset(_sample(rng, geo, spec, geo.means, labels), labels, spec.classes)

    train = labelled(train_ss, spec.per_class)
    test = labelled(test_ss, spec.test_per_class)
    rng = np.random.default_rng(aux_ss)
    aux_labels = rng.integers(0, spec.classes, spec.aux_size)
    aux_means = geo.means if spec.aux_mode == "matched" else geo.foreign
    aux = _sample(rng, geo, spec, aux_means, aux_labels)
    return train, test, aux
