"""Output perturbation for regularized logistic heads.

Sensitivity of the regularized multinomial head trained on N points with
ridge weight lam and C classes is at most ``2 sqrt(C) / (lam N)``; a
single-row binary head has ``2 / (lam N)``. The Gaussian mechanism adds
i.i.d. N(0, sigma^2) noise to every parameter with
``sigma = sqrt(2 ln(1.25/delta)) * sensitivity / epsilon``.
"""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import erm
from .datamodel import Dataset, HeadParams


class SanitizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SensitivityBound:
    value: float
    class_count: int
    lam: float
    n: int
    binary: bool = False


@dataclass(frozen=True)
class NoiseScale:
    sigma_squared: float

    def __post_init__(self):
        if self.sigma_squared < 0 or not math.isfinite(self.sigma_squared):
            raise ValueError(f"sigma_squared must be finite and non-negative, got {self.sigma_squared}")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma_squared)


@dataclass(frozen=True)
class SpendRecord:
    epsilon: float
    delta: float
    mechanism: str

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class PrivacySpend:
    records: tuple[SpendRecord, ...] = field(default_factory=tuple)

    def add(self, epsilon: float, delta: float, mechanism: str) -> "PrivacySpend":
        return PrivacySpend(self.records + (SpendRecord(epsilon, delta, mechanism),))

    def __add__(self, other: "PrivacySpend") -> "PrivacySpend":
        return PrivacySpend(self.records + other.records)

    def __len__(self) -> int:
        return len(self.records)


def l2_sensitivity(class_count: int, lam: float, n: int, binary: bool = False) -> SensitivityBound:
    if class_count < 2:
        raise ValueError("class_count must be at least 2")
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    if n < 1:
        raise ValueError("dataset size must be at least 1")
    scale = 1.0 if binary else math.sqrt(class_count)
    return SensitivityBound(2.0 * scale / (lam * n), class_count, lam, n, binary)


def gaussian_sigma(eps: float, delta: float, sensitivity: SensitivityBound) -> NoiseScale:
    if not eps > 0:
        raise ValueError(f"epsilon must be > 0, got {eps}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if eps >= 1.0:
        warnings.warn(
            f"epsilon={eps} >= 1: the classical Gaussian-mechanism guarantee is stated for epsilon < 1",
            stacklevel=2,
        )
    sigma = math.sqrt(2.0 * math.log(1.25 / delta)) * sensitivity.value / eps
    return NoiseScale(sigma * sigma)


def substream(master_seed: int, client_id: int, mechanism: str) -> np.random.Generator:
    """Independent generator for one (client, mechanism) pair."""
    tag = int.from_bytes(hashlib.sha256(mechanism.encode()).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(client_id), tag]))


def sanitize(params: HeadParams | erm.FitResult, noise: NoiseScale, rng: np.random.Generator) -> HeadParams:
    """Add N(0, sigma^2) to every parameter.

    Passing a FitResult lets the convergence precondition be checked; the
    sensitivity bound only holds at the exact optimum.
    """
    if isinstance(params, erm.FitResult):
        if not params.converged:
            raise SanitizationError(
                f"refusing to sanitize a non-converged fit (gradient norm {params.final_gradient_norm:.3g})"
            )
        params = params.params
    if noise.sigma_squared == 0.0:
        return params
    return HeadParams(params.matrix + rng.normal(0.0, noise.sigma, size=params.shape))


def compose(spend: PrivacySpend | Iterable) -> tuple[float, float]:
    """Basic composition: epsilons and deltas add up."""
    records = spend.records if isinstance(spend, PrivacySpend) else tuple(spend)
    eps = math.fsum(r.epsilon if isinstance(r, SpendRecord) else r[0] for r in records)
    delta = math.fsum(r.delta if isinstance(r, SpendRecord) else r[1] for r in records)
    return eps, delta


# --- brute-force sensitivity oracle -----------------------------------------


@dataclass(frozen=True)
class SensitivityTemplate:
    """A family of small random problems for the neighbouring-dataset oracle.

    ``class_count == 2`` with ``binary=True`` uses the single-row sigmoid head.
    ``adversarial`` replaces a point by its reflection with a different label
    instead of a fresh random draw.
    """

    class_count: int
    lam: float
    n: int
    n_features: int = 3
    binary: bool = False
    adversarial: bool = False
    bias: float = 0.5
    tolerance: float = 1e-10

    def __post_init__(self):
        if self.binary and self.class_count != 2:
            raise ValueError("binary templates need class_count == 2")

    def bound(self) -> SensitivityBound:
        return l2_sensitivity(self.class_count, self.lam, self.n, self.binary)


def _random_points(rng: np.random.Generator, count: int, n_features: int, bias: float) -> np.ndarray:
    # bias coordinate fixed, remaining coordinates uniform in a ball so the full norm is <= 1
    direction = rng.standard_normal((count, n_features))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = math.sqrt(1.0 - bias * bias) * rng.random((count, 1)) ** (1.0 / n_features)
    return np.hstack([np.full((count, 1), bias), direction * radius])


def _fit_template(template: SensitivityTemplate, X: np.ndarray, y: np.ndarray) -> erm.FitResult:
    if template.binary:
        return erm.fit_binary_labeled(X, y, template.lam, template.tolerance)
    problem = erm.ErmProblem(Dataset(X, y, template.class_count), template.lam, template.class_count)
    return erm.fit(problem, template.tolerance)


def empirical_sensitivity(template: SensitivityTemplate, trials: int, rng: np.random.Generator,
                          replace_with_self: bool = False) -> float:
    """Largest ||beta*(D) - beta*(D')|| seen over random neighbouring pairs.

    Each trial draws a dataset, swaps one point, and fits both to the
    template tolerance. Any non-converged fit aborts with ConvergenceError.
    """
    worst = 0.0
    for _ in range(trials):
        X = _random_points(rng, template.n, template.n_features, template.bias)
        y = rng.integers(0, template.class_count, template.n)
        X2, y2 = X.copy(), y.copy()
        j = int(rng.integers(template.n))
        if replace_with_self:
            pass
        elif template.adversarial:
            X2[j, 1:] = -X[j, 1:]
            if np.linalg.norm(X2[j, 1:]) > 0:
                X2[j, 1:] *= math.sqrt(1.0 - template.bias ** 2) / np.linalg.norm(X2[j, 1:])
            y2[j] = (y[j] + 1 + rng.integers(template.class_count - 1)) % template.class_count
        else:
            X2[j] = _random_points(rng, 1, template.n_features, template.bias)[0]
            y2[j] = rng.integers(template.class_count)
        first = _fit_template(template, X, y)
        second = _fit_template(template, X2, y2)
        if not (first.converged and second.converged):
            raise erm.ConvergenceError("sensitivity trial fit did not converge")
        worst = max(worst, float(np.linalg.norm(first.params.matrix - second.params.matrix)))
    return worst
