"""One-round federated distillation with privatized client heads.

Each client fits two heads on frozen features: a binary scoring head
(local data against public negatives) and a multinomial class head on its
local data. Both are sanitized with the Gaussian mechanism before leaving the
client. The server only ever sees the sanitized heads' outputs on public
distillation points, so everything downstream is post-processing.

Methods compared in :func:`run_round`:

* ``fedauxfdp`` -- certainty-weighted soft labels, distilled into a server head
* ``fedd``      -- plain average of soft labels, distilled the same way
* ``fedavg``    -- size-weighted average of the class heads
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import erm, privacy
from .datamodel import (
    AuxiliarySplit,
    CertaintyScores,
    Dataset,
    HeadParams,
    MetricsRecord,
    PrivacyParams,
    SoftLabelMatrix,
)
from .features import BiasedPool, NormalizationConstant, append_bias, clip_rows, fit_normalizer, normalize_rows, prepare

METHODS = ("fedauxfdp", "fedd", "fedavg")
SCORE_MECHANISM = "scores"
CLASS_MECHANISM = "classes"
DENOMINATOR_FLOOR = 1e-12


class ClientFailure(RuntimeError):
    def __init__(self, client_id: int, reason: str):
        super().__init__(f"client {client_id}: {reason}")
        self.client_id = client_id


@dataclass(frozen=True)
class FederatedData:
    """Raw extracted features for one experiment cell (no bias coordinate yet)."""

    clients: tuple[Dataset, ...]
    aux: AuxiliarySplit
    test: Dataset

    @property
    def class_count(self) -> int:
        return self.test.class_count


@dataclass(frozen=True)
class RoundConfig:
    class_count: int
    seed: int = 0
    lambda_class: float = 0.01
    lambda_score: float = 0.01
    lambda_server: float = 1e-4
    class_dp: PrivacyParams = PrivacyParams(0.5, 1e-5)
    score_dp: PrivacyParams = PrivacyParams(0.1, 1e-5)
    tolerance: float = erm.DEFAULT_TOLERANCE
    max_iterations: int = erm.DEFAULT_MAX_ITERATIONS
    methods: tuple[str, ...] = METHODS
    normalizer: str = "local"  # or "public"
    per_client_class_count: bool = False

    def __post_init__(self):
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.normalizer not in ("local", "public"):
            raise ValueError("normalizer must be 'local' or 'public'")


@dataclass(frozen=True)
class ClientArtifacts:
    """What a client publishes: sanitized heads, the scales their inputs expect, and its spend."""

    client_id: int
    scoring_head: HeadParams
    class_head: HeadParams
    scoring_scale: NormalizationConstant
    class_scale: NormalizationConstant
    spend: privacy.PrivacySpend
    size: int
    scores: CertaintyScores | None = None
    soft_labels: SoftLabelMatrix | None = None


@dataclass(frozen=True)
class ServerModel:
    head: HeadParams
    scale: NormalizationConstant

    def prepare(self, raw: np.ndarray) -> np.ndarray:
        return prepare(raw, self.scale, clip=True)


# --- client side ------------------------------------------------------------


def _privatize(fit: erm.FitResult, dp: PrivacyParams, bound: privacy.SensitivityBound,
               rng: np.random.Generator, mechanism: str, client_id: int):
    if not fit.converged:
        raise ClientFailure(client_id, f"{mechanism} head did not converge (|grad|={fit.final_gradient_norm:.3g})")
    spend = privacy.PrivacySpend()
    if not dp.enabled:
        return fit.params, spend
    noise = privacy.gaussian_sigma(dp.epsilon, dp.delta, bound)
    return privacy.sanitize(fit, noise, rng), spend.add(dp.epsilon, dp.delta, mechanism)


def fit_scoring(local: np.ndarray, negatives: np.ndarray, lam: float,
                tolerance: float = erm.DEFAULT_TOLERANCE,
                max_iterations: int = erm.DEFAULT_MAX_ITERATIONS) -> erm.FitResult:
    return erm.fit_binary(local, negatives, lam, tolerance, max_iterations)


def client_train_scoring(local: np.ndarray, negatives: np.ndarray, lam: float, dp: PrivacyParams,
                         rng: np.random.Generator, client_id: int = 0,
                         tolerance: float = erm.DEFAULT_TOLERANCE,
                         max_iterations: int = erm.DEFAULT_MAX_ITERATIONS):
    """Binary scoring head on normalized local features (label 1) vs negatives (label 0).

    Sanitized with the binary bound at N = |local| + |negatives|.
    Returns ``(head, spend)``.
    """
    fit = fit_scoring(local, negatives, lam, tolerance, max_iterations)
    n = int(np.atleast_2d(local).shape[0] + np.atleast_2d(negatives).shape[0])
    bound = privacy.l2_sensitivity(2, lam, n, binary=True)
    return _privatize(fit, dp, bound, rng, SCORE_MECHANISM, client_id)


def client_train_classifier(local: Dataset, lam: float, dp: PrivacyParams, rng: np.random.Generator,
                            client_id: int = 0, tolerance: float = erm.DEFAULT_TOLERANCE,
                            max_iterations: int = erm.DEFAULT_MAX_ITERATIONS,
                            effective_class_count: int | None = None):
    """Multinomial head over the global class set, sanitized with the 2 sqrt(C)/(lam N) bound.

    ``effective_class_count`` swaps C in the bound for the number of classes
    the client actually holds (experimental). Returns ``(head, spend)``.
    """
    problem = erm.ErmProblem(local, lam, local.class_count)
    fit = erm.fit(problem, tolerance, max_iterations)
    return privatize_classifier(fit, len(local), local.class_count, lam, dp, rng, client_id, effective_class_count)


def privatize_classifier(fit: erm.FitResult, n: int, class_count: int, lam: float, dp: PrivacyParams,
                         rng: np.random.Generator, client_id: int = 0,
                         effective_class_count: int | None = None):
    c = class_count if effective_class_count is None else max(2, effective_class_count)
    bound = privacy.l2_sensitivity(c, lam, n)
    return _privatize(fit, dp, bound, rng, CLASS_MECHANISM, client_id)


def client_emit(artifacts: ClientArtifacts, distill: np.ndarray | BiasedPool):
    """Certainty scores and soft labels of a client's sanitized heads on raw distillation features."""
    x_score = prepare(distill, artifacts.scoring_scale, clip=True)
    x_class = prepare(distill, artifacts.class_scale, clip=True)
    scores = CertaintyScores(erm.score_binary(artifacts.scoring_head, x_score))
    soft = SoftLabelMatrix(erm.predict_proba(artifacts.class_head, x_class))
    return scores, soft


# --- server side ------------------------------------------------------------


def aggregate_weighted(scores: Sequence[CertaintyScores], soft_labels: Sequence[SoftLabelMatrix]) -> SoftLabelMatrix:
    """Per distillation point: sum_i f_i(x) g_i(x) / sum_i f_i(x).

    Points where every client gave the same score use the plain mean, which
    is what the weights cancel to. Points whose score sum falls below
    ``DENOMINATOR_FLOOR`` also use the plain mean and are counted.
    """
    if not scores or len(scores) != len(soft_labels):
        raise ValueError("need one score vector per client and at least one client")
    f = np.stack([s.values for s in scores])  # (n_clients, M)
    g = np.stack([s.rows for s in soft_labels])  # (n_clients, M, C)
    if f.shape[1] != g.shape[1]:
        raise ValueError("score and soft-label lengths differ")
    plain = g.sum(axis=0) / g.shape[0]
    denom = f.sum(axis=0)
    weighted = np.einsum("im,imc->mc", f, g) / np.maximum(denom, DENOMINATOR_FLOOR)[:, None]
    equal = np.all(f == f[0], axis=0)
    starved = denom < DENOMINATOR_FLOOR
    use_plain = equal | starved
    rows = np.where(use_plain[:, None], plain, weighted)
    return SoftLabelMatrix(rows, fallback_count=int(np.sum(starved & ~equal)))


def aggregate_unweighted(soft_labels: Sequence[SoftLabelMatrix]) -> SoftLabelMatrix:
    if not soft_labels:
        raise ValueError("no clients to aggregate")
    g = np.stack([s.rows for s in soft_labels])
    return SoftLabelMatrix(g.sum(axis=0) / g.shape[0])


def server_distill(supervision: SoftLabelMatrix, distill: np.ndarray, lambda_server: float,
                   tolerance: float = erm.DEFAULT_TOLERANCE, scale: NormalizationConstant | None = None,
                   max_iterations: int = erm.DEFAULT_MAX_ITERATIONS) -> ServerModel:
    """Fit the server head on public distillation features against soft targets.

    ``distill`` is raw; it is bias-augmented, divided by ``scale`` (fitted on
    ``distill`` itself when omitted) and clipped to the unit ball.
    """
    if scale is None:
        scale = fit_normalizer(append_bias(distill))
    X = prepare(distill, scale, clip=True)
    if X.shape[0] != len(supervision):
        raise ValueError("supervision rows and distillation points differ in number")
    result = erm.fit_soft(X, supervision.rows, lambda_server, tolerance, max_iterations)
    if not result.converged:
        raise erm.ConvergenceError(f"server distillation did not converge (|grad|={result.final_gradient_norm:.3g})")
    return ServerModel(result.params, scale)


def _exact_sum(stack: np.ndarray) -> np.ndarray:
    flat = stack.reshape(stack.shape[0], -1)
    return np.array([math.fsum(col) for col in flat.T]).reshape(stack.shape[1:])


def fedavg_aggregate(heads: Sequence[HeadParams], sizes: Sequence[int],
                     scale: NormalizationConstant | None = None) -> ServerModel:
    """Size-weighted parameter average. Exactly rounded, so client order does not matter."""
    if not heads or len(heads) != len(sizes):
        raise ValueError("need one size per head and at least one head")
    shape = heads[0].shape
    if any(h.shape != shape for h in heads):
        raise ValueError("heads have different shapes")
    sizes = np.asarray(sizes, dtype=np.float64)
    if np.any(sizes <= 0):
        raise ValueError("client sizes must be positive")
    weights = sizes / math.fsum(sizes)
    stack = np.stack([w * h.matrix for w, h in zip(weights, heads)])
    return ServerModel(HeadParams(_exact_sum(stack)), scale or NormalizationConstant(1.0))


def evaluate(model: ServerModel | HeadParams, test: Dataset) -> float:
    """Top-1 accuracy on already-prepared test features; ties go to the lowest class index."""
    if len(test) == 0:
        raise ValueError("empty test set")
    head = model.head if isinstance(model, ServerModel) else model
    predicted = erm.predict(head, test.features)
    return float(np.mean(predicted == test.labels))


# --- one round --------------------------------------------------------------


@dataclass(frozen=True)
class ClientFit:
    """Un-noised client state. Never leaves the client; cached so several budgets can share one fit."""

    client_id: int
    size: int
    present_classes: int
    scoring_fit: erm.FitResult
    class_fit: erm.FitResult
    scoring_scale: NormalizationConstant
    class_scale: NormalizationConstant
    scoring_n: int


def _public_scale(data: FederatedData) -> NormalizationConstant:
    return fit_normalizer(append_bias(np.vstack([data.aux.negatives, data.aux.distill])))


def fit_clients(data: FederatedData, config: RoundConfig) -> list[ClientFit]:
    """Train both heads of every client (no noise yet)."""
    public = _public_scale(data) if config.normalizer == "public" else None
    fits = []
    for cid, local in enumerate(data.clients):
        if len(local) == 0:
            raise ClientFailure(cid, "empty local dataset")
        local_b = append_bias(local.features)
        neg_b = append_bias(data.aux.negatives)
        if public is None:
            class_scale = fit_normalizer(local_b)
            score_scale = fit_normalizer(np.vstack([local_b, neg_b]))
        else:
            class_scale = score_scale = public
        x_class = clip_rows(normalize_rows(local_b, class_scale))
        scoring = fit_scoring(
            clip_rows(normalize_rows(local_b, score_scale)),
            clip_rows(normalize_rows(neg_b, score_scale)),
            config.lambda_score, config.tolerance, config.max_iterations,
        )
        problem = erm.ErmProblem(local.with_features(x_class), config.lambda_class, config.class_count)
        class_fit = erm.fit(problem, config.tolerance, config.max_iterations)
        for name, fit in (("scoring", scoring), ("class", class_fit)):
            if not fit.converged:
                raise ClientFailure(cid, f"{name} head did not converge (|grad|={fit.final_gradient_norm:.3g})")
        fits.append(ClientFit(
            cid, len(local), int(np.unique(local.labels).size), scoring, class_fit,
            score_scale, class_scale, len(local) + data.aux.negatives.shape[0],
        ))
    return fits


def privatize_clients(fits: Sequence[ClientFit], config: RoundConfig,
                      distill: np.ndarray | BiasedPool) -> list[ClientArtifacts]:
    """Sanitize every client's heads and compute their outputs on the distillation set.

    Pass a :class:`BiasedPool` to reuse the bias column and row norms across calls.
    """
    if not isinstance(distill, BiasedPool):
        distill = BiasedPool(distill)
    if config.per_client_class_count and config.class_dp.enabled:
        warnings.warn("per-client class count in the sensitivity bound is experimental", stacklevel=2)
    out = []
    for cf in fits:
        score_rng = privacy.substream(config.seed, cf.client_id, SCORE_MECHANISM)
        class_rng = privacy.substream(config.seed, cf.client_id, CLASS_MECHANISM)
        score_bound = privacy.l2_sensitivity(2, config.lambda_score, cf.scoring_n, binary=True)
        scoring_head, spend = _privatize(cf.scoring_fit, config.score_dp, score_bound, score_rng,
                                         SCORE_MECHANISM, cf.client_id)
        effective = cf.present_classes if config.per_client_class_count else None
        class_head, class_spend = privatize_classifier(
            cf.class_fit, cf.size, config.class_count, config.lambda_class, config.class_dp,
            class_rng, cf.client_id, effective,
        )
        artifacts = ClientArtifacts(cf.client_id, scoring_head, class_head, cf.scoring_scale, cf.class_scale,
                                    spend + class_spend, cf.size)
        scores, soft = client_emit(artifacts, distill)
        out.append(replace(artifacts, scores=scores, soft_labels=soft))
    return out


@dataclass
class RoundResult:
    records: list[MetricsRecord]
    client_spends: list[tuple[float, float]] = field(default_factory=list)
    supervision: dict[str, SoftLabelMatrix] = field(default_factory=dict)


def run_methods(artifacts: Sequence[ClientArtifacts], data: FederatedData, config: RoundConfig,
                alpha: float = float("nan")) -> RoundResult:
    """Aggregate published client outputs with every configured method and score the server models.

    Reads only the artifacts and public/test data.
    """
    server_scale = fit_normalizer(append_bias(data.aux.distill))
    test = data.test.with_features(prepare(data.test.features, server_scale, clip=True))
    spends = [privacy.compose(a.spend) for a in artifacts]
    eps_total = max(s[0] for s in spends)
    delta_total = max(s[1] for s in spends)
    eps_class = config.class_dp.epsilon if config.class_dp.enabled else None
    result = RoundResult([], spends)
    for method in config.methods:
        start = time.perf_counter()
        fallback = 0
        if method == "fedavg":
            model = fedavg_aggregate([a.class_head for a in artifacts], [a.size for a in artifacts], server_scale)
        else:
            if method == "fedauxfdp":
                supervision = aggregate_weighted([a.scores for a in artifacts], [a.soft_labels for a in artifacts])
                fallback = supervision.fallback_count
            else:
                supervision = aggregate_unweighted([a.soft_labels for a in artifacts])
            result.supervision[method] = supervision
            model = server_distill(supervision, data.aux.distill, config.lambda_server, config.tolerance,
                                   server_scale, config.max_iterations)
        accuracy = evaluate(model, test)
        wall_ms = int(round(1000 * (time.perf_counter() - start)))
        result.records.append(MetricsRecord(method, alpha, eps_class, config.lambda_class, config.seed,
                                            accuracy, eps_total, delta_total, fallback, wall_ms))
    return result


def run_round(config: RoundConfig, data: FederatedData, alpha: float = float("nan")) -> RoundResult:
    """Full protocol for one cell: fit, sanitize, publish, aggregate, distill, evaluate."""
    fits = fit_clients(data, config)
    artifacts = privatize_clients(fits, config, data.aux.distill)
    return run_methods(artifacts, data, config, alpha)
