"""L2-regularized logistic regression heads.

Multinomial objective::

    J(B) = mean_i -log softmax(B x_i)[y_i] + lam/2 * ||B||_F^2

The bias column is part of B and is regularized like every other entry.
Binary heads use a single row with the sigmoid in place of the softmax.
Everything is minimized by the deterministic L-BFGS in :func:`lbfgs`,
started from zero.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .datamodel import Dataset, FeatureVector, HeadParams

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 1000
LBFGS_MEMORY = 10
NORM_SLACK = 1e-12

_ONE_MINUS = np.nextafter(1.0, 0.0)
_TINY = np.finfo(np.float64).tiny


class ConvergenceError(RuntimeError):
    """Raised by callers that cannot accept a non-converged fit."""


@dataclass(frozen=True)
class ErmProblem:
    data: Dataset
    lam: float
    class_count: int

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if self.class_count < 2:
            raise ValueError("class_count must be at least 2")
        if self.data.class_count != self.class_count:
            raise ValueError("dataset class_count disagrees with problem class_count")
        if len(self.data) == 0:
            raise ValueError("training data is empty")
        norms = np.linalg.norm(self.data.features, axis=1)
        if np.max(norms) > 1.0 + NORM_SLACK:
            raise ValueError(f"feature norms must be <= 1 (max {np.max(norms):.6g}); normalize first")

    @property
    def dim(self) -> int:
        return self.data.dim


@dataclass(frozen=True)
class FitResult:
    params: HeadParams
    final_gradient_norm: float
    iterations: int
    converged: bool
    tolerance: float = DEFAULT_TOLERANCE


# --- numerics ---------------------------------------------------------------


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z):
    # Both branches are evaluated by np.where; exp(-|z|) never overflows.
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def one_hot(labels: np.ndarray, class_count: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], class_count))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy_value_grad(beta: np.ndarray, X: np.ndarray, Y: np.ndarray, lam: float):
    """Mean soft-target cross-entropy plus ridge term, and its gradient.

    With one-hot ``Y`` this is the multinomial objective. Gradient rows:
    ``mean_i (p_i - y_i) x_i + lam * beta``.
    """
    logp = _log_softmax(X @ beta.T)
    n = X.shape[0]
    value = -np.sum(Y * logp) / n + 0.5 * lam * np.sum(beta * beta)
    grad = (np.exp(logp) - Y).T @ X / n + lam * beta
    return value, grad


def binary_value_grad(w: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float):
    """Mean binary cross-entropy (labels in {0,1}) plus ridge term, and gradient."""
    z = X @ w
    # -log sigmoid(z) = logaddexp(0, -z); -log(1 - sigmoid(z)) = logaddexp(0, z)
    loss = y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)
    n = X.shape[0]
    value = np.sum(loss) / n + 0.5 * lam * (w @ w)
    grad = X.T @ (sigmoid(z) - y) / n + lam * w
    return value, grad


# --- optimizer --------------------------------------------------------------


def _interpolate(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi):
    """Trial step inside (a_lo, a_hi): secant on the derivative when it brackets a root, else cubic."""
    width = a_hi - a_lo
    if d_lo * d_hi < 0:
        a = a_lo - d_lo * width / (d_hi - d_lo)
    else:
        d1 = d_lo + d_hi - 3.0 * (f_lo - f_hi) / (a_lo - a_hi)
        disc = d1 * d1 - d_lo * d_hi
        if disc < 0:
            return a_lo + 0.5 * width
        d2 = np.copysign(np.sqrt(disc), width)
        denom = d_hi - d_lo + 2.0 * d2
        if denom == 0:
            return a_lo + 0.5 * width
        a = a_hi - width * (d_hi + d2 - d1) / denom
    lo, hi = sorted((a_lo + 0.1 * width, a_hi - 0.1 * width))
    if not np.isfinite(a) or a < lo or a > hi:
        return a_lo + 0.5 * width
    return a


def _line_search(fg, x, f0, g0, d, step, c1=1e-4, c2=0.9, max_evals=50):
    """Strong-Wolfe line search (bracket then zoom).

    Sufficient decrease is judged with an approximate test once the change in
    f drops below float resolution; the curvature test works on directional
    derivatives, which stay informative that close to the optimum.
    """
    dphi0 = float(g0 @ d)
    f_eps = 1e-13 * (1.0 + abs(f0))

    def evaluate(a):
        f, g = fg(x + a * d)
        return a, f, g, float(g @ d)

    def decreases(a, f):
        return f <= f0 + c1 * a * dphi0 or f <= f0 + f_eps

    def strong(dphi):
        return abs(dphi) <= -c2 * dphi0

    def zoom(lo, hi, budget):
        for _ in range(budget):
            a = _interpolate(lo[0], lo[1], lo[3], hi[0], hi[1], hi[3])
            trial = evaluate(a)
            if not decreases(a, trial[1]) or trial[1] > lo[1] + f_eps:
                hi = trial
            else:
                if strong(trial[3]):
                    return trial
                if trial[3] * (hi[0] - lo[0]) >= 0:
                    hi = lo
                lo = trial
            if abs(hi[0] - lo[0]) <= 1e-16 * max(1.0, abs(lo[0])):
                break
        return lo if lo[0] > 0 and lo[1] <= f0 + f_eps else None

    prev = (0.0, f0, g0, dphi0)
    a = step
    for i in range(max_evals):
        cur = evaluate(a)
        if not np.isfinite(cur[1]):
            a = 0.5 * (prev[0] + a)
            continue
        if not decreases(a, cur[1]) or (i > 0 and cur[1] > prev[1] + f_eps):
            return zoom(prev, cur, max_evals - i)
        if strong(cur[3]):
            return cur
        if cur[3] >= 0:
            return zoom(cur, prev, max_evals - i)
        prev = cur
        a *= 2.0
    return None


def lbfgs(fg: Callable, x0: np.ndarray, tolerance: float = DEFAULT_TOLERANCE,
          max_iterations: int = DEFAULT_MAX_ITERATIONS, memory: int = LBFGS_MEMORY):
    """Minimize a smooth function with limited-memory BFGS.

    ``fg(x)`` returns ``(f, grad)`` for a flat vector ``x``. Stops when the
    Euclidean gradient norm is at most ``tolerance``. Returns
    ``(x, grad_norm, iterations, converged)``.
    """
    x = np.array(x0, dtype=np.float64)
    f, g = fg(x)
    s_hist: deque = deque(maxlen=memory)
    y_hist: deque = deque(maxlen=memory)
    gnorm = float(np.linalg.norm(g))
    for it in range(max_iterations):
        if gnorm <= tolerance:
            return x, gnorm, it, True
        # two-loop recursion
        q = -g
        alphas = []
        for s, y in zip(reversed(s_hist), reversed(y_hist)):
            rho = 1.0 / (y @ s)
            a = rho * (s @ q)
            alphas.append((a, rho))
            q = q - a * y
        if s_hist:
            s, y = s_hist[-1], y_hist[-1]
            q = q * ((s @ y) / (y @ y))
        else:
            q = q * min(1.0, 1.0 / gnorm)
        for (a, rho), s, y in zip(reversed(alphas), s_hist, y_hist):
            b = rho * (y @ q)
            q = q + s * (a - b)
        d = q
        if g @ d >= 0:
            s_hist.clear()
            y_hist.clear()
            d = -g * min(1.0, 1.0 / gnorm)

        found = _line_search(fg, x, f, g, d, 1.0)
        if found is None:
            if s_hist:
                s_hist.clear()
                y_hist.clear()
                continue
            return x, gnorm, it, False
        a, f_new, g_new, _ = found
        s = a * d
        y = g_new - g
        if s @ y > 1e-20 * (s @ s):
            s_hist.append(s)
            y_hist.append(y)
        x = x + s
        f, g = f_new, g_new
        gnorm = float(np.linalg.norm(g))
    return x, gnorm, max_iterations, gnorm <= tolerance


# --- multinomial head -------------------------------------------------------


def _check_shape(params: HeadParams, rows: int, dim: int):
    if params.shape != (rows, dim):
        raise ValueError(f"head shape {params.shape} does not match expected {(rows, dim)}")


def objective(params: HeadParams, problem: ErmProblem) -> float:
    _check_shape(params, problem.class_count, problem.dim)
    Y = one_hot(problem.data.labels, problem.class_count)
    value, _ = cross_entropy_value_grad(params.matrix, problem.data.features, Y, problem.lam)
    return float(value)


def gradient(params: HeadParams, problem: ErmProblem) -> np.ndarray:
    _check_shape(params, problem.class_count, problem.dim)
    Y = one_hot(problem.data.labels, problem.class_count)
    _, grad = cross_entropy_value_grad(params.matrix, problem.data.features, Y, problem.lam)
    return grad


def fit_soft(X: np.ndarray, Y: np.ndarray, lam: float, tolerance: float = DEFAULT_TOLERANCE,
             max_iterations: int = DEFAULT_MAX_ITERATIONS) -> FitResult:
    """Fit a multinomial head to soft (row-stochastic) targets ``Y``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    C, dim = Y.shape[1], X.shape[1]

    def fg(flat):
        value, grad = cross_entropy_value_grad(flat.reshape(C, dim), X, Y, lam)
        return value, grad.ravel()

    flat, gnorm, iters, ok = lbfgs(fg, np.zeros(C * dim), tolerance, max_iterations)
    return FitResult(HeadParams(flat.reshape(C, dim)), gnorm, iters, ok, tolerance)


def fit(problem: ErmProblem, tolerance: float = DEFAULT_TOLERANCE,
        max_iterations: int = DEFAULT_MAX_ITERATIONS) -> FitResult:
    if not tolerance > 0:
        raise ValueError("tolerance must be > 0")
    Y = one_hot(problem.data.labels, problem.class_count)
    return fit_soft(problem.data.features, Y, problem.lam, tolerance, max_iterations)


def predict_proba(params: HeadParams, features) -> np.ndarray:
    """Softmax class probabilities for one vector or row-wise for a matrix."""
    x = features.values if isinstance(features, FeatureVector) else np.asarray(features, dtype=np.float64)
    if x.shape[-1] != params.shape[1]:
        raise ValueError(f"feature dim {x.shape[-1]} does not match head dim {params.shape[1]}")
    if params.is_binary:
        p1 = sigmoid(x @ params.matrix[0])
        return np.stack([1.0 - p1, p1], axis=-1)
    return softmax(x @ params.matrix.T)


def predict(params: HeadParams, features) -> np.ndarray:
    """Argmax class; ties go to the lowest index."""
    return np.argmax(predict_proba(params, features), axis=-1)


# --- binary head ------------------------------------------------------------


def fit_binary_labeled(X, y, lam: float, tolerance: float = DEFAULT_TOLERANCE,
                       max_iterations: int = DEFAULT_MAX_ITERATIONS) -> FitResult:
    """Single-row logistic head on features ``X`` with 0/1 labels ``y``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    if X.shape[0] == 0:
        raise ValueError("training data is empty")
    if np.max(np.linalg.norm(X, axis=1)) > 1.0 + NORM_SLACK:
        raise ValueError("feature norms must be <= 1; normalize first")

    def fg(w):
        return binary_value_grad(w, X, y, lam)

    w, gnorm, iters, ok = lbfgs(fg, np.zeros(X.shape[1]), tolerance, max_iterations)
    return FitResult(HeadParams(w[None, :]), gnorm, iters, ok, tolerance)


def fit_binary(positives, negatives, lam: float, tolerance: float = DEFAULT_TOLERANCE,
               max_iterations: int = DEFAULT_MAX_ITERATIONS) -> FitResult:
    """Single-row head separating ``positives`` (label 1) from ``negatives`` (label 0)."""
    positives = np.atleast_2d(np.asarray(positives, dtype=np.float64))
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if positives.shape[0] == 0 or negatives.shape[0] == 0:
        raise ValueError("binary fit needs both positives and negatives")
    X = np.vstack([positives, negatives])
    y = np.concatenate([np.ones(positives.shape[0]), np.zeros(negatives.shape[0])])
    return fit_binary_labeled(X, y, lam, tolerance, max_iterations)


def score_binary(params: HeadParams, features) -> np.ndarray | float:
    """Sigmoid score, kept strictly inside (0, 1) even when it would round to 0 or 1."""
    if not params.is_binary:
        raise ValueError("score_binary needs a single-row head")
    x = features.values if isinstance(features, FeatureVector) else np.asarray(features, dtype=np.float64)
    if x.shape[-1] != params.shape[1]:
        raise ValueError(f"feature dim {x.shape[-1]} does not match head dim {params.shape[1]}")
    s = np.clip(sigmoid(x @ params.matrix[0]), _TINY, _ONE_MINUS)
    return float(s) if s.ndim == 0 else s
