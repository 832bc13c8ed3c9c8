import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import unit_ball_rows
from fedauxfdp import erm
from fedauxfdp.datamodel import Dataset, FeatureVector, HeadParams


def problem(X, y, C, lam):
    return erm.ErmProblem(Dataset(X, y, C), lam, C)


def random_problem(rng, n=10, p=3, C=3, lam=0.1):
    X = unit_ball_rows(rng, n, p)
    y = rng.integers(0, C, n)
    return problem(X, y, C, lam)


# --- objective --------------------------------------------------------------


@pytest.mark.parametrize("C, expected", [(10, math.log(10)), (2, math.log(2))])
def test_objective_at_zero_is_log_c(rng, C, expected):
    prob = random_problem(rng, n=7, C=C, lam=3.0)
    value = erm.objective(HeadParams.zeros(C, prob.dim), prob)
    assert value == pytest.approx(expected, abs=1e-15)


def mp_objective(B, X, y, lam):
    mpmath.mp.dps = 50
    total = mpmath.mpf(0)
    for x, label in zip(X, y):
        logits = [mpmath.fsum(mpmath.mpf(b) * mpmath.mpf(v) for b, v in zip(row, x)) for row in B]
        total += mpmath.log(mpmath.fsum(mpmath.exp(l) for l in logits)) - logits[label]
    reg = mpmath.fsum(mpmath.mpf(b) ** 2 for b in B.ravel())
    return total / len(y) + mpmath.mpf(lam) / 2 * reg


def test_objective_matches_high_precision_oracle(rng):
    for _ in range(5):
        prob = random_problem(rng, n=5, p=3, C=4, lam=0.7)
        B = rng.standard_normal((4, prob.dim)) * 2
        ours = erm.objective(HeadParams(B), prob)
        ref = float(mp_objective(B, prob.data.features, prob.data.labels, prob.lam))
        assert abs(ours - ref) <= 1e-12


def test_objective_stable_for_large_logits():
    X = np.array([[1.0, 0.0]])
    B = np.array([[900.0, 0.0], [0.0, 0.0]])
    prob = problem(X, np.array([1]), 2, 1e-3)
    value = erm.objective(HeadParams(B), prob)
    assert value == pytest.approx(900.0 + 1e-3 / 2 * 900.0 ** 2)


def test_objective_rejects_shape_mismatch(rng):
    prob = random_problem(rng, C=3)
    with pytest.raises(ValueError):
        erm.objective(HeadParams.zeros(2, prob.dim), prob)


# --- gradient ---------------------------------------------------------------


def test_gradient_at_zero_single_example():
    C = 4
    x = np.array([0.6, 0.0, 0.8])
    prob = problem(x[None, :], np.array([2]), C, 1.0)
    g = erm.gradient(HeadParams.zeros(C, 3), prob)
    for k in range(C):
        expected = (1 / C - 1) * x if k == 2 else (1 / C) * x
        np.testing.assert_allclose(g[k], expected, atol=1e-15)


def central_difference(prob, B, h=1e-6):
    out = np.zeros_like(B)
    for idx in np.ndindex(B.shape):
        plus, minus = B.copy(), B.copy()
        plus[idx] += h
        minus[idx] -= h
        out[idx] = (erm.objective(HeadParams(plus), prob) - erm.objective(HeadParams(minus), prob)) / (2 * h)
    return out


def test_gradient_matches_finite_differences(rng):
    prob = random_problem(rng, n=10, p=4, C=3, lam=0.05)
    B = rng.standard_normal((3, prob.dim))
    analytic = erm.gradient(HeadParams(B), prob)
    numeric = central_difference(prob, B)
    assert np.linalg.norm(analytic - numeric) <= 1e-5 * np.linalg.norm(analytic)


def test_per_example_gradient_norm_at_most_sqrt_c(rng):
    for _ in range(200):
        C = int(rng.integers(2, 8))
        x = unit_ball_rows(rng, 1, 4)
        B = rng.standard_normal((C, 5)) * rng.uniform(0, 20)
        prob = problem(x, rng.integers(0, C, 1), C, 1e-300)
        g = erm.gradient(HeadParams(B), prob) - 1e-300 * B
        assert np.linalg.norm(g) <= math.sqrt(C) * np.linalg.norm(x) + 1e-12


# --- strong convexity -------------------------------------------------------


@given(seed=st.integers(0, 2 ** 32 - 1), t=st.floats(0.01, 0.99), lam=st.floats(1e-3, 10.0))
def test_objective_is_lambda_strongly_convex(seed, t, lam):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, n=8, p=3, C=3, lam=lam)
    b1 = rng.standard_normal((3, 4)) * 3
    b2 = rng.standard_normal((3, 4)) * 3
    J = lambda B: erm.objective(HeadParams(B), prob)
    lhs = J(t * b1 + (1 - t) * b2)
    rhs = t * J(b1) + (1 - t) * J(b2) - lam / 2 * t * (1 - t) * np.sum((b1 - b2) ** 2)
    assert lhs <= rhs + 1e-10


# --- fit --------------------------------------------------------------------


def test_fit_converges_and_is_optimal(rng):
    prob = random_problem(rng, n=40, p=4, C=3, lam=0.05)
    res = erm.fit(prob)
    assert res.converged and res.final_gradient_norm <= 1e-8
    J0 = erm.objective(res.params, prob)
    for _ in range(50):
        d = rng.standard_normal(res.params.shape)
        d *= 1e-3 / np.linalg.norm(d)
        assert erm.objective(HeadParams(res.params.matrix + d), prob) >= J0


def test_fit_is_bit_deterministic(rng):
    prob = random_problem(rng, n=30, C=4)
    a, b = erm.fit(prob), erm.fit(prob)
    assert np.array_equal(a.params.matrix, b.params.matrix)
    assert a.iterations == b.iterations and a.final_gradient_norm == b.final_gradient_norm


def test_fit_single_example_matches_grid_search():
    # one feature plus bias, C=2, lambda=100; the grid is over the two rows' scalar gap
    x = np.array([0.6, 0.8])
    prob = problem(x[None, :], np.array([1]), 2, 100.0)
    res = erm.fit(prob)
    # symmetry: optimum has B[1] = -B[0] = s * x / |x|, so search over the scalar s
    grid = np.linspace(-0.05, 0.05, 200001)
    values = [erm.objective(HeadParams(np.vstack([-s * x, s * x])), prob) for s in grid[::100]]
    coarse = grid[::100][int(np.argmin(values))]
    fine = np.linspace(coarse - 1e-4, coarse + 1e-4, 2001)
    values = [erm.objective(HeadParams(np.vstack([-s * x, s * x])), prob) for s in fine]
    s_best = fine[int(np.argmin(values))]
    np.testing.assert_allclose(res.params.matrix, np.vstack([-s_best * x, s_best * x]), atol=1e-4)
    assert np.linalg.norm(res.params.matrix) <= 2 / 100.0


def plain_gradient_descent(prob, steps=200000, lr=0.5):
    B = np.zeros((prob.class_count, prob.dim))
    for _ in range(steps):
        g = erm.gradient(HeadParams(B), prob)
        B -= lr * g
        if np.linalg.norm(g) < 1e-12:
            break
    return B


def test_fit_two_separable_points_matches_gradient_descent():
    X = np.array([[0.5, 0.5], [0.5, -0.5]])
    prob = problem(X, np.array([0, 1]), 2, 1.0)
    res = erm.fit(prob, tolerance=1e-12)
    np.testing.assert_allclose(res.params.matrix, plain_gradient_descent(prob), atol=1e-6)


def test_fit_invariant_to_duplicating_the_data(rng):
    prob = random_problem(rng, n=15, C=3, lam=0.1)
    doubled = problem(np.vstack([prob.data.features] * 2), np.concatenate([prob.data.labels] * 2), 3, 0.1)
    np.testing.assert_allclose(erm.fit(doubled).params.matrix, erm.fit(prob).params.matrix, atol=1e-7)


def test_fit_reports_non_convergence(rng):
    prob = random_problem(rng, n=30, C=3, lam=1e-4)
    res = erm.fit(prob, tolerance=1e-14, max_iterations=2)
    assert not res.converged


def test_problem_rejects_unnormalized_features():
    with pytest.raises(ValueError, match="normalize"):
        problem(np.array([[1.0, 1.0]]), np.array([0]), 2, 1.0)


def test_single_class_client_trains_all_rows(rng):
    X = unit_ball_rows(rng, 20, 3)
    res = erm.fit(problem(X, np.zeros(20, dtype=int), 5, 0.01))
    assert res.converged and res.params.shape == (5, 4)
    assert np.all(erm.predict(res.params, X) == 0)


# --- prediction -------------------------------------------------------------


def test_predict_proba_cases(rng):
    x = FeatureVector(np.array([0.5, 0.5, 0.5]))
    np.testing.assert_allclose(erm.predict_proba(HeadParams.zeros(4, 3), x), 0.25, atol=0)
    B = np.zeros((3, 3))
    B[1, 0] = 50.0 / 0.5
    p = erm.predict_proba(HeadParams(B), x)
    assert abs(p[1] - 1.0) <= 1e-15
    for _ in range(20):
        B = rng.standard_normal((5, 3)) * 4
        v = rng.standard_normal(3)
        z = B @ v
        ref = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
        p = erm.predict_proba(HeadParams(B), v)
        np.testing.assert_allclose(p, ref, atol=1e-12)
        assert abs(p.sum() - 1.0) <= 1e-12 and np.all(p > 0)


def test_predict_ties_go_to_lowest_index():
    assert erm.predict(HeadParams.zeros(3, 2), np.array([[1.0, 0.0]]))[0] == 0


def test_predict_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        erm.predict_proba(HeadParams.zeros(3, 4), np.ones(3))


# --- binary head ------------------------------------------------------------


def test_binary_identical_sets_score_half(rng):
    X = unit_ball_rows(rng, 12, 3)
    res = erm.fit_binary(X, X, 0.5)
    np.testing.assert_allclose(erm.score_binary(res.params, X), 0.5, atol=1e-8)


def test_binary_reflection_matches_grid_search():
    s = 1 / math.sqrt(2)
    pos = np.array([[s, s]])
    neg = np.array([[s, -s]])
    res = erm.fit_binary(pos, neg, 1.0, tolerance=1e-12)
    X = np.vstack([pos, neg])
    y = np.array([1.0, 0.0])

    def J(w):
        return erm.binary_value_grad(np.asarray(w), X, y, 1.0)[0]

    # the reflection symmetry pins the bias weight at 0; search the feature weight
    best = None
    for lo, hi, n in [(-2, 2, 4001), (-1e-3, 1e-3, 2001)]:
        centre = 0.0 if best is None else best
        grid = np.linspace(centre + lo, centre + hi, n)
        best = grid[int(np.argmin([J([0.0, g]) for g in grid]))]
    np.testing.assert_allclose(res.params.matrix[0], [0.0, best], atol=1e-4)


def test_score_binary_cases(rng):
    assert erm.score_binary(HeadParams.zeros(1, 2), np.array([1.0, 0.0])) == 0.5
    assert erm.score_binary(HeadParams(np.array([[math.log(3), 0.0]])), np.array([1.0, 0.0])) == pytest.approx(0.75, abs=1e-15)
    for _ in range(50):
        w = rng.standard_normal(4) * 5
        x = rng.standard_normal(4)
        ref = 1 / (1 + math.exp(-float(w @ x)))
        assert abs(erm.score_binary(HeadParams(w[None, :]), x) - ref) <= 1e-15


@given(z=st.floats(-1e6, 1e6))
def test_score_binary_strictly_inside_unit_interval(z):
    s = erm.score_binary(HeadParams(np.array([[z, 0.0]])), np.array([1.0, 0.0]))
    assert 0.0 < s < 1.0


def test_score_binary_requires_single_row():
    with pytest.raises(ValueError):
        erm.score_binary(HeadParams.zeros(2, 2), np.array([1.0, 0.0]))


def test_binary_gradient_matches_finite_differences(rng):
    X = unit_ball_rows(rng, 9, 3)
    y = rng.integers(0, 2, 9).astype(float)
    w = rng.standard_normal(4)
    _, g = erm.binary_value_grad(w, X, y, 0.3)
    h = 1e-6
    num = np.array([(erm.binary_value_grad(w + h * e, X, y, 0.3)[0] - erm.binary_value_grad(w - h * e, X, y, 0.3)[0]) / (2 * h)
                    for e in np.eye(4)])
    assert np.linalg.norm(g - num) <= 1e-5 * np.linalg.norm(g)
