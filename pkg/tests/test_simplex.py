import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from isqed.simplex import (
    IllConditionedWarning, SimplexWeights, SolverError, hull_distance, kkt_residual, project_simplex,
    solve_linear_span_ls, solve_simplex_ls,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_projection_examples():
    assert project_simplex([2.0, 0.0]).tolist() == [1.0, 0.0]
    assert np.allclose(project_simplex([0.6, 0.6]).w, [0.5, 0.5])
    assert np.allclose(project_simplex([0.2, 0.3, 0.5]).w, [0.2, 0.3, 0.5])


@given(arrays(float, st.integers(1, 12), elements=finite))
def test_projection_is_on_simplex_and_idempotent(v):
    w = project_simplex(v).w
    assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-12
    assert np.allclose(project_simplex(w).w, w, atol=1e-12)


@given(arrays(float, st.integers(1, 8), elements=finite), st.integers(0, 1000))
def test_projection_is_nearest_point(v, seed):
    # variational inequality: (v - P v) . (u - P v) <= 0 for any simplex point u
    w = project_simplex(v).w
    u = np.random.default_rng(seed).dirichlet(np.ones(v.size))
    assert (v - w) @ (u - w) <= 1e-9


def test_simplex_weights_validation():
    with pytest.raises(ValueError):
        SimplexWeights([0.5, 0.6])
    with pytest.raises(ValueError):
        SimplexWeights([1.5, -0.5])
    assert SimplexWeights.vertex(3, 1).tolist() == [0.0, 1.0, 0.0]


def test_target_equal_to_a_column_gives_that_vertex():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((50, 4))
    sol = solve_simplex_ls(A, A[:, 2])
    assert np.allclose(sol.weights.w, [0, 0, 1, 0], atol=1e-9)
    assert sol.objective <= 1e-18


def test_closed_form_two_column_oracle():
    # y = 0.3 a + 0.7 b with a, b linearly independent: unique optimum
    rng = np.random.default_rng(1)
    A = rng.standard_normal((30, 2))
    sol = solve_simplex_ls(A, A @ [0.3, 0.7])
    assert np.allclose(sol.weights.w, [0.3, 0.7], atol=1e-10)


def test_all_zero_columns_any_weights_optimal():
    # objective is constant; the solver returns a feasible point with zero KKT residual
    sol = solve_simplex_ls(np.zeros((5, 3)), np.ones(5))
    assert sol.kkt_residual == 0.0
    assert sol.objective == pytest.approx(1.0)


def test_symmetric_columns_split_evenly():
    # columns +a and -a with y orthogonal to a: optimum is the midpoint
    a = np.array([1.0, -1.0, 0.0])
    y = np.array([1.0, 1.0, 5.0])
    sol = solve_simplex_ls(np.column_stack([a, -a]), y)
    assert np.allclose(sol.weights.w, [0.5, 0.5], atol=1e-10)


def test_rank_deficient_gram_warns_only_without_regularisation():
    rng = np.random.default_rng(2)
    a = rng.standard_normal(40)
    A = np.column_stack([a, a, rng.standard_normal(40)])
    with pytest.warns(IllConditionedWarning):
        solve_simplex_ls(A, a)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        solve_simplex_ls(A, a, lam=1e-6)


def test_iteration_cap_raises_with_best_iterate():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((200, 80)) @ np.diag(np.logspace(0, -3, 80))
    y = rng.standard_normal(200)
    with pytest.raises(SolverError) as exc:
        solve_simplex_ls(A, y, tol=1e-300, max_iters=5)
    assert exc.value.best_weights.w.size == 80


def test_input_validation():
    with pytest.raises(ValueError):
        solve_simplex_ls(np.ones((3, 2)), np.ones(4))
    with pytest.raises(ValueError):
        solve_simplex_ls(np.ones((3, 2)), np.ones(3), lam=-1)
    with pytest.raises(ValueError):
        solve_simplex_ls([[np.inf]], [1.0])


@given(
    m=st.integers(1, 40), p=st.integers(1, 10), seed=st.integers(0, 2**32 - 1),
    lam=st.sampled_from([0.0, 1e-6, 1e-2]),
)
def test_solution_is_feasible_and_kkt_optimal(m, p, seed, lam):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, p))
    y = rng.standard_normal(m)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllConditionedWarning)
        sol = solve_simplex_ls(A, y, lam)
    w = sol.weights.w
    assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-12
    assert sol.kkt_residual <= 1e-10
    # no random feasible point does better
    for u in rng.dirichlet(np.ones(p), size=20):
        r = y - A @ u
        assert sol.objective <= r @ r / m + lam * u @ u + 1e-9


def test_kkt_residual_zero_at_vertex_optimum():
    G = np.diag([2.0, 2.0])
    c = np.array([-4.0, 0.0])
    assert kkt_residual(G, c, np.array([1.0, 0.0]), 2.0) == 0.0
    assert kkt_residual(G, c, np.array([0.0, 1.0]), 2.0) > 0


def test_hull_distance_examples():
    assert hull_distance([0.5], [[0.0]])[0] == pytest.approx(0.5)
    d, w = hull_distance([0.5, 0.5], np.eye(2))
    assert d == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(w.w, [0.5, 0.5])
    # peer segment from (0,0) to (1,0); target one unit above its middle
    assert hull_distance([0.5, 1.0], [[0.0, 1.0], [0.0, 0.0]])[0] == pytest.approx(1.0)


@given(d=st.integers(1, 5), p=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_hull_distance_is_zero_inside_and_triangle_bounded(d, p, seed):
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((d, p))
    inside = P @ rng.dirichlet(np.ones(p))
    assert hull_distance(inside, P)[0] <= 1e-7
    t = rng.standard_normal(d)
    dist = hull_distance(t, P)[0]
    assert dist <= min(np.linalg.norm(t - P[:, j]) for j in range(p)) + 1e-9


def test_span_least_squares_is_conservative():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((30, 3))
    y = rng.standard_normal(30)
    _, span_res = solve_linear_span_ls(A, y)
    simplex = solve_simplex_ls(A, y)
    assert span_res <= np.linalg.norm(y - A @ simplex.weights.w) + 1e-12


def test_grid_oracle_three_columns():
    rng = np.random.default_rng(6)
    A = rng.standard_normal((12, 3))
    y = rng.standard_normal(12)
    step = 0.01
    best = min(
        np.sum((y - A @ [a * step, b * step, 1 - (a + b) * step]) ** 2) / 12
        for a, b in itertools.product(range(101), repeat=2) if a + b <= 100
    )
    assert solve_simplex_ls(A, y).objective <= best + 1e-12


def test_duplicate_target_columns_split_by_regulariser():
    # f(w) = lam (w1^2 + w2^2) on the simplex is minimised at (0.5, 0.5)
    y = np.random.default_rng(7).standard_normal(25)
    sol = solve_simplex_ls(np.column_stack([y, y]), y, lam=1e-3)
    assert np.allclose(sol.weights.w, [0.5, 0.5], atol=1e-10)


def test_identity_span_versus_simplex():
    coeffs, res = solve_linear_span_ls(np.eye(2), [1.0, -1.0])
    assert np.allclose(coeffs, [1, -1]) and res == pytest.approx(0.0, abs=1e-12)
    w = solve_simplex_ls(np.eye(2), [1.0, -1.0]).weights.w
    assert np.linalg.norm(np.array([1.0, -1.0]) - w) > 0.5
    assert solve_linear_span_ls(np.ones((3, 2)), np.zeros(3))[1] == 0.0


@given(d=st.integers(1, 4), p=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
def test_hull_distance_ignores_duplicated_peers(d, p, seed):
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((d, p))
    t = rng.standard_normal(d)
    dup = np.column_stack([P, P[:, rng.integers(p, size=3)]])
    assert hull_distance(t, dup)[0] == pytest.approx(hull_distance(t, P)[0], abs=1e-8)


@given(m=st.integers(2, 30), p=st.integers(2, 8), seed=st.integers(0, 2**32 - 1))
def test_partial_derivatives_equal_on_support(m, p, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, p))
    y = rng.standard_normal(m)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllConditionedWarning)
        w = solve_simplex_ls(A, y, 1e-4).weights.w
    grad = -(2 / m) * A.T @ (y - A @ w) + 2e-4 * w
    scale = max(1.0, float(np.abs(grad).max()))
    support = w > 1e-8
    common = grad[support].mean()
    assert np.all(np.abs(grad[support] - common) <= 1e-7 * scale)
    assert np.all(grad[~support] >= common - 1e-7 * scale)


@given(arrays(float, st.integers(1, 6), elements=finite), st.integers(0, 1000))
def test_projection_beats_random_simplex_points(v, seed):
    w = project_simplex(v).w
    for u in np.random.default_rng(seed).dirichlet(np.ones(v.size), size=10):
        assert np.linalg.norm(w - v) <= np.linalg.norm(u - v) + 1e-12


def test_empty_projection_rejected():
    with pytest.raises(ValueError):
        project_simplex([])
