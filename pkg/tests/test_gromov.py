import math

import numpy as np
import pytest
from _instances import feasible_mask, random_prob, random_symmetric

from maskot import (
    InfeasiblePlan,
    InvalidInput,
    SolverConfig,
    SquaredLoss,
    naive_gw_objective,
    permutation_gw_search,
    pseudo_cost,
    solve_mgwd,
    solve_mwd,
)
from maskot.oracle import naive_pseudo_cost


def _feasible_plan(rng, n, m):
    a, b = random_prob(rng, n), random_prob(rng, m)
    M = feasible_mask(rng, a, b)
    C = rng.uniform(size=(n, m))
    P = np.array(solve_mwd(C, M, a, b, SolverConfig(epsilon=0.2, tau=1e-12, max_iter=100000)).plan)
    return P, M, a, b


def test_loss_decomposition_identity():
    x, y = np.linspace(-2, 2, 9), np.linspace(-1, 3, 9)
    L = SquaredLoss
    assert np.allclose(L.f1(x) + L.f2(y) - L.h1(x) * L.h2(y), L.loss(x, y), atol=1e-14)


def test_pseudo_cost_rejects_infeasible_plan():
    with pytest.raises(InfeasiblePlan):
        pseudo_cost(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5])


def test_pseudo_cost_zero_geometry():
    rng = np.random.default_rng(30)
    P, M, a, b = _feasible_plan(rng, 3, 4)
    assert np.array_equal(pseudo_cost(np.zeros((3, 3)), np.zeros((4, 4)), P, P.sum(1), P.sum(0)), np.zeros((3, 4)))


def test_pseudo_cost_matches_naive_contraction():
    rng = np.random.default_rng(31)
    for _ in range(30):
        n, m = rng.integers(1, 7, size=2)
        P, M, a, b = _feasible_plan(rng, n, m)
        Cx, Cy = random_symmetric(rng, n), random_symmetric(rng, m)
        fact = pseudo_cost(Cx, Cy, P, P.sum(axis=1), P.sum(axis=0), mask=M)
        assert np.max(np.abs(fact - naive_pseudo_cost(Cx, Cy, P))) <= 1e-10
        assert float(np.sum(fact * P)) == pytest.approx(naive_gw_objective(Cx, Cy, P), abs=1e-10)


def test_forced_plan_objective():
    Cx = np.array([[0.0, 0.4], [0.4, 0.0]])
    Cy = np.array([[0.0, 0.9], [0.9, 0.0]])
    M = np.array([[1, 1], [0, 1]])
    half = np.array([0.5, 0.5])
    sol = solve_mgwd(Cx, Cy, M, half, half, SolverConfig(epsilon=0.05))
    forced = np.array([[0.5, 0.0], [0.0, 0.5]])
    assert sol.distance == pytest.approx(naive_gw_objective(Cx, Cy, forced), abs=1e-4)
    assert sol.plan[1, 0] == 0.0


def test_distance_matches_naive_objective():
    rng = np.random.default_rng(32)
    for _ in range(5):
        n, m = rng.integers(2, 6, size=2)
        a, b = random_prob(rng, n), random_prob(rng, m)
        M = feasible_mask(rng, a, b)
        Cx, Cy = random_symmetric(rng, n), random_symmetric(rng, m)
        sol = solve_mgwd(Cx, Cy, M, a, b, SolverConfig(epsilon=0.05))
        assert sol.distance == pytest.approx(naive_gw_objective(Cx, Cy, sol.plan), abs=1e-10)
        assert np.all(sol.plan[~M.astype(bool)] == 0.0)
        assert sol.report.outer_iterations >= 1


def test_permutation_global_check():
    rng = np.random.default_rng(33)
    u = np.full(3, 1 / 3)
    for _ in range(5):
        Cx, Cy = random_symmetric(rng, 3), random_symmetric(rng, 3)
        ref = permutation_gw_search(Cx, Cy)
        sol = solve_mgwd(Cx, Cy, np.ones((3, 3)), u, u, SolverConfig(epsilon=1e-3))
        assert abs(sol.distance - ref) <= 0.02 * ref


@pytest.mark.parametrize("eps", [0.1, 0.01])
@pytest.mark.parametrize("n", [3, 5, 8])
def test_self_distance(eps, n):
    rng = np.random.default_rng(34 + n)
    C = random_symmetric(rng, n)
    M = np.eye(n, dtype=bool) | (rng.uniform(size=(n, n)) < 0.3)
    u = np.full(n, 1 / n)
    sol = solve_mgwd(C, C, M, u, u, SolverConfig(epsilon=eps))
    assert sol.distance <= 5 * eps * math.log(n)


def test_monotone_descent_flag_recorded():
    rng = np.random.default_rng(35)
    Cx, Cy = random_symmetric(rng, 4), random_symmetric(rng, 4)
    u = np.full(4, 0.25)
    sol = solve_mgwd(Cx, Cy, np.ones((4, 4)), u, u, SolverConfig(epsilon=0.05))
    assert isinstance(sol.report.extra["monotone_descent"], bool)
    assert len(sol.objective_trace) == sol.report.outer_iterations


def test_rejects_asymmetric():
    Cx = np.array([[0.0, 1.0], [0.0, 0.0]])
    half = np.array([0.5, 0.5])
    with pytest.raises(InvalidInput):
        solve_mgwd(Cx, Cx.T @ Cx, np.ones((2, 2)), half, half)
