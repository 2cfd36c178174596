import numpy as np
import pytest
from _instances import random_instance, random_symmetric
from scipy.optimize import linear_sum_assignment, linprog

from maskot import Infeasible, TooLarge, exact_mwd, naive_gw_objective, permutation_gw_search
from maskot.oracle import MASS_SCALE, largest_remainder_round

HALF = np.array([0.5, 0.5])


def _linprog_value(C, M, a, b):
    n, m = C.shape
    idx = np.argwhere(M)
    A_eq = np.zeros((n + m, len(idx)))
    for k, (i, j) in enumerate(idx):
        A_eq[i, k] = 1.0
        A_eq[n + j, k] = 1.0
    res = linprog(C[M.astype(bool)], A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    return res.fun if res.status == 0 else None


def test_triangular_mask():
    value, plan = exact_mwd(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[1, 1], [0, 1]]), HALF, HALF)
    assert value == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(plan, [[0.5, 0], [0, 0.5]])


def test_zero_cost_matching():
    value, plan = exact_mwd(np.array([[0.0, 1.0], [1.0, 0.0]]), np.ones((2, 2)), HALF, HALF)
    assert value == 0.0


def test_structural_infeasibility():
    with pytest.raises(Infeasible):
        exact_mwd(np.zeros((2, 2)), np.eye(2), [1.0, 0.0], [0.0, 1.0])


def test_too_large():
    with pytest.raises(TooLarge):
        exact_mwd(np.zeros((65, 2)), np.ones((65, 2)), np.full(65, 1 / 65), HALF)


def test_agrees_with_linprog():
    rng = np.random.default_rng(20)
    for _ in range(40):
        C, M, a, b = random_instance(rng)
        value, plan = exact_mwd(C, M, a, b)
        n, m = C.shape
        assert value == pytest.approx(_linprog_value(C, M, a, b), abs=(n + m) / MASS_SCALE * C.max() + 1e-9)
        assert np.all(plan[~M.astype(bool)] == 0)
        assert np.abs(plan.sum(axis=1) - a).sum() <= n / MASS_SCALE
        assert np.abs(plan.sum(axis=0) - b).sum() <= m / MASS_SCALE


def test_infeasibility_classification_agrees_with_linprog():
    rng = np.random.default_rng(21)
    seen = 0
    for _ in range(60):
        n, m = rng.integers(2, 6, size=2)
        a = rng.dirichlet(np.ones(n))
        a[-1] = 1.0 - a[:-1].sum()
        b = rng.dirichlet(np.ones(m))
        b[-1] = 1.0 - b[:-1].sum()
        M = rng.uniform(size=(n, m)) < 0.35
        if not (M.any(axis=1).all() and M.any(axis=0).all()):
            continue
        C = rng.uniform(size=(n, m))
        ref = _linprog_value(C, M, a, b)
        try:
            exact_mwd(C, M, a, b)
            feasible = True
        except Infeasible:
            feasible = False
        assert feasible == (ref is not None)
        seen += not feasible
    assert seen > 0


def test_assignment_problem():
    rng = np.random.default_rng(22)
    for n in (3, 5, 7):
        C = rng.uniform(size=(n, n))
        r, c = linear_sum_assignment(C)
        value, _ = exact_mwd(C, np.ones((n, n)), np.full(n, 1 / n), np.full(n, 1 / n))
        assert value == pytest.approx(C[r, c].sum() / n, abs=2 * n / MASS_SCALE)


def test_permutation_invariance():
    rng = np.random.default_rng(23)
    C, M, a, b = random_instance(rng, 4, 7)
    s, p = rng.permutation(len(a)), rng.permutation(len(b))
    v1, _ = exact_mwd(C, M, a, b)
    v2, _ = exact_mwd(C[np.ix_(s, p)], M[np.ix_(s, p)], a[s], b[p])
    assert v2 == pytest.approx(v1, abs=(len(a) + len(b)) / MASS_SCALE)


def test_largest_remainder_round():
    assert largest_remainder_round([1 / 3] * 3, 10) == [4, 3, 3]
    assert sum(largest_remainder_round(np.full(7, 1 / 7), MASS_SCALE)) == MASS_SCALE


def test_naive_gw_examples():
    rng = np.random.default_rng(24)
    Cx = random_symmetric(rng, 4)
    assert naive_gw_objective(Cx, Cx, np.eye(4) / 4) == pytest.approx(0.0, abs=1e-15)
    P = rng.uniform(size=(4, 3))
    assert naive_gw_objective(np.zeros((4, 4)), np.zeros((3, 3)), P) == 0.0
    with pytest.raises(TooLarge):
        naive_gw_objective(np.zeros((9, 9)), np.zeros((9, 9)), np.zeros((9, 9)))


def test_naive_gw_matches_loop():
    rng = np.random.default_rng(25)
    Cx, Cy = random_symmetric(rng, 3), random_symmetric(rng, 2)
    P = rng.uniform(size=(3, 2))
    total = 0.0
    for i in range(3):
        for j in range(2):
            for k in range(3):
                for l in range(2):
                    total += (Cx[i, k] - Cy[j, l]) ** 2 * P[i, j] * P[k, l]
    assert naive_gw_objective(Cx, Cy, P) == pytest.approx(total, abs=1e-14)


def test_permutation_search():
    rng = np.random.default_rng(26)
    Cx = random_symmetric(rng, 4)
    assert permutation_gw_search(Cx, Cx) == pytest.approx(0.0, abs=1e-15)
    assert permutation_gw_search(np.zeros((1, 1)), np.zeros((1, 1))) == 0.0
    perm = rng.permutation(4)
    assert permutation_gw_search(Cx, Cx[np.ix_(perm, perm)]) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(TooLarge):
        permutation_gw_search(np.zeros((7, 7)), np.zeros((7, 7)))
