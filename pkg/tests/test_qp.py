import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from pceuc.qp import (
    INFEASIBLE,
    MAX_ITER,
    AdmmSolver,
    QpError,
    QpProblem,
    QpSettings,
    QpSolution,
    kkt_residuals,
    solve,
    within_tolerance,
)


def scalar_problem(lo, hi):
    # (x - 3)^2 = x^2 - 6x + 9
    return QpProblem(sp.csc_matrix([[2.0]]), np.array([-6.0]), sp.csc_matrix([[1.0]]),
                     np.array([lo]), np.array([hi]))


def test_interior_optimum():
    s = solve(scalar_problem(0, 10))
    assert s.solved
    assert abs(s.x[0] - 3) < 1e-6 and abs(s.y[0]) < 1e-6


def test_upper_bound_dual_sign():
    s = solve(scalar_problem(0, 2))
    assert abs(s.x[0] - 2) < 1e-8
    assert abs(s.y[0] - 2) < 1e-6  # active upper bound: nonnegative multiplier


def test_lower_bound_dual_sign():
    s = solve(scalar_problem(5, 10))
    assert abs(s.x[0] - 5) < 1e-8
    assert abs(s.y[0] + 4) < 1e-6


def test_zero_problem():
    p = QpProblem(sp.csc_matrix((2, 2)), np.zeros(2), sp.csc_matrix((1, 2)),
                  np.array([-np.inf]), np.array([np.inf]))
    cand = QpSolution(np.zeros(2), np.zeros(1), "solved", 0, 0.0)
    assert kkt_residuals(p, cand) == (0.0, 0.0, 0.0)
    s = solve(p)
    assert s.solved and np.allclose(s.x, 0)


def random_pd(rng, n):
    M = rng.normal(size=(n, n))
    return M @ M.T + 0.5 * np.eye(n)


@given(st.integers(0, 10 ** 6))
def test_equality_qp_matches_dense_kkt(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    m = int(rng.integers(1, n))
    P = random_pd(rng, n)
    q = rng.normal(size=n) * 5
    A = rng.normal(size=(m, n))
    b = rng.normal(size=m) * 3
    K = np.block([[P, A.T], [A, np.zeros((m, m))]])
    ref = np.linalg.solve(K, np.concatenate([-q, b]))
    s = solve(QpProblem(sp.csc_matrix(P), q, sp.csc_matrix(A), b, b))
    assert s.solved
    assert np.max(np.abs(s.x - ref[:n])) <= 1e-6
    assert np.max(np.abs(s.y - ref[n:])) <= 1e-6 * max(1.0, np.max(np.abs(ref[n:])))


def brute_force_qp(P, q, A, l, u):
    """Exact optimum by enumerating every active-set assignment."""
    n, m = P.shape[0], A.shape[0]
    best = None
    for pattern in itertools.product((None, "l", "u"), repeat=m):
        rows = [j for j in range(m) if pattern[j] is not None]
        if any(not np.isfinite((l if pattern[j] == "l" else u)[j]) for j in rows):
            continue
        Ar = A[rows]
        br = np.array([(l if pattern[j] == "l" else u)[j] for j in rows])
        K = np.block([[P, Ar.T], [Ar, np.zeros((len(rows), len(rows)))]])
        try:
            sol = np.linalg.solve(K, np.concatenate([-q, br]))
        except np.linalg.LinAlgError:
            continue
        x = sol[:n]
        Ax = A @ x
        if np.all(Ax >= l - 1e-9) and np.all(Ax <= u + 1e-9):
            val = 0.5 * x @ P @ x + q @ x
            if best is None or val < best[0]:
                best = (val, x)
    return best


@given(st.integers(0, 10 ** 6))
def test_inequality_qp_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 5))
    P = random_pd(rng, n)
    q = rng.normal(size=n) * 4
    A = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    c = A @ x0
    l = c - rng.uniform(0, 2, size=m)
    u = c + rng.uniform(0, 2, size=m)
    l[rng.random(m) < 0.2] = -np.inf
    u[rng.random(m) < 0.2] = np.inf
    val, x = brute_force_qp(P, q, A, l, u)
    prob = QpProblem(sp.csc_matrix(P), q, sp.csc_matrix(A), l, u)
    s = solve(prob)
    assert s.solved
    assert abs(s.objective - val) <= 1e-6 * max(1.0, abs(val))
    assert np.max(np.abs(s.x - x)) <= 1e-5
    prim, dual, comp = kkt_residuals(prob, s)
    assert within_tolerance(prob, s)
    assert comp <= 1e-6 * max(1.0, np.max(np.abs(s.y)))
    assert abs(s.objective - prob.objective(s.x)) <= 1e-9 * max(1.0, abs(s.objective))


def test_warm_start_identical_problem_is_immediate():
    rng = np.random.default_rng(3)
    P = random_pd(rng, 5)
    A = rng.normal(size=(4, 5))
    prob = QpProblem(sp.csc_matrix(P), rng.normal(size=5), sp.csc_matrix(A),
                     -np.ones(4), np.ones(4))
    solver = AdmmSolver(prob)
    first = solver.solve()
    again = solver.solve(first)
    assert again.solved and again.iterations <= 5


def test_warm_start_after_bound_change():
    prob = scalar_problem(0, 10)
    solver = AdmmSolver(prob)
    s = solver.solve()
    solver.update(u=np.array([2.0]))
    s2 = solver.solve(s)
    assert s2.solved and abs(s2.x[0] - 2) < 1e-8


def test_perturbation_raises_dual_residual():
    prob = scalar_problem(0, 10)
    s = solve(prob)
    bad = QpSolution(s.x + 1, s.y, s.status, 0, 0.0)
    assert kkt_residuals(prob, bad)[1] > 1.0


def test_iteration_cap_reports_max_iter():
    rng = np.random.default_rng(0)
    P = random_pd(rng, 6)
    A = rng.normal(size=(5, 6))
    prob = QpProblem(sp.csc_matrix(P), rng.normal(size=6) * 100, sp.csc_matrix(A),
                     -np.ones(5), np.ones(5))
    s = solve(prob, settings=QpSettings(max_iter=5, polish=False))
    assert s.status == MAX_ITER and s.iterations == 5


def test_infeasible_detected():
    A = sp.csc_matrix([[1.0], [1.0]])
    prob = QpProblem(sp.csc_matrix([[1.0]]), np.zeros(1), A, np.array([2.0, -np.inf]),
                     np.array([np.inf, 1.0]))
    assert solve(prob).status == INFEASIBLE


def test_validation():
    P = sp.csc_matrix(np.eye(2))
    A = sp.csc_matrix(np.eye(2))
    with pytest.raises(QpError):
        QpProblem(P, np.zeros(3), A, np.zeros(2), np.ones(2))
    with pytest.raises(QpError):
        QpProblem(P, np.zeros(2), A, np.ones(2), np.zeros(2))
    with pytest.raises(QpError):
        QpProblem(sp.csc_matrix([[1.0, 1.0], [0.0, 1.0]]), np.zeros(2), A, np.zeros(2), np.ones(2))
    with pytest.raises(QpError):
        QpProblem(-P, np.zeros(2), A, np.zeros(2), np.ones(2))
    prob = QpProblem(P, np.zeros(2), A, np.zeros(2), np.ones(2))
    with pytest.raises(QpError):
        AdmmSolver(prob).solve(QpSolution(np.zeros(3), np.zeros(2), "solved", 0, 0.0))
