import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecoacc.qp import INFEASIBLE, OPTIMAL, solve_qp


def _random_qp(seed, n, m):
    rng = np.random.default_rng(seed)
    R = rng.normal(size=(n, n))
    G = R @ R.T + n * np.eye(n)
    a = rng.normal(size=n) * 5
    C = rng.normal(size=(m, n))
    x_feas = rng.normal(size=n)
    b = C @ x_feas - rng.uniform(0.0, 1.0, size=m)
    return G, a, C, b


def test_unconstrained():
    G = np.diag([2.0, 4.0])
    a = np.array([-2.0, -4.0])
    res = solve_qp(G, a)
    assert res.status == OPTIMAL
    assert np.allclose(res.x, [1.0, 1.0])
    assert res.objective == pytest.approx(-3.0)


def test_single_active_bound():
    res = solve_qp(np.eye(2) * 2, np.array([-2.0, 0.0]), np.array([[-1.0, 0.0]]), np.array([-0.5]))
    assert res.status == OPTIMAL
    assert np.allclose(res.x, [0.5, 0.0])
    assert res.active == [0]
    assert res.multipliers[0] > 0


def test_detects_infeasible():
    C = np.array([[1.0], [-1.0]])
    b = np.array([1.0, 0.0])  # x >= 1 and x <= 0
    assert solve_qp(np.eye(1), np.zeros(1), C, b).status == INFEASIBLE
    assert solve_qp(np.eye(1), np.zeros(1), np.zeros((1, 1)), np.array([1.0])).status == INFEASIBLE


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 8), m=st.integers(0, 20))
def test_kkt_conditions(seed, n, m):
    G, a, C, b = _random_qp(seed, n, m)
    res = solve_qp(G, a, C, b)
    assert res.status == OPTIMAL
    x = res.x
    assert np.all(C @ x - b >= -1e-7)
    lam = np.zeros(m)
    lam[res.active] = res.multipliers
    assert np.all(lam >= -1e-9)
    assert np.allclose(G @ x + a - C.T @ lam, 0.0, atol=1e-6)
    assert np.allclose(lam * (C @ x - b), 0.0, atol=1e-6)


@pytest.mark.parametrize("seed", range(20))
def test_matches_cvxopt(seed):
    cvxopt = pytest.importorskip("cvxopt")
    from cvxopt import solvers

    solvers.options.update(show_progress=False, abstol=1e-12, reltol=1e-12, feastol=1e-12)
    G, a, C, b = _random_qp(seed, 6, 15)
    ref = solvers.qp(cvxopt.matrix(G), cvxopt.matrix(a), cvxopt.matrix(-C), cvxopt.matrix(-b))
    res = solve_qp(G, a, C, b)
    assert res.status == OPTIMAL
    assert np.allclose(res.x, np.array(ref["x"]).ravel(), atol=1e-5)
