import numpy as np
import pytest
import scipy.optimize as so
from hypothesis import given, settings
from hypothesis import strategies as st

from ctdispatch.qp import Status, dense_problem, residuals, solve_qp


def test_equality_only():
    # min x^2/2 s.t. x = 1  ->  nu = -1 under L = f + nu (x - 1)
    s = solve_qp(dense_problem([[1.0]], [0.0], A=[[1.0]], b=[1.0]))
    assert s.status is Status.OPTIMAL
    assert s.u == pytest.approx([1.0])
    assert s.nu == pytest.approx([-1.0])


def test_single_inequality_active():
    # min x^2/2 s.t. -x <= -2  ->  x = 2, omega = 2
    s = solve_qp(dense_problem([[1.0]], [0.0], G=[[-1.0]], h=[-2.0]))
    assert s.u == pytest.approx([2.0], abs=1e-7)
    assert s.omega == pytest.approx([2.0], abs=1e-7)


def test_two_unit_static_dispatch():
    p = dense_problem([[1, 0], [0, 2]], [0, 0], A=[[1, 1]], b=[3])
    s = solve_qp(p)
    assert s.u == pytest.approx([2, 1], abs=1e-8)
    assert -s.nu[0] == pytest.approx(2, abs=1e-8)
    assert p.objective(s.u) == pytest.approx(3.0)


def test_linear_program():
    # min -x - y  s.t. x + 2y <= 4, 3x + y <= 6, x, y >= 0  -> (1.6, 1.2)
    G = [[1, 2], [3, 1], [-1, 0], [0, -1]]
    s = solve_qp(dense_problem(None, [-1, -1], G=G, h=[4, 6, 0, 0]))
    assert s.status is Status.OPTIMAL
    assert s.u == pytest.approx([1.6, 1.2], abs=1e-7)


def test_infeasible_detected():
    s = solve_qp(dense_problem([[1.0]], [0.0], G=[[1.0], [-1.0]], h=[0.0, -1.0]), max_iter=200)
    assert s.status is not Status.OPTIMAL


def test_unbounded_detected():
    s = solve_qp(dense_problem(None, [-1.0], G=[[-1.0]], h=[0.0]), max_iter=200)
    assert s.status is not Status.OPTIMAL


def test_tol_must_be_positive():
    with pytest.raises(ValueError):
        solve_qp(dense_problem([[1.0]], [0.0]), tol=0)


def test_backends_agree():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(6, 6))
    p = dense_problem(M @ M.T + np.eye(6), rng.normal(size=6), A=rng.normal(size=(2, 6)), b=rng.normal(size=2),
                      G=np.vstack([np.eye(6), -np.eye(6)]), h=np.full(12, 2.0))
    a = solve_qp(p, backend="dense", tol=1e-10)
    b = solve_qp(p, backend="sparse", tol=1e-10)
    assert np.allclose(a.u, b.u, atol=1e-7)
    assert np.allclose(a.nu, b.nu, atol=1e-6)


@st.composite
def random_qp(draw):
    n = draw(st.integers(2, 6))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    c = rng.normal(size=n) * 3
    me = draw(st.integers(0, 2))
    A = rng.normal(size=(me, n))
    x0 = rng.uniform(-0.5, 0.5, size=n)  # strictly feasible point
    b = A @ x0
    G = np.vstack([np.eye(n), -np.eye(n), rng.normal(size=(2, n))])
    h = G @ x0 + rng.uniform(0.1, 2.0, size=G.shape[0])
    return H, c, A, b, G, h


@given(random_qp())
@settings(max_examples=30)
def test_matches_reference_solver(qp):
    H, c, A, b, G, h = qp
    p = dense_problem(H, c, A=A, b=b, G=G, h=h)
    s = solve_qp(p, tol=1e-10)
    assert s.status is Status.OPTIMAL
    cons = [{"type": "ineq", "fun": lambda u: h - G @ u, "jac": lambda u: -G}]
    if A.shape[0]:
        cons.append({"type": "eq", "fun": lambda u: A @ u - b, "jac": lambda u: A})
    ref = so.minimize(lambda u: 0.5 * u @ H @ u + c @ u, np.zeros(c.size), jac=lambda u: H @ u + c,
                      constraints=cons, method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    assert p.objective(s.u) <= ref.fun + 1e-6 * (1 + abs(ref.fun))
    r = residuals(p, s)
    assert r.max() < 1e-6


@given(random_qp())
@settings(max_examples=30)
def test_weak_duality_on_feasible_iterates(qp):
    H, c, A, b, G, h = qp
    s = solve_qp(dense_problem(H, c, A=A, b=b, G=G, h=h), tol=1e-10)
    for rec in s.history:
        if rec["primal_residual"] < 1e-9 and rec["dual_residual"] < 1e-9:
            assert rec["dual_objective"] <= rec["primal_objective"] + 1e-8 * (1 + abs(rec["primal_objective"]))


@given(random_qp(), st.floats(-1e3, 1e3))
@settings(max_examples=20)
def test_constant_offset_leaves_iterates_unchanged(qp, shift):
    H, c, A, b, G, h = qp
    a = solve_qp(dense_problem(H, c, A=A, b=b, G=G, h=h))
    s = solve_qp(dense_problem(H, c, A=A, b=b, G=G, h=h, offset=shift))
    assert np.array_equal(a.u, s.u) and np.array_equal(a.nu, s.nu)
    assert s.primal_objective == pytest.approx(a.primal_objective + shift)


@given(random_qp(), st.floats(0.1, 10))
@settings(max_examples=20)
def test_scaling_objective_scales_duals(qp, alpha):
    H, c, A, b, G, h = qp
    a = solve_qp(dense_problem(H, c, A=A, b=b, G=G, h=h), tol=1e-10)
    s = solve_qp(dense_problem(alpha * H, alpha * c, A=A, b=b, G=G, h=h), tol=1e-10)
    assert np.allclose(s.u, a.u, atol=1e-6)
    assert np.allclose(s.omega, alpha * a.omega, atol=1e-5 * alpha * (1 + np.max(np.abs(a.omega))))


@given(random_qp())
@settings(max_examples=20)
def test_multipliers_nonnegative(qp):
    H, c, A, b, G, h = qp
    s = solve_qp(dense_problem(H, c, A=A, b=b, G=G, h=h))
    assert np.all(s.omega >= 0) and np.all(s.slack >= 0)
