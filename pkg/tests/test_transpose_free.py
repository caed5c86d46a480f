import numpy as np
import pytest

from twogrid.problems import build_convection_diffusion
from twogrid.trace import SolveTrace
from twogrid.transpose_free import bicgstab, idr_s

from conftest import make_op, nonsymmetric


@pytest.mark.parametrize("solver", [bicgstab, idr_s])
def test_identity_immediate(rng, solver):
    b = rng.standard_normal(10)
    op = make_op(np.eye(10))
    res = solver(op, np.zeros(10), b, rtol=1e-12)
    assert res.status == "converged"
    np.testing.assert_allclose(res.x, b, atol=1e-13)
    assert res.mvps <= 2


@pytest.mark.parametrize("solver", [bicgstab, idr_s])
def test_small_dense_solve(rng, solver):
    n = 80
    A = nonsymmetric(n, rng)
    b = rng.standard_normal(n)
    res = solver(make_op(A), np.zeros(n), b, rtol=1e-10)
    x = np.linalg.solve(A, b)
    assert res.status == "converged"
    assert np.linalg.norm(res.x - x) <= 1e-9 * np.linalg.norm(x) * 10
    assert not res.residual_gap


def _conv_diff(h="1/40", seed=1):
    _, A, _ = build_convection_diffusion(h)
    b = np.random.default_rng(seed).standard_normal(A.nrows)
    return A, b


def test_bicgstab_costs():
    A, b = _conv_diff()
    op = make_op(A)
    tr = SolveTrace()
    res = bicgstab(op, np.zeros(A.nrows), b, 1e-10, trace=tr)
    assert res.status == "converged"
    assert res.resnorm <= 10 * max(res.estimate, 1e-10 * np.linalg.norm(b))
    # explicit initial and exit residuals are audit products, not mvps
    assert op.counter.mvp == res.mvps and op.counter.audit == 2
    ratio = op.counter.vops / op.counter.mvp
    assert 6.0 <= ratio <= 9.0


def test_bicgstab_residual_replacement(monkeypatch):
    # make the first true-residual check disagree with the recursion: the
    # solver must keep going from the true residual instead of stopping
    A, b = _conv_diff()
    op = make_op(A)
    honest = op.residual
    calls = []

    def residual(bb, x):
        calls.append(1)
        r = honest(bb, x)
        return r + 1e-3 * np.linalg.norm(bb) if len(calls) == 2 else r

    monkeypatch.setattr(op, "residual", residual)
    res = bicgstab(op, np.zeros(A.nrows), b, 1e-10)
    assert res.status == "converged"
    assert np.linalg.norm(b - A.toarray() @ res.x) <= 1e-10 * np.linalg.norm(b)
    assert len(calls) >= 3
    # a residual that can never be met stops after five replacements
    op = make_op(A)
    monkeypatch.setattr(op, "residual", lambda bb, x: np.full(A.nrows, 1.0))
    res = bicgstab(op, np.zeros(A.nrows), b, 1e-10, r0=b)
    assert res.status == "stagnated"


def test_bicgstab_two_mvp_per_iteration():
    A, b = _conv_diff("1/24")
    op = make_op(A)
    tr = SolveTrace()
    bicgstab(op, np.zeros(A.nrows), b, 1e-14, max_mvp=40, trace=tr)
    mv = [e.mvp for e in tr.events if e.phase == "bicgstab"]
    # records after each half step and full step: one product apart
    assert mv == list(range(0, 41))
    for cap in (10, 11):
        op = make_op(A)
        res = bicgstab(op, np.zeros(A.nrows), b, 1e-14, max_mvp=cap)
        assert res.status == "maxit" and op.counter.mvp == cap


def test_idr_costs():
    A, b = _conv_diff()
    op = make_op(A)
    res = idr_s(op, np.zeros(A.nrows), b, s=4, rtol=1e-10, seed=3)
    assert res.status == "converged"
    assert 11.0 <= op.counter.vops / op.counter.mvp <= 15.0
    assert res.resnorm <= 10 * max(res.estimate, 1e-10 * np.linalg.norm(b))


@pytest.mark.parametrize("solver, kw", [(bicgstab, {}), (idr_s, {"s": 4, "seed": 7})])
def test_deterministic(solver, kw):
    A, b = _conv_diff("1/24")
    out = []
    for _ in range(2):
        op = make_op(A)
        tr = SolveTrace()
        res = solver(op, np.zeros(A.nrows), b, rtol=1e-8, trace=tr, **kw)
        out.append((res.history, op.counter, tr.events))
    assert out[0] == out[1]


def test_bicgstab_half_step_exit():
    # A = 2I: the half step x = alpha p already solves the system
    op = make_op(2 * np.eye(5))
    res = bicgstab(op, np.zeros(5), np.ones(5), 1e-12)
    assert res.status == "converged" and res.mvps == 1
    np.testing.assert_allclose(res.x, 0.5)


def test_bicgstab_breakdown_flag():
    # rho_1 = r0.r0 > 0 but (r0, A p) = 0: a rotation by 90 degrees
    A = np.array([[0.0, -1.0], [1.0, 0.0]])
    res = bicgstab(make_op(A), np.zeros(2), np.array([1.0, 0.0]), 1e-12)
    assert res.status == "breakdown"
    assert np.all(np.isfinite(res.x))


def test_idr_validation():
    with pytest.raises(ValueError):
        idr_s(make_op(np.eye(3)), np.zeros(3), np.ones(3), s=0)


def test_idr_seed_changes_path():
    A, b = _conv_diff("1/24")
    h1 = idr_s(make_op(A), np.zeros(A.nrows), b, s=4, rtol=1e-8, seed=1).history
    h2 = idr_s(make_op(A), np.zeros(A.nrows), b, s=4, rtol=1e-8, seed=2).history
    assert h1 != h2


def test_right_preconditioned_residual_is_true_residual(rng):
    class Jacobi:
        def __init__(self, d):
            self.d = d

        def solve(self, v):
            return v / self.d
    n = 60
    A = nonsymmetric(n, rng) + np.diag(np.linspace(1, 20, n))
    b = rng.standard_normal(n)
    for solver in (bicgstab, idr_s):
        op = make_op(A, Jacobi(np.diag(A).copy()))
        res = solver(op, np.zeros(n), b, rtol=1e-10)
        assert np.linalg.norm(b - A @ res.x) <= 1e-9 * np.linalg.norm(b)
        assert op.counter.prec >= op.counter.mvp - 1
