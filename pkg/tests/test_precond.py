import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from twogrid.deflation import DeflationBasis, restarted_proj
from twogrid.linalg import CsrMatrix, OpCounter
from twogrid.precond import PivotError, apply_prec, ilu0_factor
from twogrid.problems import build_biharmonic

from conftest import make_op


def _tridiag(n, rng):
    T = (np.diag(4 + rng.random(n)) + np.diag(rng.standard_normal(n - 1), 1)
         + np.diag(rng.standard_normal(n - 1), -1))
    return T


def test_diagonal_exact(rng):
    d = 1 + rng.random(8)
    F = ilu0_factor(CsrMatrix.from_dense(np.diag(d)))
    np.testing.assert_array_equal(F.L.toarray(), np.eye(8))
    np.testing.assert_array_equal(F.U.toarray(), np.diag(d))
    v = rng.standard_normal(8)
    np.testing.assert_allclose(apply_prec(F, v), v / d, rtol=1e-15)


def test_tridiagonal_is_exact_lu(rng):
    T = _tridiag(40, rng)
    F = ilu0_factor(CsrMatrix.from_dense(T))
    L, U = F.L.toarray(), F.U.toarray()
    assert np.linalg.norm(L @ U - T) <= 1e-13 * np.linalg.norm(T)
    P, Ld, Ud = scipy.linalg.lu(T)
    if np.allclose(P, np.eye(40)):
        np.testing.assert_allclose(L, Ld, atol=1e-12)
    v = rng.standard_normal(40)
    np.testing.assert_allclose(F.solve(v), np.linalg.solve(T, v), rtol=1e-12, atol=1e-12)
    x = rng.standard_normal(40)
    np.testing.assert_allclose(F.solve(T @ x), x, rtol=1e-11, atol=1e-12)


def test_pattern_and_shifted_product():
    _, A, _ = build_biharmonic("1/16")
    F = ilu0_factor(A, shift=0.5)
    S = A.to_scipy() + 0.5 * sp.identity(A.nrows)
    LU = (F.L.to_scipy() @ F.U.to_scipy()).tocsr()
    pattern = S.copy()
    pattern.data[:] = 1.0
    # zero fill: L + U live in the pattern of A + shift I
    lu_pattern = (abs(F.L.to_scipy()) + abs(F.U.to_scipy())).tocsr()
    lu_pattern.data[:] = 1.0
    assert (lu_pattern - lu_pattern.multiply(pattern)).count_nonzero() == 0
    # equal on the pattern
    diff = (LU - S).multiply(pattern)
    assert abs(diff).max() <= 1e-12 * abs(S).max()
    assert F.shift == 0.5


def test_triangular_solves_individually(rng):
    _, A, _ = build_biharmonic("1/12")
    F = ilu0_factor(A, shift=0.5)
    v = rng.standard_normal(A.nrows)
    w = F.solve(v)
    L, U = F.L.toarray(), F.U.toarray()
    y = U @ w
    assert np.linalg.norm(L @ y - v) <= 1e-13 * np.linalg.norm(v)
    np.testing.assert_allclose(w, np.linalg.solve(U, np.linalg.solve(L, v)), rtol=1e-10)


def test_does_not_modify_matrix():
    _, A, _ = build_biharmonic("1/12")
    before = A.values.copy()
    ilu0_factor(A, shift=0.5)
    np.testing.assert_array_equal(A.values, before)


def test_zero_pivot():
    A = CsrMatrix.from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(PivotError, match="larger diagonal shift"):
        ilu0_factor(A)
    F = ilu0_factor(A, shift=2.0)
    assert F.n == 2
    with pytest.raises(ValueError):
        ilu0_factor(CsrMatrix.from_dense(np.ones((2, 3))))


def test_apply_counts(rng):
    F = ilu0_factor(CsrMatrix.from_dense(np.diag([2.0, 4.0])))
    c = OpCounter()
    apply_prec(F, np.ones(2), c)
    apply_prec(F, np.ones(2), c)
    assert c.prec == 2
    with pytest.raises(ValueError):
        F.solve(np.ones(3))


def test_shift_makes_ilu_effective():
    _, A, _ = build_biharmonic("1/48")
    n = A.nrows
    b = np.random.default_rng(0).standard_normal(n)
    used = {}
    for shift in (0.0, 0.5):
        try:
            F = ilu0_factor(A, shift=shift)
        except PivotError:
            used[shift] = np.inf
            continue
        op = make_op(A, F)
        x, tr = restarted_proj(op, np.zeros(n), b, DeflationBasis.empty(n), 1, 1e-8,
                               max_mvp=3000)
        used[shift] = op.counter.mvp if tr.converged else np.inf
    assert np.isfinite(used[0.5])
    assert used[0.5] < used[0.0]
