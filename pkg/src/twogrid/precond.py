"""Zero-fill incomplete LU with a diagonal shift.

The factor and the triangular solves are compiled with numba; a scipy
triangular solve is about 30x slower at the sizes used here.
"""
from __future__ import annotations

import dataclasses

import numba
import numpy as np
import scipy.sparse as sp

from .linalg import CsrMatrix

__all__ = ["Ilu0Factors", "ilu0_factor", "apply_prec", "PivotError"]


class PivotError(ArithmeticError):
    """A (near) zero pivot was met during ILU(0)."""


@numba.njit(cache=True)
def _ilu0_kernel(n, indptr, indices, data, diag_pos, tol):
    # IKJ variant; ``data`` is overwritten by L (strictly lower, unit
    # diagonal implied) and U (upper incl. diagonal) in A's pattern.
    iw = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        start, end = indptr[i], indptr[i + 1]
        rownorm = 0.0
        for p in range(start, end):
            iw[indices[p]] = p
            rownorm += data[p] * data[p]
        rownorm = np.sqrt(rownorm)
        for p in range(start, end):
            k = indices[p]
            if k >= i:
                break
            lik = data[p] / data[diag_pos[k]]
            data[p] = lik
            for q in range(diag_pos[k] + 1, indptr[k + 1]):
                pos = iw[indices[q]]
                if pos >= 0:
                    data[pos] -= lik * data[q]
        for p in range(start, end):
            iw[indices[p]] = -1
        d = diag_pos[i]
        if d < 0 or abs(data[d]) < tol * rownorm:
            return i
    return -1


@numba.njit(cache=True)
def _lu_solve_kernel(n, indptr, indices, data, diag_pos, v):
    w = v.copy()
    for i in range(n):
        s = w[i]
        for p in range(indptr[i], diag_pos[i]):
            s -= data[p] * w[indices[p]]
        w[i] = s
    for i in range(n - 1, -1, -1):
        s = w[i]
        for p in range(diag_pos[i] + 1, indptr[i + 1]):
            s -= data[p] * w[indices[p]]
        w[i] = s / data[diag_pos[i]]
    return w


@dataclasses.dataclass(frozen=True)
class Ilu0Factors:
    """L and U stored together in the sparsity pattern of A (+ diagonal)."""

    lu: CsrMatrix
    diag_pos: np.ndarray
    shift: float

    @property
    def n(self) -> int:
        return self.lu.nrows

    @property
    def L(self) -> CsrMatrix:
        """Unit lower triangular factor."""
        s = self.lu.to_scipy()
        return CsrMatrix.from_scipy(sp.tril(s, -1, format="csr")
                                    + sp.identity(self.n, format="csr"))

    @property
    def U(self) -> CsrMatrix:
        return CsrMatrix.from_scipy(sp.triu(self.lu.to_scipy(), 0, format="csr"))

    def solve(self, v) -> np.ndarray:
        """w with L U w = v."""
        v = np.ascontiguousarray(v, dtype=np.float64)
        if v.shape != (self.n,):
            raise ValueError(f"expected a vector of length {self.n}")
        a = self.lu
        return _lu_solve_kernel(self.n, a.row_ptr, a.col_idx, a.values,
                                self.diag_pos, v)


def ilu0_factor(A: CsrMatrix, shift: float = 0.0, pivot_tol: float = 1e-14) -> Ilu0Factors:
    """ILU(0) of ``A + shift*I``; A itself is not modified.

    Raises
    ------
    PivotError
        If a pivot is below ``pivot_tol`` times the 2-norm of its row.
    """
    if A.nrows != A.ncols:
        raise ValueError("ILU(0) needs a square matrix")
    n = A.nrows
    S = A.to_scipy().tocsr(copy=True)
    S.setdiag(S.diagonal() + shift)  # inserts missing diagonal entries
    S.sort_indices()
    indptr = S.indptr.astype(np.int64)
    indices = S.indices.astype(np.int64)
    data = S.data.astype(np.float64).copy()
    diag_pos = np.full(n, -1, dtype=np.int64)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    on_diag = np.flatnonzero(rows == indices)
    diag_pos[rows[on_diag]] = on_diag
    bad = _ilu0_kernel(n, indptr, indices, data, diag_pos, pivot_tol)
    if bad >= 0:
        raise PivotError(f"zero or tiny pivot in row {bad} of ILU(0) with "
                         f"shift {shift}; try a larger diagonal shift")
    lu = CsrMatrix(n, n, indptr, indices, data)
    return Ilu0Factors(lu, diag_pos, float(shift))


def apply_prec(F: Ilu0Factors, v, counter=None) -> np.ndarray:
    """Solve L U w = v, counting one preconditioner application."""
    if counter is not None:
        counter.prec += 1
    return F.solve(v)
