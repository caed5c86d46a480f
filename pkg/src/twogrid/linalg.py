"""Sparse and small dense kernels with operation accounting.

Every solver in the package touches length-n vectors only through
:class:`VectorOps` and the system matrix only through
:class:`InstrumentedOperator`, so the counters in :class:`OpCounter` are an
exact record of the work done.
"""
from __future__ import annotations

import dataclasses
import warnings
from typing import Callable, Optional

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
from scipy.linalg.blas import daxpy as _daxpy, ddot as _ddot

__all__ = [
    "CsrMatrix", "OpCounter", "VectorOps", "InstrumentedOperator",
    "RankDeficiencyError", "EigenvalueError", "spmv", "dense_least_squares",
    "dense_eig", "orthogonalize", "read_matrix_market", "write_matrix_market",
]

#: reorthogonalise when ||w|| drops below this fraction of its initial norm
DGKS_ETA = 1.0 / np.sqrt(2.0)


class RankDeficiencyError(np.linalg.LinAlgError):
    """Raised when a small dense system is rank deficient.

    The best-effort (minimum norm) solution is attached as ``solution``.
    """

    def __init__(self, msg, solution=None):
        super().__init__(msg)
        self.solution = solution


class EigenvalueError(np.linalg.LinAlgError):
    pass


@dataclasses.dataclass
class CsrMatrix:
    """Compressed sparse row matrix.

    The raw arrays are the source of truth; a scipy view is kept alongside
    them for the actual product.
    """

    nrows: int
    ncols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        self.col_idx = np.asarray(self.col_idx, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.check()
        self._sp = sp.csr_matrix((self.values, self.col_idx, self.row_ptr),
                                 shape=(self.nrows, self.ncols))

    def check(self):
        rp, ci = self.row_ptr, self.col_idx
        if rp.shape != (self.nrows + 1,):
            raise ValueError("row_ptr must have length nrows+1")
        if rp[0] != 0 or rp[-1] != ci.size or ci.size != self.values.size:
            raise ValueError("row_ptr does not match the number of entries")
        if np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if ci.size and (ci.min() < 0 or ci.max() >= self.ncols):
            raise ValueError("column index out of range")
        # strictly increasing columns inside each row
        steps = np.diff(ci)
        row_starts = np.zeros(ci.size, dtype=bool)
        row_starts[rp[1:-1][rp[1:-1] < ci.size]] = True
        if np.any((steps <= 0) & ~row_starts[1:]):
            raise ValueError("column indices must be strictly increasing in a row")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("matrix entries must be finite")

    @classmethod
    def from_scipy(cls, a) -> "CsrMatrix":
        a = sp.csr_matrix(a, dtype=np.float64)
        a.sum_duplicates()
        a.sort_indices()
        return cls(a.shape[0], a.shape[1], a.indptr.copy(), a.indices.copy(),
                   a.data.copy())

    @classmethod
    def from_dense(cls, a) -> "CsrMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=np.float64)))

    def to_scipy(self) -> sp.csr_matrix:
        return self._sp

    def toarray(self) -> np.ndarray:
        return self._sp.toarray()

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def diagonal(self) -> np.ndarray:
        return self._sp.diagonal()

    def transpose(self) -> "CsrMatrix":
        return CsrMatrix.from_scipy(self._sp.T.tocsr())

    def __matmul__(self, x):
        return spmv(self, x)

    def __eq__(self, other):
        if not isinstance(other, CsrMatrix):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.row_ptr, other.row_ptr)
                and np.array_equal(self.col_idx, other.col_idx)
                and np.array_equal(self.values, other.values))


def spmv(A: CsrMatrix, x) -> np.ndarray:
    """y = A x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != A.ncols:
        raise ValueError(f"dimension mismatch: matrix has {A.ncols} columns, "
                         f"vector has length {x.shape[0]}")
    return A.to_scipy() @ x


@dataclasses.dataclass
class OpCounter:
    """Cumulative work counters.

    ``audit`` counts explicit residual recomputations ``b - A x``; they are
    real matrix-vector products but are kept out of the cost model.
    """

    mvp: int = 0
    prec: int = 0
    vops: int = 0
    audit: int = 0

    def reset(self):
        self.mvp = self.prec = self.vops = self.audit = 0

    def snapshot(self) -> "OpCounter":
        return dataclasses.replace(self)

    def __sub__(self, other: "OpCounter") -> "OpCounter":
        return OpCounter(self.mvp - other.mvp, self.prec - other.prec,
                         self.vops - other.vops, self.audit - other.audit)


class VectorOps:
    """Length-n vector kernels; each call adds its cost to ``counter.vops``."""

    def __init__(self, counter: OpCounter):
        self.counter = counter

    def _check(self, x, y):
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"length mismatch: {x.shape[0]} != {y.shape[0]}")

    def dot(self, x, y) -> float:
        self._check(x, y)
        self.counter.vops += 1
        return float(x @ y)

    def norm(self, x) -> float:
        self.counter.vops += 1
        return float(np.linalg.norm(x))

    def axpy(self, a, x, y) -> np.ndarray:
        """Return ``a*x + y``."""
        self._check(x, y)
        self.counter.vops += 1
        return a * x + y

    def scale(self, a, x) -> np.ndarray:
        self.counter.vops += 1
        return a * x

    copy_scaled = scale

    def combine(self, V, c) -> np.ndarray:
        """Return ``sum_i c[i] * V[i]`` for a row-stored block; len(c) vops."""
        c = np.asarray(c)
        self.counter.vops += c.shape[0]
        if c.shape[0] == 0:
            return np.zeros(V.shape[1])
        return c @ V[:c.shape[0]]

    def inner(self, V, x) -> np.ndarray:
        """Return ``V @ x`` for a row-stored block; one dot per row."""
        self.counter.vops += V.shape[0]
        return V @ x


class InstrumentedOperator:
    """System matrix plus optional right preconditioner, with counters.

    ``matvec`` is A v, ``psolve`` is M^{-1} v and ``apply`` is the right
    preconditioned operator A M^{-1} v.  Without a preconditioner ``psolve``
    is the identity and costs nothing.
    """

    def __init__(self, matrix: CsrMatrix, preconditioner=None,
                 counter: Optional[OpCounter] = None):
        self.matrix = matrix
        self.preconditioner = preconditioner
        self.counter = counter if counter is not None else OpCounter()
        self.vec = VectorOps(self.counter)

    @property
    def n(self) -> int:
        return self.matrix.nrows

    def matvec(self, v) -> np.ndarray:
        y = spmv(self.matrix, v)
        self.counter.mvp += 1
        return y

    def psolve(self, v) -> np.ndarray:
        if self.preconditioner is None:
            return v
        self.counter.prec += 1
        return self.preconditioner.solve(v)

    def apply(self, v) -> np.ndarray:
        return self.matvec(self.psolve(v))

    def residual(self, b, x) -> np.ndarray:
        """Explicit ``b - A x`` counted as an audit product."""
        self.counter.audit += 1
        return b - spmv(self.matrix, x)

    def fresh(self) -> "InstrumentedOperator":
        """Same matrix and preconditioner with a new zeroed counter."""
        return InstrumentedOperator(self.matrix, self.preconditioner)


def orthogonalize(vec: VectorOps, V: np.ndarray, w: np.ndarray,
                  eta: float = DGKS_ETA, reorth: bool = False):
    """Orthogonalise ``w`` against the orthonormal rows of ``V``.

    Modified Gram-Schmidt, one pass of 2j vops plus a norm.  With
    ``reorth`` a second pass is made when the norm drops by more than
    ``eta`` (used for short blocks where full orthogonality matters more
    than cost).

    Returns ``(h, w, beta)``: coefficients, the orthogonalised vector and its
    norm.
    """
    j = V.shape[0]
    w = np.array(w, dtype=np.float64, copy=True)
    if j == 0:
        return np.zeros(0), w, vec.norm(w)
    norm0 = float(np.linalg.norm(w))
    h = _mgs_pass(V, w)
    vec.counter.vops += 2 * j + 1
    beta = float(np.linalg.norm(w))
    if reorth and beta < eta * norm0:
        h += _mgs_pass(V, w)
        vec.counter.vops += 2 * j + 1
        beta = float(np.linalg.norm(w))
    return h, w, beta


def _mgs_pass(V, w):
    # in place on w; blas level 1 avoids temporaries of length n
    h = np.empty(V.shape[0])
    for i in range(V.shape[0]):
        hi = _ddot(V[i], w)
        _daxpy(V[i], w, a=-hi)
        h[i] = hi
    return h


def dense_least_squares(Hbar, rhs) -> np.ndarray:
    """Solve ``min ||rhs - Hbar y||_2`` via Householder QR."""
    Hbar = np.atleast_2d(np.asarray(Hbar, dtype=np.float64))
    rhs = np.asarray(rhs, dtype=np.float64)
    m, k = Hbar.shape
    if rhs.shape[0] != m:
        raise ValueError("rhs length does not match the number of rows")
    if m < k:
        raise ValueError("least squares matrix must have at least as many "
                         "rows as columns")
    if k == 0:
        return np.zeros(0)
    Q, R = scipy.linalg.qr(Hbar, mode="economic")
    diag = np.abs(np.diag(R))
    scale = max(diag.max(), np.abs(R).max())
    if scale == 0 or diag.min() <= 10 * k * np.finfo(float).eps * scale:
        y = np.linalg.lstsq(Hbar, rhs, rcond=None)[0]
        raise RankDeficiencyError("least squares matrix is rank deficient "
                                  "to working precision", solution=y)
    return scipy.linalg.solve_triangular(R, Q.T @ rhs)


def dense_eig(M):
    """Eigen-decomposition of a small real nonsymmetric matrix.

    Returns ``(w, V)`` with unit-norm eigenvector columns.  LAPACK returns
    conjugate pairs next to each other, positive imaginary part first.
    """
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(M)):
        raise EigenvalueError("matrix has non-finite entries")
    try:
        w, V = scipy.linalg.eig(M)
    except np.linalg.LinAlgError as exc:
        raise EigenvalueError(f"QR iteration did not converge: {exc}") from exc
    V = V / np.linalg.norm(V, axis=0)
    return w, V


def conjugate_pair_mask(w, tol=0.0) -> np.ndarray:
    """True where an eigenvalue has a nonzero imaginary part."""
    return np.abs(np.imag(w)) > tol * np.maximum(np.abs(w), 1e-300)


def eig_order(w) -> np.ndarray:
    """Order eigenvalues by ascending magnitude with every conjugate pair
    kept adjacent (positive imaginary part first).

    Relies on LAPACK's convention that pairs are returned adjacently.
    """
    w = np.asarray(w)
    reps, i = [], 0
    while i < w.size:
        if np.imag(w[i]) != 0 and i + 1 < w.size:
            first, second = (i, i + 1) if np.imag(w[i]) > 0 else (i + 1, i)
            reps.append((abs(w[i]), (first, second)))
            i += 2
        else:
            reps.append((abs(w[i]), (i,)))
            i += 1
    reps.sort(key=lambda t: t[0])
    return np.array([j for _, grp in reps for j in grp], dtype=int)


def real_form(w, G):
    """Real basis for eigenvectors: a conjugate pair (g, conj g) becomes the
    columns (Re g, Im g).  Assumes pairs are adjacent."""
    G = np.asarray(G)
    out = np.empty(G.shape, dtype=np.float64)
    i = 0
    k = G.shape[1]
    while i < k:
        if np.imag(w[i]) != 0 and i + 1 < k:
            out[:, i] = G[:, i].real
            out[:, i + 1] = G[:, i].imag
            i += 2
        else:
            out[:, i] = G[:, i].real
            i += 1
    return out


def read_matrix_market(path) -> CsrMatrix:
    return CsrMatrix.from_scipy(scipy.io.mmread(path))


def write_matrix_market(path, A: CsrMatrix, comment: str = ""):
    """Coordinate format, values at 17 significant digits."""
    scipy.io.mmwrite(path, A.to_scipy().tocoo(), comment=comment,
                     field="real", precision=17)
