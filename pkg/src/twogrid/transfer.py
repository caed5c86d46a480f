"""Coarse-to-fine transfer of grid functions and Rayleigh-Ritz on the fine grid."""
from __future__ import annotations

import dataclasses
import warnings

import numpy as np
from scipy.interpolate import make_interp_spline

from .linalg import (InstrumentedOperator, dense_eig, eig_order, orthogonalize,
                     real_form)
from .problems import Grid2D

__all__ = ["TransferOperator", "prolongate", "rayleigh_ritz", "RitzResult",
           "orthonormalize_block"]


@dataclasses.dataclass(frozen=True)
class TransferOperator:
    coarse: Grid2D
    fine: Grid2D
    method: str = "spline"

    def __post_init__(self):
        if self.method not in ("spline", "bilinear"):
            raise ValueError(f"unknown transfer method {self.method!r}")

    def __call__(self, v):
        return prolongate(self, v)


def _interp_axis(data, xc, xf, axis, method):
    if method == "spline":
        # not-a-knot end conditions
        return make_interp_spline(xc, data, k=3, axis=axis)(xf)
    data = np.moveaxis(data, axis, 0)
    pos = np.searchsorted(xc, xf, side="right") - 1
    pos = np.clip(pos, 0, xc.size - 2)
    t = (xf - xc[pos]) / (xc[pos + 1] - xc[pos])
    t = t.reshape((-1,) + (1,) * (data.ndim - 1))
    out = (1 - t) * data[pos] + t * data[pos + 1]
    return np.moveaxis(out, 0, axis)


def prolongate(T: TransferOperator, v) -> np.ndarray:
    """Interpolate coarse interior values (zero on the boundary) to the fine
    interior points.  ``v`` may be a vector or an (n_coarse, k) block."""
    v = np.asarray(v, dtype=np.float64)
    Nc, Nf = T.coarse.N, T.fine.N
    if v.shape[0] != T.coarse.n:
        raise ValueError(f"expected {T.coarse.n} coarse values, got {v.shape[0]}")
    block = v.ndim == 2
    k = v.shape[1] if block else 1
    G = np.zeros((Nc + 2, Nc + 2, k))
    G[1:-1, 1:-1, :] = v.reshape(Nc, Nc, k)
    xc = np.linspace(0.0, 1.0, Nc + 2)
    xf = T.fine.coords()
    G = _interp_axis(G, xc, xf, 1, T.method)  # along x
    G = _interp_axis(G, xc, xf, 0, T.method)  # along y
    out = G.reshape(Nf * Nf, k)
    return out if block else out[:, 0]


def orthonormalize_block(vec, Y, drop_tol=1e-10):
    """Orthonormal rows spanning the columns of ``Y`` (n, k).

    Columns that are dependent to ``drop_tol`` relative to their original
    norm are dropped.  Returns ``(Q, kept)`` with ``Q`` of shape (k', n).
    """
    Y = np.asarray(Y, dtype=np.float64)
    n, k = Y.shape
    Q = np.empty((k, n))
    kept = []
    j = 0
    for i in range(k):
        y = np.ascontiguousarray(Y[:, i])
        nrm = vec.norm(y)
        if nrm == 0:
            continue
        _, w, beta = orthogonalize(vec, Q[:j], y, reorth=True)
        if beta <= drop_tol * nrm:
            continue
        Q[j] = vec.scale(1.0 / beta, w)
        kept.append(i)
        j += 1
    if j < k:
        warnings.warn(f"dropped {k - j} numerically dependent vectors")
    return Q[:j], kept


@dataclasses.dataclass
class RitzResult:
    values: np.ndarray       # complex, ascending |theta|
    vectors: np.ndarray      # real form (n, k): conjugate pairs as (Re, Im)
    resnorms: np.ndarray
    AQ: np.ndarray = None    # (k, n) images of the orthonormal basis
    Q: np.ndarray = None     # (k, n) orthonormal basis

    @property
    def k(self) -> int:
        return self.values.size


def ritz_residuals(vec, Q, AQ, theta, G):
    """||A y - theta y|| / ||y|| for y = Q^T g, with complex g allowed.

    Q and AQ are row-stored (k, n).  Costs 2k vector combinations plus one
    norm per pair.
    """
    k = G.shape[1]
    vec.counter.vops += 2 * k * Q.shape[0] + k
    out = np.empty(k)
    for s in range(0, k, 16):
        g = G[:, s:s + 16]
        Y = g.T @ Q
        R = g.T @ AQ - theta[s:s + 16, None] * Y
        out[s:s + 16] = np.linalg.norm(R, axis=1) / np.linalg.norm(Y, axis=1)
    return out


def rayleigh_ritz(op: InstrumentedOperator, V, sort="magnitude") -> RitzResult:
    """Ritz pairs of ``op`` over the span of the columns of ``V`` (n, k).

    Uses exactly k' products with the operator (k' = retained columns).
    """
    vec = op.vec
    Q, kept = orthonormalize_block(vec, V)
    k = Q.shape[0]
    AQ = np.empty_like(Q)
    for i in range(k):
        AQ[i] = op.apply(Q[i])
    H = Q @ AQ.T
    vec.counter.vops += k * k
    theta, G = dense_eig(H)
    order = eig_order(theta)
    theta, G = theta[order], G[:, order]
    res = ritz_residuals(vec, Q, AQ, theta, G)
    Yr = real_form(theta, G)
    vectors = (Yr.T @ Q).T
    vec.counter.vops += k * k
    return RitzResult(theta, vectors, res, AQ=AQ, Q=Q)
