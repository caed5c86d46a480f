"""Arnoldi-based solvers: restarted GMRES, GMRES-DR and Arnoldi-E.

All solvers work with the right-preconditioned operator ``op.apply``;
solution updates are mapped back through ``op.psolve``.
"""
from __future__ import annotations

import dataclasses
import itertools
from typing import Iterator, List, Optional, Sequence

import numpy as np
import scipy.linalg

from .linalg import (InstrumentedOperator, RankDeficiencyError, dense_eig,
                     dense_least_squares, eig_order, orthogonalize, real_form)
from .trace import SolveTrace
from .transfer import orthonormalize_block, ritz_residuals

__all__ = ["RestartPolicy", "EigRecord", "CycleInfo", "gmres_cycle",
           "gmres_restarted", "gmres_dr", "GmresDRResult", "arnoldi_e_improve",
           "ArnoldiEResult", "harmonic_ritz"]


@dataclasses.dataclass(frozen=True)
class RestartPolicy:
    """Cycle lengths for restarted GMRES.

    ``fixed(m)`` repeats m, ``schedule(lengths)`` cycles through a recorded
    list, ``random(max_len, seed)`` draws uniformly from 1..max_len.
    """

    kind: str
    m: int = 0
    lengths: tuple = ()
    seed: Optional[int] = None

    @classmethod
    def fixed(cls, m: int) -> "RestartPolicy":
        if m < 1:
            raise ValueError("cycle length must be >= 1")
        return cls("fixed", m=m)

    @classmethod
    def schedule(cls, lengths: Sequence[int]) -> "RestartPolicy":
        lengths = tuple(int(v) for v in lengths)
        if not lengths or min(lengths) < 1:
            raise ValueError("schedule needs positive cycle lengths")
        return cls("schedule", lengths=lengths)

    @classmethod
    def random(cls, max_len: int, seed: Optional[int] = 0) -> "RestartPolicy":
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        return cls("random", m=max_len, seed=seed)

    def __iter__(self) -> Iterator[int]:
        if self.kind == "fixed":
            return itertools.repeat(self.m)
        if self.kind == "schedule":
            return itertools.cycle(self.lengths)
        rng = np.random.default_rng(self.seed)
        return (int(rng.integers(1, self.m + 1)) for _ in itertools.count())


@dataclasses.dataclass
class CycleInfo:
    iterations: int
    resnorm: float            # least-squares residual estimate at exit
    V: np.ndarray             # (j+1, n) Arnoldi basis, rows
    H: np.ndarray             # (j+1, j) Hessenberg matrix
    estimates: List[float]
    breakdown: bool = False


def _givens(a, b):
    if b == 0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def gmres_cycle(op: InstrumentedOperator, x0, b, m: int, atol=None, r0=None,
                trace: Optional[SolveTrace] = None, cycle: int = 0,
                phase: str = "gmres", reorth: bool = False):
    """One GMRES(m) cycle from ``x0``.

    ``atol`` enables an early exit once the least-squares residual estimate
    drops to it; ``r0`` skips the explicit initial residual.  ``reorth``
    adds the conditional second Gram-Schmidt pass (and its vops).  Returns
    ``(x, r, CycleInfo)`` where ``r`` is the recursively updated residual.
    """
    if m < 1:
        raise ValueError("cycle length must be >= 1")
    vec = op.vec
    r = op.residual(b, x0) if r0 is None else r0
    beta = vec.norm(r)
    n = r.shape[0]
    m = min(m, n)
    if beta == 0.0:
        return np.array(x0, dtype=float), r, CycleInfo(0, 0.0, np.zeros((1, n)),
                                                        np.zeros((1, 0)), [])
    V = np.empty((m + 1, n))
    H = np.zeros((m + 1, m))
    R = np.zeros((m + 1, m))
    cs, sn = np.zeros(m), np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = vec.scale(1.0 / beta, r)
    estimates = []
    j = 0
    breakdown = False
    for j in range(m):
        w = op.apply(V[j])
        h, w, hn = orthogonalize(vec, V[:j + 1], w, reorth=reorth)
        H[:j + 1, j] = h
        H[j + 1, j] = hn
        col = H[:j + 2, j].copy()
        for i in range(j):
            t = cs[i] * col[i] + sn[i] * col[i + 1]
            col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1]
            col[i] = t
        cs[j], sn[j] = _givens(col[j], col[j + 1])
        col[j] = cs[j] * col[j] + sn[j] * col[j + 1]
        col[j + 1] = 0.0
        R[:j + 2, j] = col
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        est = abs(g[j + 1])
        estimates.append(est)
        if trace is not None:
            trace.record(phase, cycle, op.counter, est)
        if hn <= 1e-14 * np.linalg.norm(h):
            breakdown = True
            break
        V[j + 1] = vec.scale(1.0 / hn, w)
        if atol is not None and est <= atol:
            break
    jj = j + 1
    Hs = H[:jj + 1, :jj]
    rhs = np.zeros(jj + 1)
    rhs[0] = beta
    try:
        y = dense_least_squares(Hs, rhs)
    except RankDeficiencyError as exc:
        y = exc.solution
    dx = op.psolve(vec.combine(V, y))
    x = vec.axpy(1.0, dx, x0)
    s = rhs - Hs @ y
    if breakdown:
        r = vec.combine(V, s[:jj])
    else:
        r = vec.combine(V, s)
    info = CycleInfo(jj, estimates[-1], V[:jj + 1] if not breakdown else V[:jj],
                     Hs, estimates, breakdown)
    return x, r, info


def gmres_restarted(op: InstrumentedOperator, x0, b, policy: RestartPolicy,
                    rtol: float, max_mvp: int = 10 ** 6, inner_check: bool = True,
                    r0=None, trace: Optional[SolveTrace] = None,
                    phase: str = "gmres", record_iterations: bool = False,
                    reorth: bool = False):
    """Restarted GMRES with cycle lengths drawn from ``policy``.

    Convergence is ``||r|| <= rtol * ||r0||``.  With ``inner_check`` a cycle
    exits as soon as its residual estimate meets the target; otherwise only
    at cycle ends.  Returns ``(x, trace)``; ``trace.info['r']`` holds the
    final residual vector.
    """
    trace = trace if trace is not None else SolveTrace()
    vec = op.vec
    x = np.array(x0, dtype=float)
    r = op.residual(b, x) if r0 is None else r0
    rnorm = vec.norm(r)
    r0norm = rnorm
    target = rtol * r0norm
    start = op.counter.mvp
    trace.record(phase, 0, op.counter, rnorm)
    lengths = iter(policy)
    cycle = 0
    cycle_lengths = []
    while True:
        if rnorm <= target:
            trace.status = "converged"
            break
        used = op.counter.mvp - start
        if used >= max_mvp:
            trace.status = "maxit"
            break
        m = min(next(lengths), max_mvp - used)
        cycle += 1
        x, r, info = gmres_cycle(op, x, b, m, atol=target if inner_check else None,
                                 r0=r, trace=trace if record_iterations else None,
                                 cycle=cycle, phase=phase, reorth=reorth)
        rnorm = info.resnorm
        cycle_lengths.append(info.iterations)
        trace.record(phase + "-restart", cycle, op.counter, rnorm)
        if info.breakdown and rnorm > target:
            rnorm = vec.norm(r)
    trace.info.update(r=r, cycles=cycle, cycle_lengths=cycle_lengths,
                      r0norm=r0norm, relres=rnorm / r0norm if r0norm else 0.0)
    return x, trace


# ---------------------------------------------------------------------------
# GMRES-DR


@dataclasses.dataclass
class EigRecord:
    """Approximate eigenpair; the vector lives in column(s) of ``block``."""

    theta: complex
    resnorm: float
    block: np.ndarray = dataclasses.field(repr=False, default=None)
    columns: tuple = ()

    @property
    def y(self) -> np.ndarray:
        if len(self.columns) == 2:
            a, c = self.columns
            v = self.block[:, a] + 1j * self.block[:, c]
            return v if self.theta.imag >= 0 else v.conj()
        return self.block[:, self.columns[0]]


def eig_records(values, resnorms, block) -> List[EigRecord]:
    out = []
    i = 0
    k = len(values)
    while i < k:
        if np.imag(values[i]) != 0 and i + 1 < k:
            cols = (i, i + 1)
            out.append(EigRecord(complex(values[i]), float(resnorms[i]), block, cols))
            out.append(EigRecord(complex(values[i + 1]), float(resnorms[i + 1]),
                                 block, cols))
            i += 2
        else:
            out.append(EigRecord(complex(values[i]), float(resnorms[i]), block, (i,)))
            i += 1
    return out


def harmonic_ritz(Hbar: np.ndarray):
    """Harmonic Ritz pairs of an (m+1, m) Arnoldi-like matrix.

    Solves (H + h^2 H^{-T} e_m e_m^T) g = theta g and returns values sorted by
    ascending magnitude, unit eigenvectors g and their residual norms
    ||Hbar g - theta [g; 0]||.
    """
    m = Hbar.shape[1]
    Hm = Hbar[:m, :m]
    hm = Hbar[m, m - 1]
    em = np.zeros(m)
    em[-1] = 1.0
    f = scipy.linalg.solve(Hm.T, em)
    M = Hm.copy()
    M[:, -1] += hm ** 2 * f
    theta, G = dense_eig(M)
    order = eig_order(theta)
    theta, G = theta[order], G[:, order]
    res = np.linalg.norm(Hbar @ G - np.vstack([G * theta, np.zeros((1, m))]),
                         axis=0)
    return theta, G, res


def _keep_count(theta, k):
    """k, or k+1 when position k would split a conjugate pair."""
    if k < len(theta) and np.imag(theta[k - 1]) > 0:
        return k + 1
    return k


@dataclasses.dataclass
class GmresDRResult:
    x: np.ndarray
    r: np.ndarray
    eigs: List[EigRecord]
    trace: SolveTrace
    values: np.ndarray
    resnorms: np.ndarray
    vectors: np.ndarray          # (n, k) real form
    cycles: int
    linear_cycles: Optional[int]  # first cycle meeting rtol
    eig_history: List[np.ndarray]
    audits: list

    @property
    def converged(self) -> bool:
        return self.trace.converged


def gmres_dr(op: InstrumentedOperator, x0, b, m: int, k: int, rtol: float,
             nev: int = 0, rtolev: float = 1e-8, max_cycles: int = 1000,
             r0=None, trace: Optional[SolveTrace] = None, phase: str = "gmres-dr",
             level: str = "fine", audit_every: int = 0,
             reorth: bool = True) -> GmresDRResult:
    """GMRES with deflated restarting, GMRES-DR(m, k).

    Stops once ``||r|| <= rtol ||r0||`` and ``nev`` harmonic Ritz pairs have
    residual norm at most ``rtolev`` (both checked at cycle ends), or after
    ``max_cycles``.  ``audit_every`` > 0 recomputes the eigen residuals
    explicitly every that many cycles (counted as audit products).  The
    conditional second Gram-Schmidt pass (``reorth``) is on by default:
    without it the basis loses orthogonality once the linear residual is
    small and the eigenvector residuals stall.
    """
    n = op.n
    if not (1 <= k < m <= n):
        raise ValueError("need 1 <= k < m <= n")
    if nev > k:
        raise ValueError("nev must not exceed k")
    trace = trace if trace is not None else SolveTrace()
    vec = op.vec
    x = np.array(x0, dtype=float)
    r = op.residual(b, x) if r0 is None else r0
    beta = vec.norm(r)
    r0norm = beta
    trace.record(phase, 0, op.counter, beta, level)
    V = np.empty((m + 1, n))
    H = np.zeros((m + 1, m))
    cvec = np.zeros(m + 1)
    cvec[0] = beta
    if beta == 0:
        trace.status = "converged"
        return GmresDRResult(x, r, [], trace, np.zeros(0), np.zeros(0),
                             np.zeros((n, 0)), 0, 0, [], [])
    V[0] = vec.scale(1.0 / beta, r)
    start = 0
    linear_cycles = None
    eig_history = []
    audits = []
    prev_res = np.inf
    for cycle in range(1, max_cycles + 1):
        for j in range(start, m):
            w = op.apply(V[j])
            h, w, hn = orthogonalize(vec, V[:j + 1], w, reorth=reorth)
            H[:j + 1, j] = h
            H[j + 1, j] = hn
            if hn == 0.0:
                hn = 1e-300  # exact invariant subspace; keep the basis finite
            V[j + 1] = vec.scale(1.0 / hn, w)
        try:
            y = dense_least_squares(H, cvec)
        except RankDeficiencyError as exc:
            y = exc.solution
        x = vec.axpy(1.0, op.psolve(vec.combine(V, y[:m])), x)
        s = cvec - H @ y
        rnorm = float(np.linalg.norm(s))
        theta, G, res = harmonic_ritz(H)
        kk = _keep_count(theta, k)
        eig_history.append(res[:kk].copy())
        trace.record(phase, cycle, op.counter, rnorm, level)
        if audit_every and cycle % audit_every == 0:
            audits.append((cycle, res[:kk].copy(),
                           _explicit_eig_residuals(op, V, theta[:kk], G[:, :kk])))
        lin_ok = rnorm <= rtol * r0norm
        if lin_ok and linear_cycles is None:
            linear_cycles = cycle
        eig_ok = nev == 0 or np.count_nonzero(res[:kk] <= rtolev) >= nev
        stagnant = rnorm >= prev_res * (1 - 1e-14) and not lin_ok
        prev_res = rnorm
        done = (lin_ok and eig_ok) or cycle == max_cycles or (stagnant and nev == 0)
        if done:
            Gr = real_form(theta[:kk], G[:, :kk])
            Y = (Gr.T @ V[:m]).T
            vec.counter.vops += kk * m
            r = vec.combine(V, s)
            if lin_ok and eig_ok:
                trace.status = "converged"
            else:
                trace.status = "stagnated" if stagnant else "maxit"
            trace.info.update(cycles=cycle, linear_cycles=linear_cycles,
                              r0norm=r0norm, relres=rnorm / r0norm)
            return GmresDRResult(x, r, eig_records(theta[:kk], res[:kk], Y), trace,
                                 theta[:kk], res[:kk], Y, cycle, linear_cycles,
                                 eig_history, audits)
        # deflated restart: keep harmonic Ritz vectors plus the residual
        P = np.zeros((m + 1, kk + 1))
        P[:m, :kk] = real_form(theta[:kk], G[:, :kk])
        snorm = np.linalg.norm(s)
        P[:, kk] = s / snorm if snorm > 1e-300 else 0.0
        Pq, Rq = np.linalg.qr(P)
        if abs(Rq[kk, kk]) <= 1e-12 * max(snorm, 1e-300) or snorm <= 1e-300:
            # residual lies in the kept space; continue with v_{m+1}
            P[:, kk] = 0.0
            P[m, kk] = 1.0
            Pq, Rq = np.linalg.qr(P)
        Vnew = Pq.T @ V
        vec.counter.vops += (kk + 1) * (m + 1)
        Hnew = Pq.T @ H @ Pq[:m, :kk]
        V[:kk + 1] = Vnew
        H[:] = 0.0
        H[:kk + 1, :kk] = Hnew
        cvec[:] = 0.0
        cvec[:kk + 1] = Pq.T @ s
        start = kk
    raise AssertionError("unreachable")


def _explicit_eig_residuals(op, V, theta, G):
    """||A y - theta y|| with fresh operator products (audit only)."""
    m = G.shape[0]
    out = np.empty(len(theta))
    for i, (t, g) in enumerate(zip(theta, G.T)):
        y = g @ V[:m]
        yr, yi = np.real(y), np.imag(y)
        op.counter.audit += 2
        Ay = op.matrix.to_scipy() @ _psolve_quiet(op, yr) + 1j * (
            op.matrix.to_scipy() @ _psolve_quiet(op, yi))
        out[i] = np.linalg.norm(Ay - t * y) / np.linalg.norm(y)
    return out


def _psolve_quiet(op, v):
    return v if op.preconditioner is None else op.preconditioner.solve(v)


# ---------------------------------------------------------------------------
# Arnoldi-E


@dataclasses.dataclass
class ArnoldiEResult:
    vectors: np.ndarray      # (n, k) real form
    values: np.ndarray
    resnorms: np.ndarray
    cycles: int
    history: List[np.ndarray]
    trace: SolveTrace
    Q: np.ndarray = None
    AQ: np.ndarray = None

    @property
    def eigs(self) -> List[EigRecord]:
        return eig_records(self.values, self.resnorms, self.vectors)


def arnoldi_e_improve(op: InstrumentedOperator, V0, m: int, nev: int,
                      threshold: float, max_cycles: int = 100,
                      target: str = "unconverged", n_targets: int = 10,
                      trace: Optional[SolveTrace] = None,
                      phase: str = "arnoldi-e", level: str = "fine") -> ArnoldiEResult:
    """Refine approximate eigenvectors by restarted Rayleigh-Ritz.

    Each cycle uses Span{y_1..y_k, w, A w, ..., A^{m-k-1} w} where y_i are the
    current Ritz vectors and w is the residual of a target Ritz pair: the
    smallest pair not yet below ``threshold`` (``target='unconverged'``) or
    the pairs 1..n_targets in turn (``target='rotate'``).  Stops when the
    ``nev`` smallest pairs are all below ``threshold`` or after
    ``max_cycles``.  The first cycle costs k extra products for A V0.
    Rayleigh-Ritz needs an orthonormal basis, so Gram-Schmidt always makes
    the conditional second pass here.
    """
    trace = trace if trace is not None else SolveTrace()
    vec = op.vec
    V0 = np.asarray(V0, dtype=float)
    k0 = V0.shape[1]
    if not 1 <= k0 < m:
        raise ValueError("need 1 <= k < m")
    Q, _ = orthonormalize_block(vec, V0)
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
    history = [res.copy()]
    trace.record(phase, 0, op.counter, float(np.max(res[:nev])) if nev else 0.0, level)
    n = op.n

    def converged(res):
        return nev == 0 or bool(np.all(res[:nev] <= threshold))

    cycle = 0
    while not converged(res) and cycle < max_cycles:
        cycle += 1
        kk = _keep_count(theta, min(k0, theta.size))
        Gk = G[:, :kk]
        if target == "rotate":
            t = (cycle - 1) % min(n_targets, kk)
        else:
            bad = np.nonzero(res[:kk] > threshold)[0]
            t = int(bad[0]) if bad.size else 0
        # residual of the target pair, formed in the small space
        gt = Gk[:, t]
        w = (gt @ AQ) - theta[t] * (gt @ Q)
        vec.counter.vops += 2 * Q.shape[0]
        w = np.real(w) if np.linalg.norm(np.real(w)) > 0 else np.imag(w)
        # orthonormal basis of the kept Ritz vectors via the small space
        Gr = real_form(theta[:kk], Gk)
        Qg, _ = np.linalg.qr(Gr)
        Qn = np.empty((m, n))
        AQn = np.empty((m, n))
        Qn[:kk] = Qg.T @ Q
        AQn[:kk] = Qg.T @ AQ
        vec.counter.vops += 2 * kk * Q.shape[0]
        _, w, beta = orthogonalize(vec, Qn[:kk], w, reorth=True)
        if beta == 0:
            break
        Qn[kk] = vec.scale(1.0 / beta, w)
        for i in range(kk, m):
            AQn[i] = op.apply(Qn[i])
            if i + 1 < m:
                _, w, beta = orthogonalize(vec, Qn[:i + 1], AQn[i], reorth=True)
                if beta == 0:
                    m_used = i + 1
                    break
                Qn[i + 1] = vec.scale(1.0 / beta, w)
        else:
            m_used = m
        Q, AQ = Qn[:m_used], AQn[:m_used]
        H = Q @ AQ.T
        vec.counter.vops += m_used * m_used
        theta, G = dense_eig(H)
        order = eig_order(theta)
        theta, G = theta[order], G[:, order]
        kk = _keep_count(theta, k0)
        res_k = ritz_residuals(vec, Q, AQ, theta[:kk], G[:, :kk])
        res = np.concatenate([res_k, np.full(theta.size - kk, np.inf)])
        history.append(res_k.copy())
        trace.record(phase, cycle, op.counter,
                     float(np.max(res[:nev])) if nev else 0.0, level)
    kk = _keep_count(theta, min(k0, theta.size))
    Gr = real_form(theta[:kk], G[:, :kk])
    Y = (Gr.T @ Q).T
    vec.counter.vops += kk * Q.shape[0]
    trace.status = "converged" if converged(res) else "maxit"
    return ArnoldiEResult(Y, theta[:kk], res[:kk], cycle, history, trace, Q, AQ)
