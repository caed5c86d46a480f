"""Short-recurrence solvers: BiCGStab and IDR(s).

Both are right preconditioned and report the residual at exit explicitly
(one audit product) so the caller can restart from a true residual.
"""
from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from .linalg import InstrumentedOperator
from .trace import SolveTrace

__all__ = ["bicgstab", "idr_s", "InnerResult"]

_TINY = 1e-300
_MORESTEPS = 5      # residual replacements before giving up


@dataclasses.dataclass
class InnerResult:
    x: np.ndarray
    r: np.ndarray
    status: str              # converged | maxit | breakdown | stagnated
    resnorm: float           # explicit ||b - A x|| at exit
    estimate: float          # recursive estimate at exit
    mvps: int
    history: list

    @property
    def residual_gap(self) -> bool:
        """True residual more than 10x the recursive estimate."""
        return self.resnorm > 10 * max(self.estimate, _TINY)


def _true_residual(op, b, x):
    r = op.residual(b, x)
    return r, op.vec.norm(r)


def _finish(op, b, x, status, est, mvp0, history, trace, phase, cycle, level,
            true_r=None):
    r, rn = true_r if true_r is not None else _true_residual(op, b, x)
    if trace is not None:
        trace.record(phase + "-exit", cycle, op.counter, rn, level)
    return InnerResult(x, r, status, rn, est, op.counter.mvp - mvp0, history)


def bicgstab(op: InstrumentedOperator, x0, b, rtol: float, max_mvp: int = 10 ** 6,
             r0=None, trace: Optional[SolveTrace] = None, phase: str = "bicgstab",
             cycle: int = 0, level: str = "fine") -> InnerResult:
    """BiCGStab until ``||r|| <= rtol * ||r_start||``.

    Convergence is tested after the half step as well as the full step.
    When the recursive residual meets the target, the true residual is
    computed (an audit product); if it misses, it replaces the recursive
    one and the iteration goes on, at most five times.  Per iteration:
    2 products and 13 vector operations.
    """
    vec = op.vec
    mvp0 = op.counter.mvp
    x = np.array(x0, dtype=float)
    r = op.residual(b, x) if r0 is None else np.array(r0, dtype=float)
    normr = vec.norm(r)
    target = rtol * normr
    history = [normr]
    if trace is not None:
        trace.record(phase, cycle, op.counter, normr, level)
    if normr <= target or normr == 0.0:
        return InnerResult(x, r, "converged", normr, normr, 0, history)
    rt = r.copy()
    rho = alpha = omega = 1.0
    p = v = None
    status = "maxit"
    moresteps = 0
    true_r = None
    while op.counter.mvp - mvp0 + 1 <= max_mvp:
        rho1 = rho
        rho = vec.dot(rt, r)
        if abs(rho) <= _TINY or not np.isfinite(rho):
            status = "breakdown"
            break
        if p is None:
            p = r.copy()
        else:
            beta = (rho / rho1) * (alpha / omega)
            p = vec.axpy(beta, vec.axpy(-omega, v, p), r)
        ph = op.psolve(p)
        v = op.matvec(ph)
        rtv = vec.dot(rt, v)
        if abs(rtv) <= _TINY or not np.isfinite(rtv):
            status = "breakdown"
            break
        alpha = rho / rtv
        x = vec.axpy(alpha, ph, x)
        s = vec.axpy(-alpha, v, r)
        normr = vec.norm(s)
        history.append(normr)
        if trace is not None:
            trace.record(phase, cycle, op.counter, normr, level)
        if normr <= target:
            s, normr = _true_residual(op, b, x)
            if normr <= target:
                status, true_r = "converged", (s, normr)
                break
            moresteps += 1
            if moresteps >= _MORESTEPS:
                r, status = s, "stagnated"
                break
        if op.counter.mvp - mvp0 + 1 > max_mvp:
            r = s
            break
        sh = op.psolve(s)
        t = op.matvec(sh)
        tt = vec.dot(t, t)
        if tt <= _TINY:
            r = s
            status = "breakdown"
            break
        omega = vec.dot(t, s) / tt
        x = vec.axpy(omega, sh, x)
        r = vec.axpy(-omega, t, s)
        normr = vec.norm(r)
        history.append(normr)
        if trace is not None:
            trace.record(phase, cycle, op.counter, normr, level)
        if normr <= target:
            r, normr = _true_residual(op, b, x)
            if normr <= target:
                status, true_r = "converged", (r, normr)
                break
            moresteps += 1
            if moresteps >= _MORESTEPS:
                status = "stagnated"
                break
        if abs(omega) <= _TINY:
            status = "breakdown"
            break
    return _finish(op, b, x, status, history[-1], mvp0, history, trace, phase, cycle,
                   level, true_r)


def _shadow_space(n, s, seed):
    P = np.random.default_rng(seed).standard_normal((n, s))
    Q, R = np.linalg.qr(P)
    if np.min(np.abs(np.diag(R))) <= 1e-12 * np.max(np.abs(np.diag(R))):
        return None
    return Q.T.copy()


def idr_s(op: InstrumentedOperator, x0, b, s: int = 4, rtol: float = 1e-8,
          max_mvp: int = 10 ** 6, seed: int = 0, r0=None,
          trace: Optional[SolveTrace] = None, phase: str = "idr", cycle: int = 0,
          level: str = "fine", angle: float = 0.7) -> InnerResult:
    """IDR(s) with bi-orthogonalisation (the van Gijzen-Sonneveld variant).

    The shadow space is s orthonormalised standard-normal vectors drawn from
    ``seed``; if it is degenerate it is redrawn once from ``seed + 1``.
    Each cycle costs s+1 products.
    """
    if s < 1:
        raise ValueError("s must be >= 1")
    vec = op.vec
    mvp0 = op.counter.mvp
    n = op.n
    x = np.array(x0, dtype=float)
    r = op.residual(b, x) if r0 is None else np.array(r0, dtype=float)
    normr = vec.norm(r)
    target = rtol * normr
    history = [normr]
    if trace is not None:
        trace.record(phase, cycle, op.counter, normr, level)
    if normr <= target or normr == 0.0:
        return InnerResult(x, r, "converged", normr, normr, 0, history)
    P = _shadow_space(n, s, seed)
    if P is None:
        P = _shadow_space(n, s, seed + 1)
        if P is None:
            return _finish(op, b, x, "breakdown", normr, mvp0, history, trace,
                           phase, cycle, level)
    G = np.zeros((s, n))
    U = np.zeros((s, n))
    M = np.eye(s)
    om = 1.0
    status = "maxit"

    def budget_left():
        return op.counter.mvp - mvp0 < max_mvp

    done = False
    while not done and budget_left():
        f = P @ r
        vec.counter.vops += s
        for k in range(s):
            c = np.linalg.solve(M[k:, k:], f[k:])
            v = r - c @ G[k:]
            vec.counter.vops += s - k
            v = op.psolve(v)
            U[k] = c @ U[k:] + om * v
            vec.counter.vops += s - k + 1
            G[k] = op.matvec(U[k])
            for i in range(k):
                a = (P[i] @ G[k]) / M[i, i]
                G[k] = G[k] - a * G[i]
                U[k] = U[k] - a * U[i]
                vec.counter.vops += 3
            M[k:, k] = P[k:] @ G[k]
            vec.counter.vops += s - k
            if abs(M[k, k]) <= _TINY:
                status = "breakdown"
                done = True
                break
            beta = f[k] / M[k, k]
            r = vec.axpy(-beta, G[k], r)
            x = vec.axpy(beta, U[k], x)
            normr = vec.norm(r)
            history.append(normr)
            if trace is not None:
                trace.record(phase, cycle, op.counter, normr, level)
            if normr <= target:
                status = "converged"
                done = True
                break
            if not budget_left():
                done = True
                break
            if k + 1 < s:
                f[k + 1:] = f[k + 1:] - beta * M[k + 1:, k]
        if done or not budget_left():
            break
        # dimension reduction step
        v = op.psolve(r)
        t = op.matvec(v)
        nt = vec.norm(t)
        ts = vec.dot(t, r)
        if nt == 0.0:
            status = "breakdown"
            break
        rho = abs(ts / (nt * normr))
        om = ts / (nt * nt)
        if rho < angle:
            om = om * angle / rho
        if om == 0.0:
            status = "breakdown"
            break
        r = vec.axpy(-om, t, r)
        x = vec.axpy(om, v, x)
        normr = vec.norm(r)
        history.append(normr)
        if trace is not None:
            trace.record(phase, cycle, op.counter, normr, level)
        if normr <= target:
            status = "converged"
            break
    return _finish(op, b, x, status, normr, mvp0, history, trace, phase, cycle, level)
