"""Projection over approximate eigenvectors and the deflated drivers.

The drivers alternate a projection over a fixed basis with cycles of an
undeflated solver: GMRES(m)-Proj(k) and the restarted BiCGStab/IDR
variants, whose per-cycle tolerance comes from :func:`cycle_tolerance`.
"""
from __future__ import annotations

import dataclasses
import warnings
from typing import Optional

import numpy as np
import scipy.linalg

from .gmres import gmres_cycle
from .linalg import InstrumentedOperator
from .trace import SolveTrace
from .transfer import orthonormalize_block
from .transpose_free import bicgstab, idr_s

__all__ = ["DeflationBasis", "build_basis", "galerkin_project", "minres_project",
           "gmres_proj", "CycleToleranceSchedule", "cycle_tolerance",
           "restarted_proj", "bicgstab_proj", "idr_proj", "SingularBasisError"]


class SingularBasisError(np.linalg.LinAlgError):
    """The projected matrix V^T A V is singular: the basis is defective."""


@dataclasses.dataclass(frozen=True)
class DeflationBasis:
    """Orthonormal V with cached images.

    Rows of ``V``, ``AV`` and ``MV`` are basis vectors, their images under
    the (right preconditioned) operator, and their preconditioned versions
    used to update x.  Immutable once built.
    """

    V: np.ndarray
    AV: np.ndarray
    MV: np.ndarray
    Hg: np.ndarray
    lu_g: Optional[tuple]
    _hm: dict = dataclasses.field(default_factory=dict, repr=False, compare=False)

    @property
    def k(self) -> int:
        return self.V.shape[0]

    @classmethod
    def empty(cls, n: int) -> "DeflationBasis":
        z = np.zeros((0, n))
        return cls(z, z, z, np.zeros((0, 0)), None)

    @property
    def Hm(self) -> np.ndarray:
        if "H" not in self._hm:
            self._hm["H"] = self.AV @ self.AV.T
            self._hm["cho"] = scipy.linalg.cho_factor(self._hm["H"])
        return self._hm["H"]


def build_basis(op: InstrumentedOperator, vectors) -> DeflationBasis:
    """Orthonormalise approximate eigenvectors (n, k) and cache A V.

    Costs exactly k' products with the operator (k' = retained columns).
    """
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2 or vectors.shape[1] == 0 or not np.any(vectors):
        raise ValueError("deflation needs a nonzero block of vectors")
    vec = op.vec
    V, _ = orthonormalize_block(vec, vectors)
    k = V.shape[0]
    MV = np.empty_like(V)
    AV = np.empty_like(V)
    for i in range(k):
        MV[i] = op.psolve(V[i])
        AV[i] = op.matvec(MV[i])
    Hg = V @ AV.T
    vec.counter.vops += k * k
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(Hg, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularBasisError(f"cannot factor V^T A V: {exc}") from exc
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * np.max(np.abs(Hg)):
        raise SingularBasisError("V^T A V is singular; the deflation basis "
                                 "is defective")
    return DeflationBasis(V, AV, MV, Hg, lu)


def galerkin_project(op: InstrumentedOperator, basis: DeflationBasis, x0, r0):
    """Galerkin correction: V^T r = 0 afterwards.  No operator products."""
    if basis.k == 0:
        return x0, r0
    vec = op.vec
    c = vec.inner(basis.V, r0)
    d = scipy.linalg.lu_solve(basis.lu_g, c)
    x = x0 + vec.combine(basis.MV, d)
    r = r0 - vec.combine(basis.AV, d)
    return x, r


def minres_project(op: InstrumentedOperator, basis: DeflationBasis, x0, r0):
    """Minimal-residual correction: (AV)^T r = 0 and ||r|| <= ||r0||."""
    if basis.k == 0:
        return x0, r0
    vec = op.vec
    basis.Hm
    c = vec.inner(basis.AV, r0)
    d = scipy.linalg.cho_solve(basis._hm["cho"], c)
    x = x0 + vec.combine(basis.MV, d)
    r = r0 - vec.combine(basis.AV, d)
    return x, r


_PROJECTIONS = {"galerkin": galerkin_project, "minres": minres_project}


def gmres_proj(op: InstrumentedOperator, x0, b, basis: DeflationBasis, m: int,
               rtol: float, max_cycles: int = 10 ** 5, r0=None,
               projection: str = "galerkin", inner_check: bool = False,
               trace: Optional[SolveTrace] = None, phase: str = "gmres-proj",
               level: str = "fine", ref_norm: Optional[float] = None,
               reorth: bool = False):
    """GMRES(m)-Proj(k): projection, then one GMRES(m) cycle, repeated.

    Convergence ``||r|| <= rtol * ref_norm`` (default ``ref_norm = ||r0||``)
    is checked at cycle ends.  With a nonempty basis the residual is
    recomputed explicitly before each projection (an audit product).
    Returns ``(x, trace)``.
    """
    trace = trace if trace is not None else SolveTrace()
    project = _PROJECTIONS[projection]
    vec = op.vec
    x = np.array(x0, dtype=float)
    r = op.residual(b, x) if r0 is None else r0
    rnorm = vec.norm(r)
    r0norm = rnorm if ref_norm is None else ref_norm
    target = rtol * r0norm
    trace.record(phase, 0, op.counter, rnorm, level)
    cycle = 0
    while rnorm > target and cycle < max_cycles:
        if basis.k:
            if cycle:
                r = op.residual(b, x)
            x, r = project(op, basis, x, r)
            trace.record(phase + "-project", cycle, op.counter, vec.norm(r), level)
        cycle += 1
        x, r, info = gmres_cycle(op, x, b, m, atol=target if inner_check else None,
                                 r0=r, reorth=reorth)
        rnorm = info.resnorm
        trace.record(phase + "-restart", cycle, op.counter, rnorm, level)
    trace.status = "converged" if rnorm <= target else "maxit"
    trace.info.update(r=r, cycles=cycle, r0norm=r0norm, relres=rnorm / r0norm)
    return x, trace


@dataclasses.dataclass(frozen=True)
class CycleToleranceSchedule:
    rtol: float
    ncyc: int
    r0_norm: float

    def __call__(self, icyc: int, r_norm: float) -> float:
        return cycle_tolerance(self, icyc, r_norm)


def cycle_tolerance(sched: CycleToleranceSchedule, icyc: int, r_norm: float) -> float:
    """Relative tolerance for cycle ``icyc`` given the current ``||r||``.

    The smaller of an equal split (in orders of magnitude) of the remaining
    reduction over the remaining cycles, and the reduction needed to be
    icyc/ncyc of the way to ``rtol`` overall.  Returns 0.0 when ``r_norm`` is
    zero (nothing left to do).
    """
    if not 1 <= icyc <= sched.ncyc:
        raise ValueError("icyc must lie in 1..ncyc")
    if r_norm <= 0.0:
        return 0.0
    ratio = sched.r0_norm / r_norm
    first = (sched.rtol * ratio) ** (1.0 / (sched.ncyc - icyc + 1))
    second = ratio * sched.rtol ** (icyc / sched.ncyc)
    return min(first, second)


def restarted_proj(op: InstrumentedOperator, x0, b, basis: DeflationBasis,
                   ncyc: int, rtol: float, inner: str = "bicgstab", s: int = 4,
                   seed: int = 0, max_mvp: int = 10 ** 7, r0=None,
                   projection: str = "galerkin",
                   trace: Optional[SolveTrace] = None, phase: Optional[str] = None,
                   level: str = "fine", inner_solver=None,
                   ref_norm: Optional[float] = None):
    """BiCGStab(ncyc)-Proj(k) / IDR(ncyc)-Proj(k).

    For each of at most ``ncyc`` cycles: project, pick the cycle tolerance,
    run the inner solver to it, and stop as soon as ``||r|| <= rtol ||r0||``
    (tested after the projection and after the inner solve); ``ref_norm``
    replaces ``||r0||`` in that test and in the schedule.  An empty basis
    gives plain restarted BiCGStab/IDR.  ``inner_solver`` replaces the inner
    method (a callable ``(op, x, b, rtol, max_mvp, r0) -> InnerResult``).
    Returns ``(x, trace)``.
    """
    if ncyc < 1:
        raise ValueError("ncyc must be >= 1")
    phase = phase or f"{inner}-proj"
    trace = trace if trace is not None else SolveTrace()
    project = _PROJECTIONS[projection]
    vec = op.vec
    x = np.array(x0, dtype=float)
    r = op.residual(b, x) if r0 is None else r0
    rnorm = vec.norm(r)
    r0norm = rnorm if ref_norm is None else ref_norm
    # the last cycle aims at the target exactly; allow for its rounding
    target = rtol * r0norm * (1 + 8 * np.finfo(float).eps)
    sched = CycleToleranceSchedule(rtol, ncyc, r0norm)
    mvp0 = op.counter.mvp
    trace.record(phase, 0, op.counter, rnorm, level)
    cycle_mvps = []
    breakdowns = 0
    best_before_breakdown = np.inf
    status = "maxit"
    used = 0
    for icyc in range(1, ncyc + 1):
        if basis.k:
            x, r = project(op, basis, x, r)
            rnorm = vec.norm(r)
            trace.record(phase + "-project", icyc, op.counter, rnorm, level)
        if rnorm <= target:
            status = "converged"
            break
        used = icyc
        rticyc = cycle_tolerance(sched, icyc, rnorm)
        budget = max_mvp - (op.counter.mvp - mvp0)
        if budget <= 0:
            break
        start = op.counter.mvp
        if inner_solver is not None:
            res = inner_solver(op, x, b, rticyc, budget, r)
        else:
            # correction form: A d = r from zero keeps the recursive residual
            # gap at eps ||A|| ||d|| rather than eps ||A|| ||x||
            zero = np.zeros_like(x)
            if inner == "bicgstab":
                res = bicgstab(op, zero, r, rticyc, max_mvp=budget, r0=r,
                               cycle=icyc, level=level)
            elif inner == "idr":
                res = idr_s(op, zero, r, s=s, rtol=rticyc, max_mvp=budget,
                            seed=seed + icyc - 1, r0=r, cycle=icyc, level=level)
            else:
                raise ValueError(f"unknown inner solver {inner!r}")
            x = vec.axpy(1.0, res.x, x)
            rr = op.residual(b, x)
            res = dataclasses.replace(res, x=x, r=rr, resnorm=vec.norm(rr))
        cycle_mvps.append(op.counter.mvp - start)
        prev = rnorm
        x, r, rnorm = res.x, res.r, res.resnorm
        trace.record(phase + "-restart", icyc, op.counter, rnorm, level)
        if rnorm <= target:
            status = "converged"
            break
        if res.status == "breakdown":
            if rnorm >= min(prev, best_before_breakdown) and breakdowns:
                status = "breakdown"
                break
            breakdowns += 1
            best_before_breakdown = min(best_before_breakdown, prev)
        else:
            breakdowns = 0
    trace.status = status
    trace.info.update(r=r, cycles=used, cycle_mvps=cycle_mvps, r0norm=r0norm,
                      relres=rnorm / r0norm if r0norm else 0.0)
    return x, trace


def bicgstab_proj(op, x0, b, basis, ncyc, rtol, **kw):
    return restarted_proj(op, x0, b, basis, ncyc, rtol, inner="bicgstab", **kw)


def idr_proj(op, x0, b, basis, ncyc, rtol, s=4, **kw):
    return restarted_proj(op, x0, b, basis, ncyc, rtol, inner="idr", s=s, **kw)
