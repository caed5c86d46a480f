"""The two-grid solve: coarse eigenvectors deflate the fine-grid solver.

Phase 1 runs GMRES-DR on the coarse grid, phase 2 (optional) refines the
prolongated eigenvectors with Arnoldi-E on the fine grid, phase 3 runs a
deflated fine-grid driver started from the prolongated coarse solution,
or from zero when that solution does not reduce the residual.
"""
from __future__ import annotations

import dataclasses
import logging
from typing import Optional

import numpy as np

from .deflation import DeflationBasis, build_basis, gmres_proj, restarted_proj
from .gmres import ArnoldiEResult, GmresDRResult, arnoldi_e_improve, gmres_dr
from .linalg import InstrumentedOperator
from .precond import ilu0_factor
from .problems import ProblemInstance
from .trace import CostModel, SolveTrace, cost, fine_equiv_mvp
from .transfer import RitzResult, TransferOperator, prolongate, rayleigh_ritz

log = logging.getLogger(__name__)

__all__ = ["TwoGridConfig", "TwoGridResult", "CoarseSetup", "PhaseError",
           "coarse_setup", "two_grid_solve", "ENGINES"]

ENGINES = ("gmres", "bicgstab", "idr")


class PhaseError(RuntimeError):
    """A failure inside one phase of the two-grid solve."""

    def __init__(self, phase: str, cause: BaseException):
        super().__init__(f"{phase} phase failed: {cause}")
        self.phase = phase
        self.cause = cause


@dataclasses.dataclass
class TwoGridConfig:
    """Settings for :func:`two_grid_solve`.

    Defaults are the convection-diffusion setup: GMRES-DR(150,100) on the
    coarse grid until 80 pairs reach 1e-8, then GMRES(100)-Proj(100) on
    the fine grid to a relative residual of 1e-10.
    """

    # phase 1
    coarse: bool = True
    coarse_m: int = 150
    coarse_k: int = 100
    nev: int = 80
    rtolev: float = 1e-8
    coarse_rtol: Optional[float] = None      # defaults to rtol
    coarse_max_cycles: int = 2000
    use_coarse_solution: bool = True
    transfer: str = "spline"
    # phase 2
    arnoldi_cycles: int = 0
    arnoldi_m: Optional[int] = None          # defaults to coarse_m
    arnoldi_nev: int = 80
    arnoldi_threshold: float = 1e-3
    arnoldi_target: str = "unconverged"      # or "rotate"
    arnoldi_targets: int = 10
    # phase 3
    engine: str = "gmres"
    m3: int = 100
    ncyc: int = 20
    s: int = 4
    rtol: float = 1e-10
    rtol_ref: str = "r0"                     # rtol relative to ||r0|| or ||b||
    max_cycles: int = 20000
    max_mvp: int = 10 ** 6
    ndefl: Optional[int] = None              # vectors deflated; default all
    projection: str = "galerkin"
    # preconditioning
    precond: str = "none"
    ilu0_shift: float = 0.5
    # second Gram-Schmidt pass in the fine GMRES cycles (costs extra vops);
    # the coarse GMRES-DR always makes it
    reorth: bool = False
    # diagnostics
    ritz_diagnostic: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}")
        if self.precond not in ("none", "ilu0"):
            raise ValueError("precond must be 'none' or 'ilu0'")
        if self.projection not in ("galerkin", "minres"):
            raise ValueError("projection must be 'galerkin' or 'minres'")
        if self.rtol_ref not in ("r0", "b"):
            raise ValueError("rtol_ref must be 'r0' or 'b'")
        if self.rtol <= 0 or self.rtolev <= 0:
            raise ValueError("tolerances must be positive")


@dataclasses.dataclass
class TwoGridResult:
    x: np.ndarray
    trace: SolveTrace
    model: CostModel
    coarse: Optional[GmresDRResult]
    arnoldi: Optional[ArnoldiEResult]
    ritz: Optional[RitzResult]
    basis: DeflationBasis
    phase_mvp: dict          # fine-level products per phase
    relres: float            # explicit ||b - A x|| / ||b||

    @property
    def converged(self) -> bool:
        return self.trace.converged

    @property
    def cost(self) -> float:
        return cost(self.trace, self.model)

    @property
    def fine_equiv_mvp(self) -> float:
        return fine_equiv_mvp(self.trace, self.model)

    @property
    def k(self) -> int:
        return self.basis.k

    @property
    def coarse_cycles(self) -> int:
        return self.coarse.cycles if self.coarse is not None else 0

    @property
    def fine_cycles(self) -> int:
        return self.trace.info.get("cycles", 0)

    def ritz_accuracy(self, count: int) -> float:
        """Largest residual norm among the ``count`` smallest fine-grid Ritz
        pairs of the transferred vectors (NaN without the diagnostic)."""
        if self.ritz is None or self.ritz.k == 0:
            return float("nan")
        return float(np.max(self.ritz.resnorms[:count]))

    def summary(self) -> dict:
        return {
            "status": self.trace.status,
            "coarse_cycles": self.coarse_cycles,
            "coarse_linear_cycles": (self.coarse.linear_cycles
                                     if self.coarse is not None else None),
            "coarse_mvp": self.trace.totals("coarse").mvp,
            "arnoldi_cycles": self.arnoldi.cycles if self.arnoldi else 0,
            "fine_cycles": self.fine_cycles,
            "k": self.k,
            "fine_mvp": self.phase_mvp.get("solve", 0),
            "total_fine_equiv_mvp": self.fine_equiv_mvp,
            "cost": self.cost,
            "relres": self.relres,
            "ritz_accuracy": self.ritz_accuracy(min(self.k, 80)),
        }


def _operator(matrix, cfg: TwoGridConfig) -> InstrumentedOperator:
    prec = ilu0_factor(matrix, cfg.ilu0_shift) if cfg.precond == "ilu0" else None
    return InstrumentedOperator(matrix, prec)


def _phase(name):
    def wrap(fn):
        def run(*a, **kw):
            try:
                return fn(*a, **kw)
            except PhaseError:
                raise
            except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
                raise PhaseError(name, exc) from exc
        return run
    return wrap


@dataclasses.dataclass
class CoarseSetup:
    """Phase 1 output on the fine grid, reusable for several fine solves
    (other engines or right-hand sides) without repeating coarse work."""

    coarse: Optional[GmresDRResult]
    vectors: Optional[np.ndarray]     # prolongated eigenvectors (n, k)
    x0: np.ndarray                    # prolongated coarse solution or zero
    events: list                      # coarse trace events
    ritz: Optional[RitzResult] = None


def coarse_setup(problem: ProblemInstance, cfg: TwoGridConfig) -> CoarseSetup:
    """Run phase 1 and move its eigenvectors and solution to the fine grid."""
    n = problem.fine_grid.n
    if not (cfg.coarse and problem.coarse_matrix is not None):
        return CoarseSetup(None, None, np.zeros(n), [])
    trace = SolveTrace()
    res = _phase("coarse")(_coarse_phase)(problem, cfg, trace)
    T = TransferOperator(problem.coarse_grid, problem.fine_grid, cfg.transfer)
    vectors = prolongate(T, res.vectors)
    if cfg.ndefl is not None:
        vectors = vectors[:, :cfg.ndefl]
    x0 = prolongate(T, res.x) if cfg.use_coarse_solution else np.zeros(n)
    ritz = None
    if cfg.ritz_diagnostic and vectors.shape[1]:
        # separate counter: not part of the solve
        diag = _phase("setup")(_operator)(problem.fine_matrix, cfg)
        ritz = _phase("diagnostic")(rayleigh_ritz)(diag, vectors)
    return CoarseSetup(res, vectors, x0, list(trace.events), ritz)


def two_grid_solve(problem: ProblemInstance, cfg: TwoGridConfig,
                   setup: Optional[CoarseSetup] = None, rhs=None,
                   basis: Optional[DeflationBasis] = None) -> TwoGridResult:
    """Run the coarse, refinement and fine phases; see the module docstring.

    ``setup`` reuses an earlier :func:`coarse_setup` (its coarse events are
    copied into the trace); ``rhs`` replaces the problem's right-hand side,
    in which case the coarse solution is not used as initial guess.  A
    prebuilt ``basis`` (from an earlier result) skips phases 1 and 2 and the
    products that form A V, as for a further right-hand side.  With
    ``cfg.coarse`` False (or no coarse grid in ``problem``) nothing is
    deflated and the fine engine runs alone from a zero initial guess.
    Errors are re-raised as :class:`PhaseError` naming the failing phase.
    """
    if basis is not None:
        setup = CoarseSetup(None, None, np.zeros(problem.fine_grid.n), [])
    elif setup is None:
        setup = coarse_setup(problem, cfg)
    trace = SolveTrace(list(setup.events))
    fine = _phase("setup")(_operator)(problem.fine_matrix, cfg)
    b = problem.rhs if rhs is None else np.asarray(rhs, dtype=float)
    n = fine.n
    bnorm = float(np.linalg.norm(b))
    model = CostModel(problem.nnz_per_row_nominal,
                      problem.coarse_scale if setup.coarse is not None else 1,
                      cfg.precond != "none")
    x0 = setup.x0 if rhs is None else np.zeros(n)
    vectors = setup.vectors
    arn = None
    phase_mvp = {}

    if vectors is not None and vectors.shape[1] and cfg.arnoldi_cycles > 0:
        start = fine.counter.mvp
        arn = _phase("arnoldi-e")(arnoldi_e_improve)(
            fine, vectors, cfg.arnoldi_m or cfg.coarse_m, cfg.arnoldi_nev,
            cfg.arnoldi_threshold, max_cycles=cfg.arnoldi_cycles,
            target=cfg.arnoldi_target, n_targets=cfg.arnoldi_targets,
            trace=trace)
        vectors = arn.vectors
        phase_mvp["arnoldi-e"] = fine.counter.mvp - start

    if basis is not None:
        pass
    elif vectors is not None and vectors.shape[1]:
        start = fine.counter.mvp
        basis = _phase("basis")(build_basis)(fine, vectors)
        phase_mvp["basis"] = fine.counter.mvp - start
        trace.record("basis", 0, fine.counter, np.nan)
    else:
        basis = DeflationBasis.empty(n)

    start = fine.counter.mvp
    r0 = fine.residual(b, x0)
    if np.any(x0) and np.linalg.norm(r0) >= bnorm:
        # the coarse solution is no better than zero (e.g. a random rhs)
        log.info("coarse solution increases the residual; starting from zero")
        x0, r0 = np.zeros(n), b.copy()
    ref = bnorm if cfg.rtol_ref == "b" else None
    x, sub = _phase("solve")(_fine_phase)(fine, x0, b, r0, basis, cfg, ref)
    phase_mvp["solve"] = fine.counter.mvp - start
    trace.extend(sub)
    trace.status = sub.status
    trace.info.update(sub.info)
    relres = float(np.linalg.norm(problem.fine_matrix @ x - b) / bnorm) if bnorm else 0.0
    return TwoGridResult(x, trace, model, setup.coarse, arn, setup.ritz, basis,
                         phase_mvp, relres)


def _coarse_phase(problem, cfg, trace):
    op = _operator(problem.coarse_matrix, cfg)
    bc = problem.coarse_rhs
    k = min(cfg.coarse_k, op.n - 2)
    m = min(cfg.coarse_m, op.n - 1)
    nev = min(cfg.nev, k)
    res = gmres_dr(op, np.zeros(op.n), bc, m, k, cfg.coarse_rtol or cfg.rtol,
                   nev=nev, rtolev=cfg.rtolev, max_cycles=cfg.coarse_max_cycles,
                   trace=trace, phase="coarse-gmres-dr", level="coarse")
    return res


def _fine_phase(op, x0, b, r0, basis, cfg, ref_norm=None):
    if cfg.engine == "gmres":
        # cycles have fixed length, so the product budget caps the cycle count
        max_cycles = min(cfg.max_cycles, max(1, cfg.max_mvp // cfg.m3))
        return gmres_proj(op, x0, b, basis, cfg.m3, cfg.rtol,
                          max_cycles=max_cycles, r0=r0,
                          projection=cfg.projection, reorth=cfg.reorth,
                          ref_norm=ref_norm)
    return restarted_proj(op, x0, b, basis, cfg.ncyc, cfg.rtol, inner=cfg.engine,
                          s=cfg.s, seed=cfg.seed, max_mvp=cfg.max_mvp, r0=r0,
                          projection=cfg.projection, ref_norm=ref_norm)
