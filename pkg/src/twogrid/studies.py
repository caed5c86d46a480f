"""Canned experiments: each produces summary rows and per-run traces.

Every study has a ``full`` scale (the original problem sizes, minutes to
hours on one core) and a ``desk`` scale (smaller grids, seconds to a few
minutes) that shows the same behaviour.
"""
from __future__ import annotations

import dataclasses
import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .deflation import DeflationBasis, restarted_proj
from .gmres import RestartPolicy, gmres_dr, gmres_restarted
from .linalg import InstrumentedOperator
from .pipeline import TwoGridConfig, TwoGridResult, coarse_setup, two_grid_solve
from .precond import ilu0_factor
from .problems import ProblemInstance, make_pair
from .trace import CostModel, SolveTrace, cost

__all__ = ["STUDIES", "Study", "StudyResult", "run_study", "fine_only"]

log = logging.getLogger(__name__)


@dataclasses.dataclass
class StudyResult:
    name: str
    rows: List[dict] = dataclasses.field(default_factory=list)
    traces: Dict[str, Tuple[SolveTrace, CostModel]] = dataclasses.field(default_factory=dict)
    problems: Dict[str, ProblemInstance] = dataclasses.field(default_factory=dict)
    failed: List[str] = dataclasses.field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed

    def add(self, label: str, row: dict, trace: SolveTrace, model: CostModel,
            primary: bool = True):
        row = {"run": label, **row}
        self.rows.append(row)
        self.traces[label] = (trace, model)
        if primary and trace.status != "converged":
            self.failed.append(label)


@dataclasses.dataclass(frozen=True)
class Study:
    name: str
    description: str
    run: Callable[..., StudyResult]


def fine_only(problem: ProblemInstance, method: str, rtol: float,
              max_mvp: int = 10 ** 6, precond: str = "none", shift: float = 0.5,
              seed: int = 0, **kw):
    """Run an undeflated solver on the fine grid from x0 = 0.

    ``method`` is one of ``bicgstab``, ``idr`` (``s``), ``gmres`` (``m``),
    ``gmres-schedule`` (``lengths``), ``gmres-random`` (``max_len``) or
    ``gmres-dr`` (``m``, ``k``).  Returns ``(x, trace, model, op)``.
    """
    A = problem.fine_matrix
    prec = ilu0_factor(A, shift) if precond == "ilu0" else None
    op = InstrumentedOperator(A, prec)
    b = problem.rhs
    x0 = np.zeros(op.n)
    model = CostModel(problem.nnz_per_row_nominal, 1, prec is not None)
    if method in ("bicgstab", "idr"):
        x, tr = restarted_proj(op, x0, b, DeflationBasis.empty(op.n),
                               kw.get("ncyc", 1), rtol, inner=method,
                               s=kw.get("s", 4), seed=seed, max_mvp=max_mvp)
    elif method == "gmres":
        x, tr = gmres_restarted(op, x0, b, RestartPolicy.fixed(kw["m"]), rtol,
                                max_mvp=max_mvp)
    elif method == "gmres-schedule":
        x, tr = gmres_restarted(op, x0, b, RestartPolicy.schedule(kw["lengths"]),
                                rtol, max_mvp=max_mvp)
    elif method == "gmres-random":
        x, tr = gmres_restarted(op, x0, b, RestartPolicy.random(kw["max_len"], seed),
                                rtol, max_mvp=max_mvp)
    elif method == "gmres-dr":
        m, k = kw["m"], kw["k"]
        res = gmres_dr(op, x0, b, m, k, rtol,
                       max_cycles=max(1, (max_mvp - m) // (m - k) + 1))
        x, tr = res.x, res.trace
        tr.info["cycles"] = res.cycles
    else:
        raise ValueError(f"unknown method {method!r}")
    return x, tr, model, op


def _fine_row(tr: SolveTrace, model: CostModel, op: InstrumentedOperator,
              x, b) -> dict:
    bn = np.linalg.norm(b)
    relres = float(np.linalg.norm(op.matrix @ x - b) / bn) if bn else 0.0
    return {"status": tr.status, "fine_cycles": tr.info.get("cycles", 0),
            "fine_mvp": op.counter.mvp, "total_fine_equiv_mvp": op.counter.mvp,
            "cost": cost(tr, model), "relres": relres}


def _two_grid_row(res: TwoGridResult) -> dict:
    return res.summary()


def _scale(scale, full, desk):
    if scale not in ("full", "desk"):
        raise ValueError("scale must be 'full' or 'desk'")
    return full if scale == "full" else desk


# ---------------------------------------------------------------------------


def table3_1(scale="desk", seed=0, **opts) -> StudyResult:
    """Coarse grid size sweep for two-grid GMRES(100)-Proj(100)."""
    fine, coarse = _scale(scale, ("1/512", ["1/256", "1/128", "1/64", "1/32", "1/16", "1/8"]),
                          ("1/128", ["1/64", "1/32", "1/16", "1/8"]))
    coarse = opts.get("coarse_list", coarse)
    out = StudyResult("table3_1")
    for ch in coarse:
        P = make_pair("convection-diffusion", fine, ch)
        cfg = TwoGridConfig(ritz_diagnostic=True)
        res = two_grid_solve(P, cfg)
        row = {"coarse_n": P.coarse_grid.n, **_two_grid_row(res)}
        out.add(f"coarse_{P.coarse_grid.N + 1}", row, res.trace, res.model)
    if opts.get("baseline", True):
        P = make_pair("convection-diffusion", fine)
        res = two_grid_solve(P, TwoGridConfig(coarse=False))
        out.add("no_coarse", {"coarse_n": 0, **_two_grid_row(res)}, res.trace,
                res.model, primary=False)
    return out


def table4_1(scale="desk", seed=0, **opts) -> StudyResult:
    """Number of cycles ncyc for two-grid BiCGStab(ncyc)-Proj(100)."""
    fine, coarse = _scale(scale, ("1/512", "1/64"), ("1/256", "1/32"))
    ncycs = opts.get("ncyc_list", (5, 10, 15, 20, 30, 50, 100, 150, 200))
    P = make_pair("convection-diffusion", fine, coarse)
    base = TwoGridConfig(engine="bicgstab")
    setup = coarse_setup(P, base)
    out = StudyResult("table4_1")
    for ncyc in ncycs:
        res = two_grid_solve(P, dataclasses.replace(base, ncyc=ncyc), setup)
        out.add(f"ncyc_{ncyc}", {"ncyc": ncyc, **_two_grid_row(res)}, res.trace, res.model)
    return out


def table4_2(scale="desk", seed=0, **opts) -> StudyResult:
    """Restarted BiCGStab without deflation, random right-hand side."""
    fine = _scale(scale, "1/128", "1/64")
    ncycs = opts.get("ncyc_list", (1, 5, 10, 25, 50, 75, 150, 250, 400))
    P = make_pair("convection-diffusion", fine, seed=seed, random_rhs=True)
    out = StudyResult("table4_2")
    for ncyc in ncycs:
        x, tr, model, op = fine_only(P, "bicgstab", 1e-10, ncyc=ncyc)
        cm = tr.info["cycle_mvps"]
        row = {"ncyc": ncyc, **_fine_row(tr, model, op, x, P.rhs),
               "avg_cycle_mvp": float(np.mean(cm)) if cm else 0.0}
        out.add(f"ncyc_{ncyc}", row, tr, model)
    return out


def table4_3(scale="desk", seed=0, **opts) -> StudyResult:
    """GMRES restarted with fixed, BiCGStab-derived and random lengths."""
    fine = _scale(scale, "1/128", "1/64")
    ncycs = opts.get("ncyc_list", (75, 150, 400))
    max_mvp = opts.get("max_mvp", 200000)
    P = make_pair("convection-diffusion", fine, seed=seed, random_rhs=True)
    out = StudyResult("table4_3")
    for ncyc in ncycs:
        x, tr, model, op = fine_only(P, "bicgstab", 1e-10, ncyc=ncyc)
        lengths = [c for c in tr.info["cycle_mvps"] if c > 0]
        avg = float(np.mean(lengths))
        m = max(1, int(round(avg)))
        row = {"ncyc": ncyc, "avg_cycle_length": avg}
        out.add(f"bicgstab_{ncyc}", {**row, "method": "restarted bicgstab",
                                     **_fine_row(tr, model, op, x, P.rhs)}, tr, model)
        for method, kw, label in (("gmres", {"m": m}, f"gmres_fixed_{m}"),
                                  ("gmres-schedule", {"lengths": lengths},
                                   f"gmres_as_bicgstab_{ncyc}"),
                                  ("gmres-random", {"max_len": 2 * m},
                                   f"gmres_random_{2 * m}")):
            x, tr, model, op = fine_only(P, method, 1e-10, max_mvp=max_mvp,
                                         seed=seed, **kw)
            out.add(label, {**row, "method": method,
                            **_fine_row(tr, model, op, x, P.rhs)},
                    tr, model, primary=method == "gmres-schedule")
    return out


def _compare(out, P, rtol, methods, max_mvp, precond="none", seed=0):
    for label, method, kw in methods:
        x, tr, model, op = fine_only(P, method, rtol, max_mvp=max_mvp,
                                     precond=precond, seed=seed, **kw)
        out.add(label, {"method": method, **_fine_row(tr, model, op, x, P.rhs)},
                tr, model,
                primary=False)


def fig3_2(scale="desk", seed=0, **opts) -> StudyResult:
    """Two-grid GMRES against fine-grid GMRES-DR, BiCGStab and IDR(4)."""
    fine, coarse = _scale(scale, ("1/512", "1/64"), ("1/128", "1/16"))
    P = make_pair("convection-diffusion", fine, coarse)
    out = StudyResult("fig3_2")
    res = two_grid_solve(P, TwoGridConfig())
    out.add("two_grid_gmres", {"method": "two-grid gmres(100)-proj(100)",
                               **_two_grid_row(res)}, res.trace, res.model)
    _compare(out, P, 1e-10, [("gmres_dr", "gmres-dr", {"m": 150, "k": 100}),
                             ("bicgstab", "bicgstab", {}),
                             ("idr4", "idr", {"s": 4})], opts.get("max_mvp", 40000),
             seed=seed)
    return out


def fig4_2(scale="desk", seed=0, **opts) -> StudyResult:
    """Two-grid BiCGStab(20)-Proj(100) and a second right-hand side."""
    fine, coarse = _scale(scale, ("1/512", "1/64"), ("1/128", "1/16"))
    P = make_pair("convection-diffusion", fine, coarse)
    out = StudyResult("fig4_2")
    cfg = TwoGridConfig(engine="bicgstab", ncyc=20)
    setup = coarse_setup(P, cfg)
    res = two_grid_solve(P, cfg, setup)
    out.add("two_grid_bicgstab", {"method": "two-grid bicgstab(20)-proj(100)",
                                  **_two_grid_row(res)}, res.trace, res.model)
    res2 = two_grid_solve(P, dataclasses.replace(cfg, engine="gmres"), setup)
    out.add("two_grid_gmres", {"method": "two-grid gmres(100)-proj(100)",
                               **_two_grid_row(res2)}, res2.trace, res2.model)
    b2 = np.random.default_rng(seed).standard_normal(P.fine_grid.n)
    res3 = two_grid_solve(P, cfg, rhs=b2, basis=res.basis)
    out.add("second_rhs", {"method": "deflated bicgstab(20)-proj(100), second rhs",
                           **_two_grid_row(res3)}, res3.trace, res3.model)
    _compare(out, P, 1e-10, [("bicgstab", "bicgstab", {}), ("idr4", "idr", {"s": 4})],
             opts.get("max_mvp", 40000), seed=seed)
    return out


def fig5_1(scale="desk", seed=0, **opts) -> StudyResult:
    """Helmholtz: two-grid GMRES and IDR against IDR(4) and GMRES-DR."""
    fine, coarse, kappa = _scale(scale, ("1/512", "1/128", 100.0), ("1/256", "1/64", 50.0))
    kappa = opts.get("kappa", kappa)
    P = make_pair("helmholtz", fine, coarse, seed=seed, kappa=kappa)
    out = StudyResult("fig5_1")
    cfg = TwoGridConfig(coarse_m=200, coarse_k=150, nev=120, engine="idr",
                        ncyc=20, s=4, seed=seed)
    setup = coarse_setup(P, cfg)
    res = two_grid_solve(P, cfg, setup)
    out.add("two_grid_idr", {"method": "two-grid idr(20)-proj(150)",
                             **_two_grid_row(res)}, res.trace, res.model)
    res2 = two_grid_solve(P, dataclasses.replace(cfg, engine="gmres"), setup)
    out.add("two_grid_gmres", {"method": "two-grid gmres(100)-proj(150)",
                               **_two_grid_row(res2)}, res2.trace, res2.model,
            primary=False)
    budget = opts.get("max_mvp", max(res.phase_mvp.get("solve", 0), 1) * 2)
    _compare(out, P, 1e-10, [("idr4", "idr", {"s": 4}),
                             ("gmres_dr", "gmres-dr", {"m": 200, "k": 150})],
             budget, seed=seed)
    return out


def fig5_3(scale="desk", seed=0, **opts) -> StudyResult:
    """Biharmonic: coarse GMRES-DR(m,k) choices with BiCGStab(ncyc)-Proj(k)."""
    fine, coarse = _scale(scale, ("1/256", "1/64"), ("1/128", "1/32"))
    ncyc = opts.get("ncyc", 20)
    P = make_pair("biharmonic", fine, coarse, seed=seed)
    out = StudyResult("fig5_3")
    for m, k, nev in ((100, 50, 40), (150, 100, 80), (200, 150, 120)):
        cfg = TwoGridConfig(coarse_m=m, coarse_k=k, nev=nev, engine="bicgstab",
                            ncyc=ncyc, rtol=1e-8)
        res = two_grid_solve(P, cfg)
        out.add(f"k_{k}", {"m": m, "k": k, "nev": nev, "ncyc": ncyc,
                           **_two_grid_row(res)}, res.trace, res.model)
    return out


def table5_1(scale="desk", seed=0, **opts) -> StudyResult:
    """ILU(0)-preconditioned biharmonic: BiCGStab, G-Proj and deflated
    BiCGStab with 0, 10 and many cycles of eigenvector improvement."""
    fine, coarse = _scale(scale, ("1/512", "1/128"), ("1/128", "1/32"))
    P = make_pair("biharmonic", fine, coarse, seed=seed)
    out = StudyResult("table5_1")
    x, tr, model, op = fine_only(P, "bicgstab", 1e-8, precond="ilu0",
                                 max_mvp=opts.get("max_mvp", 200000))
    out.add("bicgstab", {"method": "bicgstab", "coarse_cycles": 0, "arnoldi_cycles": 0,
                         **_fine_row(tr, model, op, x, P.rhs)}, tr, model,
            primary=False)
    base = TwoGridConfig(precond="ilu0", ilu0_shift=0.5, rtol=1e-8,
                         coarse_m=150, coarse_k=100, nev=80)
    setup = coarse_setup(P, base)
    runs = [("g_proj", dataclasses.replace(base, engine="gmres", m3=50)),
            ("defl_bi", dataclasses.replace(base, engine="bicgstab", ncyc=50)),
            ("defl_bi_ae10", dataclasses.replace(base, engine="bicgstab", ncyc=50,
                                                 arnoldi_cycles=10,
                                                 arnoldi_target="rotate",
                                                 arnoldi_targets=10)),
            ("defl_bi_ae", dataclasses.replace(base, engine="bicgstab", ncyc=50,
                                               arnoldi_cycles=opts.get("arnoldi_max", 200),
                                               arnoldi_nev=80, arnoldi_threshold=1e-3))]
    for label, cfg in runs:
        res = two_grid_solve(P, cfg, setup)
        out.add(label, {"method": label, **_two_grid_row(res)}, res.trace, res.model)
    return out


def custom(problem: ProblemInstance, cfg: TwoGridConfig) -> StudyResult:
    out = StudyResult("custom")
    res = two_grid_solve(problem, cfg)
    coarse_h = problem.coarse_grid.h if cfg.coarse and problem.coarse_grid else None
    row = {"family": problem.label, "fine_h": str(problem.fine_grid.h),
           "coarse_h": str(coarse_h) if coarse_h else None, "engine": cfg.engine,
           "precond": cfg.precond, **_two_grid_row(res)}
    out.add("solve", row, res.trace, res.model)
    out.problems["solve"] = problem
    return out


STUDIES = {s.name: s for s in (
    Study("table3_1", "coarse grid size sweep, two-grid GMRES(100)-Proj(100)", table3_1),
    Study("table4_1", "ncyc sweep for two-grid BiCGStab(ncyc)-Proj(100)", table4_1),
    Study("table4_2", "restarted BiCGStab without deflation", table4_2),
    Study("table4_3", "GMRES with fixed, BiCGStab-derived and random restarts", table4_3),
    Study("fig3_2", "two-grid GMRES vs GMRES-DR, BiCGStab, IDR(4)", fig3_2),
    Study("fig4_2", "two-grid BiCGStab(20)-Proj(100), second right-hand side", fig4_2),
    Study("fig5_1", "Helmholtz: two-grid IDR and GMRES vs IDR(4), GMRES-DR", fig5_1),
    Study("fig5_3", "biharmonic: coarse GMRES-DR(m,k) choices", fig5_3),
    Study("table5_1", "ILU(0)-preconditioned biharmonic", table5_1),
)}


def run_study(name: str, scale: str = "desk", seed: int = 0, **opts) -> StudyResult:
    if name not in STUDIES:
        raise KeyError(f"unknown study {name!r}; see list-studies")
    log.info("running %s at %s scale", name, scale)
    return STUDIES[name].run(scale=scale, seed=seed, **opts)
