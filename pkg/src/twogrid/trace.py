"""Convergence histories and the cost model."""
from __future__ import annotations

import csv
import dataclasses
from typing import Iterable, List, Optional

from .linalg import OpCounter

__all__ = ["TraceEvent", "SolveTrace", "CostModel", "cost", "TRACE_COLUMNS"]

TRACE_COLUMNS = ("phase", "cycle", "level", "mvp", "prec", "vops", "audit",
                 "resnorm", "fine_equiv_mvp", "cost")


@dataclasses.dataclass(frozen=True)
class TraceEvent:
    phase: str
    cycle: int
    mvp: int
    prec: int
    vops: int
    resnorm: float
    level: str = "fine"
    audit: int = 0


@dataclasses.dataclass
class SolveTrace:
    """Append-only event log; counters in each event are cumulative for the
    operator of that grid level."""

    events: List[TraceEvent] = dataclasses.field(default_factory=list)
    status: str = "running"
    info: dict = dataclasses.field(default_factory=dict)

    def record(self, phase: str, cycle: int, counter: OpCounter,
               resnorm: float, level: str = "fine"):
        self.events.append(TraceEvent(phase, int(cycle), counter.mvp,
                                      counter.prec, counter.vops,
                                      float(resnorm), level, counter.audit))

    def extend(self, other: "SolveTrace"):
        self.events.extend(other.events)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def residuals(self, phase: Optional[str] = None, level: Optional[str] = None):
        return [e.resnorm for e in self.events
                if (phase is None or e.phase == phase)
                and (level is None or e.level == level)]

    def last(self, level: Optional[str] = None) -> Optional[TraceEvent]:
        for e in reversed(self.events):
            if level is None or e.level == level:
                return e
        return None

    def totals(self, level: str = "fine") -> OpCounter:
        e = self.last(level)
        if e is None:
            return OpCounter()
        return OpCounter(e.mvp, e.prec, e.vops, e.audit)

    def rows(self, model: Optional["CostModel"] = None) -> Iterable[dict]:
        """Trace rows with running fine-grid-equivalent work and cost."""
        latest = {}
        for e in self.events:
            latest[e.level] = e
            row = dataclasses.asdict(e)
            if model is not None:
                row["fine_equiv_mvp"] = sum(x.mvp / model.scale(lvl)
                                            for lvl, x in latest.items())
                row["cost"] = sum(model.level_cost(x.mvp, x.prec, x.vops, lvl)
                                  for lvl, x in latest.items())
            yield row

    def write_csv(self, path, model: Optional["CostModel"] = None):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, extrasaction="ignore",
                               lineterminator="\n")
            w.writeheader()
            for row in self.rows(model):
                row = {k: (f"{v:.6e}" if isinstance(v, float) else v)
                       for k, v in row.items()}
                w.writerow(row)


@dataclasses.dataclass(frozen=True)
class CostModel:
    """cost = nnz * mvp + vops, or 2 nnz * mvp + vops when every product is
    paired with a preconditioner solve of the same sparsity.  Coarse work is
    divided by ``coarse_scale`` = (h_coarse / h_fine)^2."""

    nnz_per_row_nominal: int = 5
    coarse_scale: int = 1
    preconditioned: bool = False

    def __post_init__(self):
        s = self.coarse_scale
        if s < 1 or s & (s - 1):
            raise ValueError("coarse_scale must be a power of 2 (4, 16, 64, ...)")

    def scale(self, level: str) -> float:
        return float(self.coarse_scale) if level == "coarse" else 1.0

    def level_cost(self, mvp, prec, vops, level="fine") -> float:
        per_mvp = self.nnz_per_row_nominal * (2 if self.preconditioned else 1)
        return (per_mvp * mvp + vops) / self.scale(level)


def cost(trace: SolveTrace, model: CostModel) -> float:
    """Total fine-grid-equivalent cost of everything in the trace."""
    total = 0.0
    for level in {e.level for e in trace.events}:
        t = trace.totals(level)
        total += model.level_cost(t.mvp, t.prec, t.vops, level)
    return total


def fine_equiv_mvp(trace: SolveTrace, model: CostModel) -> float:
    """Matrix-vector products (each paired with its preconditioner solve when
    preconditioned) in fine-grid equivalents."""
    return sum(trace.totals(level).mvp / model.scale(level)
               for level in {e.level for e in trace.events})
