"""Command line: ``twogrid solve``, ``twogrid run <study>``, ``twogrid list-studies``.

Exit status is 0 when every primary run converged, 2 when one did not and
1 for usage errors (bad flags, unknown study, malformed config).
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import logging
import math
import sys
from pathlib import Path
from typing import Optional

from .linalg import write_matrix_market
from .pipeline import PhaseError, TwoGridConfig
from .problems import FAMILIES, make_pair
from .studies import STUDIES, StudyResult, custom, run_study

log = logging.getLogger("twogrid")

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2

_PROBLEM_KEYS = {"family": str, "fine_h": str, "coarse_h": str, "kappa": float,
                 "seed": int, "random_rhs": "bool"}


class UsageError(Exception):
    pass


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6e}"
    if v is None:
        return ""
    return v


def write_summary(path: Path, rows):
    keys = []
    for row in rows:
        keys += [k for k in row if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})


def write_outputs(result: StudyResult, out: Path, dump_matrices: bool = False):
    out.mkdir(parents=True, exist_ok=True)
    write_summary(out / "summary.csv", result.rows)
    for label, (trace, model) in result.traces.items():
        trace.write_csv(out / f"trace_{label}.csv", model)
    if dump_matrices:
        for label, P in result.problems.items():
            write_matrix_market(out / f"{label}_fine.mtx", P.fine_matrix)
            if P.coarse_matrix is not None:
                write_matrix_market(out / f"{label}_coarse.mtx", P.coarse_matrix)


def _convert(value: str, kind):
    if kind == "bool":
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind is Optional[int] or kind == "Optional[int]":
        return None if value.strip().lower() in ("", "none") else int(value)
    if kind is Optional[float] or kind == "Optional[float]":
        return None if value.strip().lower() in ("", "none") else float(value)
    if kind in (int, "int"):
        return int(value)
    if kind in (float, "float"):
        return float(value)
    return value.strip()


_SOLVER_TYPES = {f.name: ("bool" if f.type in (bool, "bool") else f.type)
                 for f in dataclasses.fields(TwoGridConfig)}


def load_config(path) -> tuple[dict, dict, dict]:
    """Read an INI file with optional [problem], [solver] and [study]
    sections.  Returns plain dicts of converted values."""
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    unknown = set(cp.sections()) - {"problem", "solver", "study"}
    if unknown:
        raise UsageError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    problem, solver, study = {}, {}, {}
    try:
        if cp.has_section("problem"):
            for k, v in cp.items("problem"):
                if k not in _PROBLEM_KEYS:
                    raise UsageError(f"unknown [problem] key {k!r}")
                problem[k] = _convert(v, _PROBLEM_KEYS[k])
        if cp.has_section("solver"):
            for k, v in cp.items("solver"):
                if k not in _SOLVER_TYPES:
                    raise UsageError(f"unknown [solver] key {k!r}")
                solver[k] = _convert(v, _SOLVER_TYPES[k])
        if cp.has_section("study"):
            for k, v in cp.items("study"):
                study[k] = v.strip()
    except ValueError as exc:
        raise UsageError(f"malformed config value: {exc}") from exc
    return problem, solver, study


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twogrid",
                                description="Two-grid deflated Krylov solvers.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory (default: out)")
        sp.add_argument("--seed", type=int, default=None,
                        help="seed for random right-hand sides and shadow spaces")
        sp.add_argument("--config", type=Path, help="INI config file")
        sp.add_argument("--dump-matrices", action="store_true",
                        help="also write the matrices in Matrix Market format")

    def problem_flags(sp):
        sp.add_argument("--family", choices=FAMILIES)
        sp.add_argument("--fine-h")
        sp.add_argument("--coarse-h")
        sp.add_argument("--kappa", type=float)
        sp.add_argument("--engine", choices=("gmres", "bicgstab", "idr"))
        sp.add_argument("--rtol", type=float)
        sp.add_argument("--precond", choices=("none", "ilu0"))

    sp = sub.add_parser("solve", help="one two-grid solve")
    common(sp)
    problem_flags(sp)
    sp = sub.add_parser("run", help="run a canned study (or 'custom')")
    sp.add_argument("study")
    sp.add_argument("--scale", choices=("desk", "full"), default=None)
    common(sp)
    problem_flags(sp)
    sub.add_parser("list-studies", help="list the canned studies")
    return p


def _custom(args, problem, solver) -> StudyResult:
    for key in ("family", "fine_h", "coarse_h", "kappa"):
        val = getattr(args, key)
        if val is not None:
            problem[key] = val
    for key in ("engine", "rtol", "precond"):
        val = getattr(args, key)
        if val is not None:
            solver[key] = val
    if args.seed is not None:
        problem["seed"] = solver["seed"] = args.seed
    problem.setdefault("family", "convection-diffusion")
    problem.setdefault("fine_h", "1/64")
    if "coarse_h" not in problem:
        solver.setdefault("coarse", False)
    try:
        P = make_pair(problem["family"], problem["fine_h"], problem.get("coarse_h"),
                      seed=problem.get("seed", 0), kappa=problem.get("kappa", 100.0),
                      random_rhs=problem.get("random_rhs"))
        cfg = TwoGridConfig(**solver)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    return custom(P, cfg)


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-studies":
        for s in STUDIES.values():
            print(f"{s.name:10s} {s.description}")
        print(f"{'custom':10s} single solve from --config/--family/--fine-h/--coarse-h")
        return EXIT_OK
    try:
        problem, solver, study = load_config(args.config) if args.config else ({}, {}, {})
        if args.command == "solve" or args.study == "custom":
            result = _custom(args, problem, solver)
        else:
            if args.study not in STUDIES:
                raise UsageError(f"unknown study {args.study!r}; try list-studies")
            scale = args.scale or study.get("scale", "desk")
            seed = args.seed if args.seed is not None else int(study.get("seed", 0))
            result = run_study(args.study, scale=scale, seed=seed)
    except UsageError as exc:
        print(f"twogrid: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PhaseError as exc:
        print(f"twogrid: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    write_outputs(result, args.out, args.dump_matrices)
    for row in result.rows:
        print(", ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
    if not result.ok:
        print(f"twogrid: not converged: {', '.join(result.failed)}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
