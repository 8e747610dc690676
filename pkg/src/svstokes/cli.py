"""Command-line entry point: ``svstokes {mesh,solve,postprocess,study}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import vtk
from .analysis import (error_h1_velocity, error_l2_pressure, exact_fields, run_study)
from .mesh import (MeshError, Triangulation, build_connectivity, classify,
                   generate_boundary_singular_strip, generate_foursplit, load_mesh,
                   save_mesh, validate_assumptions)
from .postprocess import apply_pressure
from .stokes import SolverError, assemble, build_dof_map, export_system, solve

EXIT_OK, EXIT_MESH, EXIT_ASSUMPTION, EXIT_SOLVER = 0, 2, 3, 4
SCOPE_NAMES = {"quasi": "quasi_singular", "all": "all_vertices",
               "quasi_singular": "quasi_singular", "all_vertices": "all_vertices"}

log = logging.getLogger("svstokes")


@dataclass
class RunConfig:
    command: str = "mesh"
    foursplit: Optional[int] = None
    strip: Optional[int] = None
    mesh: Optional[str] = None
    ratio: str = "1:1"
    scope: str = "quasi"
    out: str = "out"
    dump_system: bool = False
    strict: bool = False
    vtk: bool = True
    zero_source: bool = False
    solution: Optional[str] = None
    study: str = "4,8,16,32"
    residual_tol: float = 1e-9

    def ratio_pair(self) -> tuple:
        try:
            a, b = (float(x) for x in self.ratio.split(":"))
        except ValueError as exc:
            raise ValueError(f"ratio must look like A:B, got {self.ratio!r}") from exc
        if a <= 0 or b <= 0:
            raise ValueError("ratio entries must be positive")
        return a, b

    def n_list(self) -> list:
        ns = [int(x) for x in self.study.split(",") if x.strip()]
        if not ns or any(n < 1 for n in ns):
            raise ValueError("study sizes must be positive integers")
        return ns

    def validate(self) -> None:
        sources = [s for s in (self.foursplit, self.strip, self.mesh) if s is not None]
        needs_mesh = self.command != "study" and not (self.command == "postprocess"
                                                      and self.solution)
        if len(sources) > 1 or (needs_mesh and not sources):
            raise ValueError("exactly one mesh source (--foursplit, --strip or --mesh) is required")
        for n in (self.foursplit, self.strip):
            if n is not None and n < 1:
                raise ValueError("N must be >= 1")
        if self.scope not in SCOPE_NAMES:
            raise ValueError(f"unknown scope {self.scope!r}")
        self.ratio_pair()
        if self.command == "study":
            self.n_list()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svstokes", description="Scott-Vogelius P4/P3 Stokes runs")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("mesh", "solve", "postprocess", "study"):
        s = sub.add_parser(name)
        src = s.add_mutually_exclusive_group()
        src.add_argument("--foursplit", type=int, metavar="N")
        src.add_argument("--strip", type=int, metavar="N", help="boundary-singular strip mesh")
        src.add_argument("--mesh", "--file", dest="mesh", metavar="FILE")
        s.add_argument("--ratio", metavar="A:B")
        s.add_argument("--scope", choices=sorted(SCOPE_NAMES))
        s.add_argument("--out", metavar="DIR")
        s.add_argument("--config", metavar="JSON", help="config file; flags win")
        s.add_argument("--strict", action="store_true", default=None)
        s.add_argument("--no-vtk", dest="vtk", action="store_false", default=None)
        if name in ("solve", "postprocess"):
            s.add_argument("--dump-system", action="store_true", default=None)
            s.add_argument("--zero-source", action="store_true", default=None)
        if name == "postprocess":
            s.add_argument("--solution", metavar="NPZ", help="solution written by `solve`")
        if name == "study":
            s.add_argument("--study", metavar="N1,N2,...")
    return p


def config_from_args(argv=None) -> RunConfig:
    args = build_parser().parse_args(argv)
    values = {}
    if getattr(args, "config", None):
        values.update(json.loads(Path(args.config).read_text()))
    known = {f.name for f in fields(RunConfig)}
    for k, v in vars(args).items():
        if k in known and v is not None:
            values[k] = v
    values["command"] = args.command
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Pipeline pieces
# ---------------------------------------------------------------------------

def load_or_generate(cfg: RunConfig) -> Triangulation:
    if cfg.mesh is not None:
        try:
            return load_mesh(cfg.mesh)
        except (OSError, KeyError, ValueError) as exc:
            if isinstance(exc, MeshError):
                raise
            raise MeshError(f"cannot read mesh file {cfg.mesh}: {exc}") from exc
    if cfg.strip is not None:
        return generate_boundary_singular_strip(cfg.strip)
    return generate_foursplit(cfg.foursplit, *cfg.ratio_pair())


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, default=float))


def _check_assumptions(cfg, mesh, report) -> list:
    violations = validate_assumptions(mesh, report)
    for v in violations:
        log.warning("assumption violation: %s", v)
    return violations


def _solve(cfg, mesh, out: Path):
    exact = exact_fields()
    f = None if cfg.zero_source else exact.f
    dofs = build_dof_map(mesh)
    system = assemble(mesh, dofs, f)
    if cfg.dump_system:
        export_system(system, out / "system.mtx")
    return solve(system, residual_tol=cfg.residual_tol), exact


def cmd_mesh(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mesh = load_or_generate(cfg)
    report = classify(mesh)
    violations = _check_assumptions(cfg, mesh, report)
    save_mesh(mesh, out / "mesh.json")
    rep = report.to_dict()
    rep["assumption_violations"] = violations
    _write_json(out / "report.json", rep)
    if cfg.vtk:
        vtk.write_mesh(out / "mesh.vtk", mesh, report)
    c = report.counts()
    print(f"{mesh.n_vertices} vertices, {mesh.n_edges} edges, {mesh.n_triangles} triangles")
    print(f"quasi-singular {c['quasi_singular']} (exactly singular {c['exactly_singular']}), "
          f"regular {c['regular']}, theta_min {report.theta_min:.4e}")
    return EXIT_ASSUMPTION if (violations and cfg.strict) else EXIT_OK


def cmd_solve(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mesh = load_or_generate(cfg)
    report = classify(mesh)
    violations = _check_assumptions(cfg, mesh, report)
    if violations and cfg.strict:
        return EXIT_ASSUMPTION
    solution, exact = _solve(cfg, mesh, out)
    np.savez(out / "solution.npz", vertices=mesh.vertices, triangles=mesh.triangles,
             velocity=solution.velocity, pressure=solution.pressure)
    diag = dict(solution.diagnostics)
    diag["rank_deficient"] = solution.rank_deficient
    if not cfg.zero_source:
        diag["err_u_h1"] = error_h1_velocity(mesh, solution.velocity_cells(), exact)
        diag["err_p"] = error_l2_pressure(mesh, solution.pressure, exact)
    _write_json(out / "diagnostics.json", diag)
    if cfg.vtk:
        vtk.write_pressure(out / "pressure.vtk", mesh, {"p_h": solution.pressure})
    print(f"unknowns {diag['n_unknowns']}, residual {diag['residual']:.2e}, "
          f"rank deficient {solution.rank_deficient}")
    if "err_u_h1" in diag:
        print(f"|u-u_h|_1 = {diag['err_u_h1']:.4e}  ||p-p_h||_0 = {diag['err_p']:.4e}")
    return EXIT_OK


def cmd_postprocess(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.solution:
        data = np.load(cfg.solution)
        mesh = build_connectivity(data["vertices"], data["triangles"])
        pressure = data["pressure"]
    else:
        mesh = load_or_generate(cfg)
        solution, _ = _solve(cfg, mesh, out)
        pressure = solution.pressure
    report = classify(mesh)
    violations = _check_assumptions(cfg, mesh, report)
    if violations and cfg.strict:
        return EXIT_ASSUMPTION
    scope = SCOPE_NAMES[cfg.scope]
    ptilde, corr = apply_pressure(mesh, pressure, report, scope)
    corr.to_json(out / "correction.json")
    np.savez(out / "postprocessed.npz", pressure=pressure, ptilde=ptilde)
    summary = {"scope": scope, "n_coefficients": len(corr.coefficients), "mean": corr.mean,
               "warnings": corr.warnings}
    if not cfg.zero_source:
        exact = exact_fields()
        summary["err_p"] = error_l2_pressure(mesh, pressure, exact)
        summary["err_ptilde"] = error_l2_pressure(mesh, ptilde, exact)
    _write_json(out / "postprocess.json", summary)
    if cfg.vtk:
        vtk.write_pressure(out / "pressure.vtk", mesh, {"p_h": pressure, "p_tilde": ptilde})
    if corr.is_empty():
        print("no quasi-singular vertices: p_tilde equals p_h")
    else:
        print(f"{len(corr.coefficients)} sting coefficients, mean {corr.mean:.3e}")
    if "err_ptilde" in summary:
        print(f"||p-p_h||_0 = {summary['err_p']:.4e}  ||p-p_tilde||_0 = {summary['err_ptilde']:.4e}")
    return EXIT_OK


def cmd_study(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    a, b = cfg.ratio_pair()
    scope = SCOPE_NAMES[cfg.scope]
    table = run_study("foursplit", (a, b), cfg.n_list(), scope)
    table.to_csv(out / "study.csv")
    _write_json(out / "study.json", {"label": table.label, "rows": [asdict(r) for r in table.rows]})
    print(table.to_text())
    failed = [r for r in table.rows if r.failure]
    for r in failed:
        print(f"N={r.N} failed: {r.failure}", file=sys.stderr)
    return EXIT_SOLVER if failed else EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "solve": cmd_solve, "postprocess": cmd_postprocess,
            "study": cmd_study}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(argv)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[cfg.command](cfg)
    except MeshError as exc:
        print(f"invalid mesh: {exc}", file=sys.stderr)
        return EXIT_MESH
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
