"""Command line entry point: ``perfhom <command> -c config.json``.

Exit status is 0 on success, 2 on invalid input (including a failed
coercivity gate) and 3 when a solver breaks down.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .effective import homogenize
from .errors import CoercivityFailed, SolverError, ValidationError
from .fine import apriori_report, fine_problem, gate_for, solve_robin_fine, write_report
from .geometry import build_cell_mesh, macro_mesh, mesh_quality_report, tile_perforated_mesh, write_mesh, write_vtk
from .macro import corrected_field, solve_homogenized
from .study import StudyConfig, run_convergence_study

log = logging.getLogger("perfhom")

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER = 0, 2, 3

COMMANDS = ("mesh", "cell", "homogenize", "fine", "macro", "converge", "check")


def _quality_dict(mesh):
    q = mesh_quality_report(mesh)
    return {k: float(v) if isinstance(v, (float, np.floating)) else int(v) for k, v in vars(q).items()}


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _gate_or_fail(stage, force: bool):
    gate = gate_for(stage.mesh, stage.coeffs, stage.m, stage.mu0)
    if not gate.ok:
        msg = (
            f"coercivity condition fails: sqrt(mu0 m) = {math.sqrt(stage.m * stage.mu0):.4g} "
            f"<= C_s*|alpha|_inf = {gate.C_s * gate.alpha_max:.4g}"
        )
        if not force:
            raise CoercivityFailed(msg)
        log.warning("%s; continuing because of --force", msg)
    return gate


def cmd_mesh(cfg: StudyConfig, out: Path, args) -> dict:
    cell = build_cell_mesh(cfg.geometry)
    tiles = {N: tile_perforated_mesh(cell, N) for N in cfg.epsilons}
    macro = macro_mesh(cfg.macro_refinement)
    write_mesh(cell, out / "mesh_cell.txt")
    write_vtk(cell, out / "mesh_cell.vtk")
    write_mesh(macro, out / "mesh_macro.txt")
    for N, mesh in tiles.items():
        write_mesh(mesh, out / f"mesh_eps{N}.txt")
    return {"cell": _quality_dict(cell), "macro": _quality_dict(macro),
            "tiles": {str(N): _quality_dict(m) for N, m in tiles.items()}}


def cmd_cell(cfg: StudyConfig, out: Path, args) -> dict:
    stage = homogenize(cfg.geometry, cfg.coeffs, cfg.tol)
    fns = stage.cells.functions()
    for name, fn in fns.items():
        fn.write_csv(out / f"{name}.csv")
    write_vtk(stage.mesh, out / "cell_solutions.vtk", {k: f.values for k, f in fns.items()})
    return {"residuals": {k: float(v) for k, v in stage.cells.residuals.items()}}


def cmd_homogenize(cfg: StudyConfig, out: Path, args) -> dict:
    stage = homogenize(cfg.geometry, cfg.coeffs, cfg.tol)
    (out / "model.json").write_text(stage.model.to_json() + "\n")
    return {"A_hom": stage.model.A_hom.tolist(), "B": stage.model.B.tolist(), "lambda": stage.model.lam}


def cmd_fine(cfg: StudyConfig, out: Path, args) -> dict:
    stage = homogenize(cfg.geometry, cfg.coeffs, cfg.tol)
    gate = _gate_or_fail(stage, args.force)
    reports, solutions = [], {}
    for N in sorted(cfg.epsilons):
        p = fine_problem(stage.mesh, stage.coeffs, N, gate)
        u = solve_robin_fine(p, cfg.tol, force=args.force)
        solutions[N] = u
        reports.append(apriori_report(u, p))
    write_report(out / "apriori.csv", reports)
    for N, u in solutions.items():
        u.write_csv(out / f"u_eps{N}.csv")
    return {"coercive": gate.ok, "c0": gate.c0, "C_s": gate.C_s}


def cmd_macro(cfg: StudyConfig, out: Path, args) -> dict:
    stage = homogenize(cfg.geometry, cfg.coeffs, cfg.tol)
    sol = solve_homogenized(stage.model, macro_mesh(cfg.macro_refinement), cfg.tol)
    samples = {}
    for N in sorted(cfg.epsilons):
        mesh = tile_perforated_mesh(stage.mesh, N)
        samples[N] = mesh.vertices[mesh.triangles].mean(axis=1)  # centroids lie in the solid part
    fields = {N: corrected_field(sol, stage.cells, 1.0 / N) for N in samples}
    (out / "model.json").write_text(stage.model.to_json() + "\n")
    sol.u.write_csv(out / "u_macro.csv")
    for N, pts in samples.items():
        fields[N].write_csv(out / f"corrected_eps{N}.csv", pts)
    return {"peclet": sol.peclet, "u_max": float(np.abs(sol.u.values).max())}


def cmd_converge(cfg: StudyConfig, out: Path, args) -> dict:
    report = run_convergence_study(replace(cfg, force=args.force))
    (out / "model.json").write_text(report.stage.model.to_json() + "\n")
    report.write_csv(out / "convergence.csv")
    if report.floor is not None:
        _write_json(out / "floor.json", report.floor)
    summary = {"rows": len(report.rows), "coercive": report.gate.ok, "B": report.stage.model.B.tolist()}
    if report.errors:
        summary["errors"] = {str(k): v for k, v in report.errors.items()}
    return summary


def cmd_check(cfg: StudyConfig, out: Path, args) -> dict:
    stage = homogenize(cfg.geometry, cfg.coeffs, cfg.tol)
    gate = gate_for(stage.mesh, stage.coeffs, stage.m, stage.mu0)
    summary = {
        "m": stage.m,
        "M": stage.M,
        "mu0": stage.mu0,
        "C_s": gate.C_s,
        "alpha_max": gate.alpha_max,
        "c0": gate.c0,
        "coercive": gate.ok,
        "alpha_shift": stage.coeffs.alpha.discrete_mean_shift,
        "min_angle": mesh_quality_report(stage.mesh).min_angle,
    }
    if not gate.ok and not args.force:
        print(json.dumps(summary, indent=2, sort_keys=True))
        raise CoercivityFailed(
            f"coercivity condition fails: sqrt(mu0 m) = {math.sqrt(stage.m * stage.mu0):.4g} "
            f"<= C_s*|alpha|_inf = {gate.C_s * gate.alpha_max:.4g}"
        )
    return summary


HANDLERS = {
    "mesh": cmd_mesh,
    "cell": cmd_cell,
    "homogenize": cmd_homogenize,
    "fine": cmd_fine,
    "macro": cmd_macro,
    "converge": cmd_converge,
    "check": cmd_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perfhom", description="Periodic homogenization of Robin problems in perforated media."
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("-c", "--config", required=True, help="JSON configuration file")
    parser.add_argument("-o", "--outdir", default=".", help="output directory (default: .)")
    parser.add_argument("--force", action="store_true", help="proceed even if the coercivity gate fails")
    parser.add_argument("--tol", type=float, default=None, help="relative residual tolerance of solves")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run_pipeline(cfg: StudyConfig, command: str, outdir, force: bool = False) -> dict:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    return HANDLERS[command](cfg, out, argparse.Namespace(force=force))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    logging.captureWarnings(True)
    try:
        cfg = StudyConfig.load(args.config)
        if args.tol is not None:
            if not args.tol > 0:
                raise ValidationError("--tol must be positive")
            cfg = replace(cfg, tol=args.tol)
        summary = run_pipeline(cfg, args.command, args.outdir, args.force)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(json.dumps(summary, indent=2, sort_keys=True, default=float))
    if summary.get("errors"):
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
