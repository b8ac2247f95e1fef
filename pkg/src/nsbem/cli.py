"""Command-line front end.

Commands::

    nsbem run SCENARIO [-o DIR]         solve and write every requested output
    nsbem validate SCENARIO [-o DIR]    solve and compare with the analytic solution
    nsbem converge SCENARIO --levels 1 2 3 [-o DIR]
    nsbem mesh-check SCENARIO [--write DIR]

Exit codes: 0 success, 1 invalid input or numerical failure, 3 validation
tolerance exceeded.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .fields import (
    PlaneSpec,
    beam_direction,
    far_field_pattern,
    focal_metrics_grid,
    pressure_grid_slice,
    write_grid_csv,
    write_radar_csv,
    write_snapshot_csv,
    write_vtk,
)
from .mesh import MeshQualityError, mesh_integrity_check, write_mesh
from .scenario import ScenarioFile, describe, load_document, load_scenario
from .solver import AssemblyError, ScenarioError, SingularSystemError, solve_scenario
from .validation import compare_oracle_from_file, convergence_study

log = logging.getLogger("nsbem")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_TOLERANCE = 3


def _g(x: float) -> str:
    return f"{x:.17g}"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _plane(spec: dict) -> PlaneSpec:
    return PlaneSpec(
        spec.get("origin", [0.0, 0.0, 0.0]),
        spec.get("u", [1.0, 0.0, 0.0]),
        spec.get("v", [0.0, 0.0, 1.0]),
        tuple(spec.get("s_range", [-1.0, 1.0])),
        tuple(spec.get("t_range", [-1.0, 1.0])),
    )


def _resolution(spec: dict) -> tuple[int, int]:
    res = spec.get("resolution", [51, 51])
    return int(res[0]), int(res[1])


class RunReport:
    """Collects written files and summary values; the manifest holds no timings."""

    def __init__(self, sf: ScenarioFile, out: Path):
        self.sf = sf
        self.out = out
        self.files: list[Path] = []
        self.summary: dict = {}
        self.text: list[str] = []

    def add(self, path: Path) -> None:
        self.files.append(path)

    def finish(self) -> None:
        manifest = {
            "scenario": describe(self.sf),
            "scenario_file": str(self.sf.path) if self.sf.path else None,
            "scenario_sha256": _sha256(self.sf.path) if self.sf.path else None,
            "version": __version__,
            "summary": self.summary,
            "outputs": {p.name: _sha256(p) for p in sorted(self.files)},
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        (self.out / "report.txt").write_text("\n".join(self.text) + "\n")


def _write_outputs(sf: ScenarioFile, sol, out: Path, rep: RunReport, vtk: bool) -> None:
    sc = sf.scenario
    outputs = sf.outputs
    for g in outputs.get("grids", []):
        name = g.get("name", "grid")
        grid = pressure_grid_slice(sc, sol, _plane(g), _resolution(g), g.get("normalization", "monopole_reference"),
                                   g.get("threshold"))
        p = out / f"grid_{name}.csv"
        write_grid_csv(grid, p)
        rep.add(p)
        if vtk:
            p = out / f"grid_{name}.vtk"
            write_vtk(grid, p)
            rep.add(p)
        phases = g.get("snapshot_phases")
        if phases:
            p = out / f"snapshot_{name}.csv"
            write_snapshot_csv(grid, phases, p)
            rep.add(p)
    for r in outputs.get("radar", []):
        name = r.get("name", "radar")
        pat = far_field_pattern(sc, sol, float(r.get("radius", 100.0)), r.get("plane", "xz"),
                                int(r.get("n_angles", 360)), bool(r.get("subtract_incident", True)))
        p = out / f"radar_{name}.csv"
        write_radar_csv(pat, p)
        rep.add(p)
    for f in outputs.get("focal", []):
        name = f.get("name", "focus")
        plane = _plane(f)
        grid = pressure_grid_slice(sc, sol, plane, _resolution(f), f.get("normalization", "monopole_reference"),
                                   f.get("threshold"))
        vmax, s, t = focal_metrics_grid(grid)
        pos = plane.origin + s * plane.u + t * plane.v
        rep.summary[f"focal_{name}"] = {"max_abs_p": vmax, "position": [float(v) for v in pos]}
        rep.text.append(f"focal {name}: max |p| = {vmax:.6g} at ({pos[0]:.6g}, {pos[1]:.6g}, {pos[2]:.6g})")
    for b in outputs.get("beams", []):
        name = b.get("name", "beam")
        theta, mag = beam_direction(sc, sol, float(b.get("radius", 100.0)), b.get("plane", "xz"),
                                    int(b.get("n_angles", 720)))
        rep.summary[f"beam_{name}"] = {"angle_deg": float(np.degrees(theta)), "magnitude": mag}
        rep.text.append(f"beam {name}: far-field maximum at {np.degrees(theta):.4f} deg")


def _solve(sf: ScenarioFile, rep: RunReport):
    t0 = time.perf_counter()
    sol = solve_scenario(sf.scenario)
    rep.text.append(sol.report.as_text())
    rep.text.append(f"wall_time_s     {time.perf_counter() - t0:.3f}")
    rep.summary["unknowns"] = sol.report.dimension
    rep.summary["residual_below_1e-10"] = bool(sol.report.residual < 1e-10) if sol.report.dimension else True
    for w in sol.report.warnings:
        log.warning(w)
    return sol


TRACK_HEADER = "radius,theta_rad,re_phi_bem,im_phi_bem,re_phi_exact,im_phi_exact"


def _validation_outputs(sf: ScenarioFile, sol, out: Path, rep: RunReport) -> bool:
    cmp_ = compare_oracle_from_file(sf, sol)
    summary = ["item,radius,max_rel_error,rms_rel_error"]
    for i, tr in enumerate(cmp_.tracks):
        lines = [TRACK_HEADER]
        for th, b, e in zip(tr.theta, tr.bem, tr.exact):
            lines.append(f"{_g(tr.radius)},{_g(th)},{_g(b.real)},{_g(b.imag)},{_g(e.real)},{_g(e.imag)}")
        p = out / f"track_{i}.csv"
        p.write_text("\n".join(lines) + "\n")
        rep.add(p)
        summary.append(f"track_{i},{_g(tr.radius)},{_g(tr.error)},{_g(tr.rms_error)}")
    radius = float(np.linalg.norm(cmp_.probe))
    summary.append(f"probe,{_g(radius)},{_g(cmp_.probe_error)},{_g(cmp_.probe_error)}")
    p = out / "validation.csv"
    p.write_text("\n".join(summary) + "\n")
    rep.add(p)
    tol = float((sf.validation or {}).get("tolerance", 5e-4))
    rep.summary["probe_error"] = cmp_.probe_error
    rep.summary["track_errors"] = [t.error for t in cmp_.tracks]
    rep.summary["track_rms_errors"] = [t.rms_error for t in cmp_.tracks]
    rep.text.append(f"probe {cmp_.probe.tolist()}: relative error {cmp_.probe_error:.3e} (tolerance {tol:g})")
    for t in cmp_.tracks:
        rep.text.append(f"track r={t.radius:g}: max relative error {t.error:.3e}, rms {t.rms_error:.3e}")
    return cmp_.probe_error <= tol


def cmd_run(args) -> int:
    sf = load_scenario(args.scenario)
    out = Path(args.output or f"out_{sf.name}")
    out.mkdir(parents=True, exist_ok=True)
    rep = RunReport(sf, out)
    sol = _solve(sf, rep)
    _write_outputs(sf, sol, out, rep, args.vtk)
    ok = True
    if sf.validation and not args.skip_validation:
        ok = _validation_outputs(sf, sol, out, rep)
    rep.finish()
    print("\n".join(rep.text))
    return EXIT_OK if ok or not args.strict else EXIT_TOLERANCE


def cmd_validate(args) -> int:
    sf = load_scenario(args.scenario)
    if not sf.validation:
        raise ScenarioError(f"{args.scenario}: no [validation] table")
    out = Path(args.output or f"out_{sf.name}")
    out.mkdir(parents=True, exist_ok=True)
    rep = RunReport(sf, out)
    sol = _solve(sf, rep)
    ok = _validation_outputs(sf, sol, out, rep)
    rep.finish()
    print("\n".join(rep.text))
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_converge(args) -> int:
    doc = load_document(args.scenario)
    rows = convergence_study(doc, args.levels)
    lines = ["level,nodes,unknowns,probe_error,track_error,wall_time_s"]
    for r in rows:
        lines.append(f"{r.level},{r.nodes},{r.unknowns},{_g(r.probe_error)},{_g(r.track_error)},{r.wall_time:.3f}")
    text = "\n".join(lines) + "\n"
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "convergence.csv").write_text(text)
    print(text, end="")
    monotone = True
    for a, b in zip(rows, rows[1:]):
        print(f"level {a.level} -> {b.level}: probe error ratio {a.probe_error / b.probe_error:.2f}")
        monotone &= b.probe_error < a.probe_error
    if not monotone:
        print("probe error does not decrease with refinement", file=sys.stderr)
        return EXIT_TOLERANCE
    return EXIT_OK


def cmd_mesh_check(args) -> int:
    sf = load_scenario(args.scenario)
    bad = False
    for s in sf.scenario.surfaces:
        r = mesh_integrity_check(s.mesh)
        status = "ok" if r.ok else "FAILED"
        print(f"{s.id}: {s.mesh.n_elements} elements, {s.mesh.n_nodes} nodes, area {r.area:.6g}, "
              f"volume {r.volume:.6g}: {status}")
        for p in r.problems:
            print(f"  {p}")
        bad |= not r.ok
        if args.write:
            d = Path(args.write)
            d.mkdir(parents=True, exist_ok=True)
            write_mesh(s.mesh, d / f"{s.id}.mesh")
    return EXIT_ERROR if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nsbem", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="solve a scenario and write its outputs")
    p.add_argument("scenario")
    p.add_argument("-o", "--output")
    p.add_argument("--vtk", action="store_true", help="also write legacy VTK grids")
    p.add_argument("--skip-validation", action="store_true")
    p.add_argument("--strict", action="store_true", help="exit 3 when a validation tolerance fails")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="compare a core-shell scenario with the analytic solution")
    p.add_argument("scenario")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("converge", help="refinement study against the analytic solution")
    p.add_argument("scenario")
    p.add_argument("--levels", type=int, nargs="*", default=[1, 2, 3])
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("mesh-check", help="build and check every surface of a scenario")
    p.add_argument("scenario")
    p.add_argument("--write", metavar="DIR", help="write the meshes as text files")
    p.set_defaults(func=cmd_mesh_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, MeshQualityError, AssemblyError, SingularSystemError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
