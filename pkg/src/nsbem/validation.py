"""Comparisons with the analytic core-shell solution and self-consistency checks."""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from .fields import RadarPattern, evaluate_points
from .mesh import build_sphere_mesh
from .oracle import CoreShellConfig, eval_potential_xyz, solve_modal_coefficients
from .scenario import ScenarioFile, oracle_config, scenario_from_dict
from .solver import (
    FOUR_PI,
    Domain,
    Numerics,
    Scenario,
    SolutionField,
    Surface,
    assemble_domain_equations,
    solve_scenario,
)
from .special import sph_jn_all

ORACLE_ORDER = 60


def relative_error(diff, ref) -> float:
    """``|diff| / |ref|`` with 0/0 counted as an exact match."""
    d, r = float(np.max(np.abs(diff), initial=0.0)), float(np.max(np.abs(ref), initial=0.0))
    if r == 0.0:
        return 0.0 if d == 0.0 else float("inf")
    return d / r


def track_points(radius: float, samples: int) -> tuple[np.ndarray, np.ndarray]:
    """Points on a circle of the xz-plane; theta runs from +z towards +x."""
    theta = 2 * np.pi * np.arange(samples) / samples
    pts = np.column_stack([radius * np.sin(theta), np.zeros_like(theta), radius * np.cos(theta)])
    return theta, pts


@dataclass
class TrackComparison:
    radius: float
    theta: np.ndarray
    bem: np.ndarray
    exact: np.ndarray

    @property
    def error(self) -> float:
        """Maximum deviation relative to the largest exact magnitude on the track."""
        ok = np.isfinite(self.bem)
        return relative_error(self.bem[ok] - self.exact[ok], self.exact[ok])

    @property
    def rms_error(self) -> float:
        """Root-mean-square deviation relative to the RMS exact magnitude."""
        ok = np.isfinite(self.bem)
        d = np.sqrt(np.mean(np.abs(self.bem[ok] - self.exact[ok]) ** 2))
        return relative_error(d, np.sqrt(np.mean(np.abs(self.exact[ok]) ** 2)))


@dataclass
class OracleComparison:
    tracks: list[TrackComparison]
    probe: np.ndarray
    probe_bem: complex
    probe_exact: complex
    order: int

    @property
    def probe_error(self) -> float:
        return relative_error(self.probe_bem - self.probe_exact, self.probe_exact)

    @property
    def max_track_error(self) -> float:
        return max(t.error for t in self.tracks)


def compare_with_oracle(scenario: Scenario, solution: SolutionField, cfg: CoreShellConfig,
                        track_radii=(2.4, 1.6, 0.8), samples: int = 72,
                        probe=(2.4, 0.0, 0.0), order: int = ORACLE_ORDER) -> OracleComparison:
    """Potential from the BEM solution against the series solution."""
    coeffs = solve_modal_coefficients(cfg, order)
    tracks = []
    for r in track_radii:
        theta, pts = track_points(float(r), samples)
        phi, _, _, _ = evaluate_points(scenario, solution, pts)
        tracks.append(TrackComparison(float(r), theta, phi, eval_potential_xyz(cfg, coeffs, pts)))
    p = np.asarray(probe, dtype=float).reshape(1, 3)
    phi, _, _, _ = evaluate_points(scenario, solution, p)
    return OracleComparison(tracks, p[0], complex(phi[0]), complex(eval_potential_xyz(cfg, coeffs, p)[0]), order)


def with_level(doc: dict, level: int) -> dict:
    """Copy of a scenario document with every generated surface at ``level``."""
    out = copy.deepcopy(doc)
    for s in out.get("surfaces", []):
        s.pop("frequency", None)
        s["level"] = int(level)
    return out


@dataclass
class ConvergenceRow:
    level: int
    unknowns: int
    nodes: int
    probe_error: float
    track_error: float
    assembly_time: float
    solve_time: float
    wall_time: float


def convergence_study(doc: dict, levels, samples: int = 72,
                      numerics: Numerics | None = None) -> list[ConvergenceRow]:
    rows = []
    for lev in levels:
        t0 = time.perf_counter()
        sf = scenario_from_dict(with_level(doc, lev))
        sol = solve_scenario(sf.scenario, numerics)
        cmp_ = compare_oracle_from_file(sf, sol, samples)
        rep = sol.report
        nodes = sum(s.mesh.n_nodes for s in sf.scenario.surfaces)
        rows.append(ConvergenceRow(int(lev), rep.dimension, nodes, cmp_.probe_error,
                                   cmp_.max_track_error, rep.assembly_time, rep.solve_time,
                                   time.perf_counter() - t0))
    return rows


def compare_oracle_from_file(sf: ScenarioFile, solution: SolutionField, samples: int | None = None):
    v = sf.validation or {}
    return compare_with_oracle(
        sf.scenario,
        solution,
        oracle_config(sf),
        tuple(v.get("tracks", (2.4, 1.6, 0.8))),
        int(samples if samples is not None else v.get("samples", 72)),
        tuple(v.get("probe", (2.4, 0.0, 0.0))),
        int(v.get("order", ORACLE_ORDER)),
    )


# ---------------------------------------------------------------------------
# null test: a field that is constant on a sphere
# ---------------------------------------------------------------------------


@dataclass
class NullTestResult:
    k: complex
    levels: list[int]
    nodes: list[int]
    residuals: list[float]
    orders: list[float] = field(default_factory=list)


NULL_FIELDS = ("constant", "dipole")


def _null_field(field: str, k: complex, x: np.ndarray, radius: float):
    """Nodal values and exact normal derivatives of a regular interior field.

    ``constant`` is ``j_0(k r)``, which is constant on a centred sphere
    (``phi = 1``, ``dphi = 0`` for ``k = 0``).  ``dipole`` is
    ``3 j_1(k r) cos(theta) / k``, which reduces to ``z`` for ``k = 0``.
    """
    z = complex(k) * radius
    n = len(x)
    if field == "constant":
        if z == 0:
            return np.ones(n, dtype=complex), np.zeros(n, dtype=complex)
        j = sph_jn_all(1, z)
        return np.full(n, complex(j[0])), np.full(n, -complex(k) * complex(j[1]))
    if field == "dipole":
        cos_t = x[:, 2] / np.linalg.norm(x, axis=1)
        if z == 0:
            return radius * cos_t + 0j, cos_t + 0j
        j0, j1 = (complex(v) for v in sph_jn_all(1, z))
        k = complex(k)
        val = 3.0 * j1 / k * cos_t
        der = 3.0 * (j0 - 2.0 * j1 / z) * cos_t
        return val, der
    raise ValueError(f"unknown null field {field!r}; expected one of {NULL_FIELDS}")


def null_residual(level: int, k: complex, radius: float = 1.0, numerics: Numerics | None = None,
                  field: str = "constant") -> tuple[int, float]:
    """Row residual of the interior equations applied to an exact interior field.

    The residual is scaled by ``4 pi max |phi|``.
    """
    mesh = build_sphere_mesh(radius, subdivision_level=level, surface_id="sphere")
    sc = Scenario([Domain("in", 1.0, 1.0, False), Domain("out", 1.0, 1.0, True)],
                  [Surface(mesh, "in", "out", "interface")], [], k_ref=k, omega=1.0,
                  numerics=numerics or Numerics())
    rows = assemble_domain_equations(sc, "in")
    val, der = _null_field(field, k, mesh.nodes, radius)
    res = rows.phi_coef @ val + rows.dphi_coef @ der - rows.rhs
    return mesh.n_nodes, float(np.max(np.abs(res)) / (FOUR_PI * np.max(np.abs(val))))


def null_test(k: complex, levels=(1, 2, 3), radius: float = 1.0, field: str = "constant") -> NullTestResult:
    nodes, res = [], []
    for lev in levels:
        n, r = null_residual(lev, k, radius, field=field)
        nodes.append(n)
        res.append(r)
    orders = [float(np.log2(res[i] / res[i + 1])) for i in range(len(res) - 1)]
    return NullTestResult(complex(k), list(levels), nodes, res, orders)


# ---------------------------------------------------------------------------
# far-field pattern metrics
# ---------------------------------------------------------------------------


def dipole_correlation(pattern: RadarPattern, n_axes: int = 361) -> tuple[float, float]:
    """Best correlation of the magnitude with ``|cos(theta - theta0)|`` and its ``theta0``."""
    best = (-np.inf, 0.0)
    for t0 in np.linspace(0.0, np.pi, n_axes):
        c = float(np.corrcoef(pattern.magnitude, np.abs(np.cos(pattern.angles - t0)))[0, 1])
        if c > best[0]:
            best = (c, float(t0))
    return best
