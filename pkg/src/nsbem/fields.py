"""Post-processing of a BEM solution away from the boundaries.

Inside domain ``D`` (normal ``n`` out of ``D``)::

    4 pi phi(x) = sum_i Q_i G_k(x_i, x) - int (phi n . grad_y G_k - dphi G_k) dS_y

The pressure is ``p = i omega rho phi`` in the ``exp(-i omega t)`` convention.
Points closer than ``near_surface_threshold`` element diameters to a surface
are masked (NaN); elements within ``near_factor`` diameters of an evaluation
point are integrated with uniformly refined rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .quadrature import uniform_refined_rule
from .solver import (
    FOUR_PI,
    TIE_MARGIN,
    Numerics,
    Scenario,
    ScenarioError,
    SolutionField,
    _element_distance,
    _near_levels,
    _surface_data,
    locate_points,
)
from .mesh import geometry_at, shape_functions

PLANES = {
    # name: (first in-plane axis, second in-plane axis); angles run from the first to the second
    "xz": (np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])),
    "yz": (np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 0.0])),
    "xy": (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])),
}
MAX_EVAL_LEVELS = 6


class NearBoundaryError(ValueError):
    pass


class LocationError(ValueError):
    pass


@dataclass
class FieldSample:
    position: np.ndarray
    phi: complex
    pressure: complex
    domain: str


def _greens(d: np.ndarray, k: complex):
    """G and n-free part of grad_y G for separation d = y - x: G, (ikr - 1) G / r**2."""
    r = np.sqrt(np.einsum("...i,...i->...", d, d))
    e = np.exp(1j * k * r) / r
    return r, e, e * (1j * k * r - 1.0) / r**2


def _nodal_at(values: np.ndarray, conn: np.ndarray, shape: np.ndarray) -> np.ndarray:
    """Interpolate nodal values to quadrature points: (E, Q)."""
    return np.einsum("qa,ea->eq", shape, values[conn])


def _free_field(scenario: Scenario, domain_id: str, X: np.ndarray) -> np.ndarray:
    k = scenario.wavenumber(domain_id)
    out = np.zeros(len(X), dtype=complex)
    for src in scenario.sources:
        if src.domain != domain_id:
            continue
        r = np.linalg.norm(X - src.position, axis=1)
        # a point on a source gives a non-finite value that the caller masks
        with np.errstate(divide="ignore", invalid="ignore"):
            out += src.strength * np.exp(1j * k * r) / (FOUR_PI * r)
    return out


def _surface_data_values(solution, t, domain_id, shape, elems):
    """Interpolated boundary values (phi, dphi) at integration points (P, Q)."""
    mesh = solution.scenario.surfaces[t].mesh
    conn = mesh.elements[elems]
    f = solution.phi_side(t, domain_id)[conn]
    g = solution.dphi[t][conn]
    return f @ shape.T, g @ shape.T


def _domain_potential(scenario: Scenario, solution: SolutionField | None, domain_id: str,
                      X: np.ndarray, num: Numerics, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Potential at points X of one domain and a mask of rejected (too close) points."""
    k = scenario.wavenumber(domain_id)
    phi = _free_field(scenario, domain_id, X)
    masked = np.zeros(len(X), dtype=bool)
    if solution is None:
        return phi, masked
    for t, side in scenario.surfaces_of(domain_id):
        mesh = scenario.surfaces[t].mesh
        dat = _surface_data(mesh, num.regular_degree)
        sq = dat.sq
        E, Q = mesh.n_elements, sq.n_per_element
        fq, gq = _surface_data_values(solution, t, domain_id, sq.shape, np.arange(E))
        fq, gq = fq.reshape(-1), gq.reshape(-1)
        w = side * sq.weights
        acc = np.zeros(len(X), dtype=complex)
        pairs = []
        for a in range(0, len(X), num.chunk_size):
            c = slice(a, min(a + num.chunk_size, len(X)))
            dist = _element_distance(dat, X[c])
            ratio = dist / dat.diam[None, :]
            masked[c] |= np.any(ratio < threshold, axis=1)
            near = ratio < num.near_factor * (1.0 + TIE_MARGIN)
            ii, ee = np.nonzero(near)
            pairs.append((ii + a, ee, ratio[ii, ee]))
            keep = np.repeat(~near, Q, axis=1)
            d = sq.points[None, :, :] - X[c][:, None, :]
            _, G, g1 = _greens(d, k)
            H = np.einsum("cqi,qi->cq", d, sq.normals) * g1
            acc[c] += ((fq * H - gq * G) * keep) @ w
        ii = np.concatenate([p[0] for p in pairs])
        ee = np.concatenate([p[1] for p in pairs])
        ratio = np.concatenate([p[2] for p in pairs])
        ok = ~masked[ii]
        ii, ee, ratio = ii[ok], ee[ok], ratio[ok]
        if ii.size:
            lv = _near_levels(ratio, num.near_factor, MAX_EVAL_LEVELS)
            for level in np.unique(lv):
                sel = lv == level
                rule = uniform_refined_rule(num.near_degree, int(level))
                N, _, _ = shape_functions(rule.points[:, 0], rule.points[:, 1])
                for b in range(0, int(sel.sum()), 2000):
                    i_b = ii[sel][b : b + 2000]
                    e_b = ee[sel][b : b + 2000]
                    pos, nrm, jac = geometry_at(mesh, e_b, rule.points)
                    d = pos - X[i_b][:, None, :]
                    _, G, g1 = _greens(d, k)
                    H = np.einsum("pqi,pqi->pq", d, nrm) * g1
                    fr, gr = _surface_data_values(solution, t, domain_id, N, e_b)
                    val = np.sum((fr * H - gr * G) * jac * rule.weights[None, :], axis=1)
                    np.add.at(acc, i_b, side * val)
        phi -= acc / FOUR_PI
    phi[masked] = np.nan
    return phi, masked


def evaluate_points(scenario: Scenario, solution: SolutionField | None, points,
                    threshold: float | None = None, numerics: Numerics | None = None):
    """Potential, pressure, containing domain and mask for many points.

    Masked points (outside every domain or too close to a surface) carry NaN.
    """
    num = numerics or scenario.numerics
    thr = num.near_surface_threshold if threshold is None else threshold
    X = np.atleast_2d(np.asarray(points, dtype=float))
    where = locate_points(scenario, X) if scenario.surfaces else [
        next((d.id for d in scenario.domains if d.unbounded), scenario.domains[0].id)
    ] * len(X)
    phi = np.full(len(X), np.nan, dtype=complex)
    p = np.full(len(X), np.nan, dtype=complex)
    masked = np.ones(len(X), dtype=bool)
    labels = np.array([w if w is not None else "" for w in where], dtype=object)
    for d in scenario.domains:
        sel = np.flatnonzero(labels == d.id)
        if not sel.size:
            continue
        v, m = _domain_potential(scenario, solution, d.id, X[sel], num, thr)
        bad = ~np.isfinite(v)
        v[bad] = np.nan
        m = m | bad
        phi[sel] = v
        masked[sel] = m
        p[sel] = 1j * scenario.omega * scenario.density(d.id) * v
    return phi, p, list(where), masked


def evaluate_domain_point(scenario: Scenario, solution: SolutionField | None, x,
                          threshold: float | None = None) -> FieldSample:
    """Single-point evaluation; raises instead of masking."""
    x = np.asarray(x, dtype=float).reshape(3)
    for i, src in enumerate(scenario.sources):
        if np.allclose(src.position, x, rtol=0, atol=1e-14):
            raise ScenarioError(f"evaluation point coincides with source {i}")
    phi, p, where, masked = evaluate_points(scenario, solution, x[None, :], threshold)
    if where[0] is None:
        raise LocationError(f"point {x.tolist()} lies in no domain")
    if masked[0]:
        raise NearBoundaryError(f"point {x.tolist()} is within the near-surface threshold")
    return FieldSample(x, complex(phi[0]), complex(p[0]), where[0])


def evaluate_gradient(scenario: Scenario, solution: SolutionField | None, domain_id: str,
                      points, numerics: Numerics | None = None) -> np.ndarray:
    """grad phi at points well inside one domain (standard quadrature only)."""
    num = numerics or scenario.numerics
    k = scenario.wavenumber(domain_id)
    X = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(X.shape, dtype=complex)
    for src in scenario.sources:
        if src.domain != domain_id:
            continue
        d = src.position - X
        _, _, g1 = _greens(d, k)
        out += -src.strength * d * g1[:, None]
    acc = np.zeros(X.shape, dtype=complex)
    if solution is not None:
        for t, side in scenario.surfaces_of(domain_id):
            mesh = scenario.surfaces[t].mesh
            sq = _surface_data(mesh, num.regular_degree).sq
            fq = _nodal_at(solution.phi_side(t, domain_id), mesh.elements, sq.shape).reshape(-1)
            gq = _nodal_at(solution.dphi[t], mesh.elements, sq.shape).reshape(-1)
            w = side * sq.weights
            for a in range(0, len(X), num.chunk_size):
                c = slice(a, min(a + num.chunk_size, len(X)))
                d = sq.points[None, :, :] - X[c][:, None, :]
                r, G, g1 = _greens(d, k)
                dn = np.einsum("cqi,qi->cq", d, sq.normals)
                # derivative of (ikr - 1) exp(ikr) / r**3 with respect to r
                g1p = G * (3.0 - 3j * k * r - (k * r) ** 2) / r**3
                gradG = -d * g1[..., None]
                gradH = -sq.normals[None] * g1[..., None] - (dn * g1p / r)[..., None] * d
                acc[c] += np.einsum("q,cqi->ci", fq * w, gradH) - np.einsum("q,cqi->ci", gq * w, gradG)
    return (out - acc) / FOUR_PI


# ---------------------------------------------------------------------------
# normalisation, slices, patterns, metrics
# ---------------------------------------------------------------------------


def monopole_reference_pressure(scenario: Scenario) -> float:
    """rho omega |Q| / (4 pi) of the strongest source in its own medium."""
    if not scenario.sources:
        return 1.0
    src = max(scenario.sources, key=lambda s: abs(s.strength))
    if src.strength == 0:
        return 1.0
    return scenario.density(src.domain) * scenario.omega * abs(src.strength) / FOUR_PI


@dataclass
class PlaneSpec:
    """Rectangle ``origin + s u + t v`` with s in [s_min, s_max], t in [t_min, t_max]."""

    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray
    s_range: tuple[float, float]
    t_range: tuple[float, float]

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)

    def points(self, resolution: tuple[int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ns, nt = resolution
        s = np.linspace(*self.s_range, ns)
        t = np.linspace(*self.t_range, nt)
        S, T = np.meshgrid(s, t, indexing="xy")
        P = self.origin + S.reshape(-1, 1) * self.u + T.reshape(-1, 1) * self.v
        return P, s, t


@dataclass
class GridSlice:
    points: np.ndarray
    s: np.ndarray
    t: np.ndarray
    pressure: np.ndarray
    masked: np.ndarray
    scale: float
    plane: PlaneSpec | None = None

    @property
    def abs_normalized(self) -> np.ndarray:
        return np.abs(self.pressure) / self.scale

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(~self.masked))

    def as_image(self, values=None) -> np.ndarray:
        v = self.abs_normalized if values is None else values
        return np.asarray(v).reshape(len(self.t), len(self.s))


def pressure_grid_slice(scenario: Scenario, solution: SolutionField | None, plane: PlaneSpec,
                        resolution: tuple[int, int], normalization: str = "monopole_reference",
                        threshold: float | None = None) -> GridSlice:
    if normalization not in ("monopole_reference", "none"):
        raise ValueError(f"unknown normalization {normalization!r}")
    P, s, t = plane.points(resolution)
    _, p, _, masked = evaluate_points(scenario, solution, P, threshold)
    scale = monopole_reference_pressure(scenario) if normalization == "monopole_reference" else 1.0
    return GridSlice(P, s, t, p, masked, scale, plane)


@dataclass
class RadarPattern:
    radius: float
    plane: str
    angles: np.ndarray
    magnitude: np.ndarray
    pressure: np.ndarray


def far_field_pattern(scenario: Scenario, solution: SolutionField | None, radius: float,
                      plane: str = "xz", n_angles: int = 360, subtract_incident: bool = True,
                      center=(0.0, 0.0, 0.0), angles=None) -> RadarPattern:
    """Pressure on a circle; angles run from the plane's first axis towards its second.

    ``angles`` (radians) overrides the uniform ``n_angles`` sampling.
    """
    e1, e2 = PLANES[plane]
    c = np.asarray(center, dtype=float)
    for t, s in enumerate(scenario.surfaces):
        if np.linalg.norm(s.mesh.nodes - c, axis=1).max() >= radius:
            raise ScenarioError(f"radar radius {radius} intersects surface {t} ({s.id})")
    for i, src in enumerate(scenario.sources):
        if np.linalg.norm(src.position - c) >= radius:
            raise ScenarioError(f"radar radius {radius} does not enclose source {i}")
    if angles is None:
        ang = 2 * np.pi * np.arange(n_angles) / n_angles
    else:
        ang = np.asarray(angles, dtype=float).ravel()
    P = c + radius * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)
    _, p, where, _ = evaluate_points(scenario, solution, P)
    if subtract_incident:
        for d in {w for w in where if w is not None}:
            sel = np.array([w == d for w in where])
            p[sel] -= 1j * scenario.omega * scenario.density(d) * _free_field(scenario, d, P[sel])
    return RadarPattern(float(radius), plane, ang, np.abs(p), p)


def beam_direction(scenario: Scenario, solution: SolutionField | None, radius: float,
                   plane: str = "xz", n_angles: int = 720, subtract_incident: bool = True,
                   fine_points: int = 41) -> tuple[float, float]:
    """Direction of the far-field maximum as (angle in (-pi, pi], magnitude).

    The coarse maximum is resampled on ``fine_points`` angles spanning one coarse
    step either side of it, then refined by a parabola.
    """
    coarse = far_field_pattern(scenario, solution, radius, plane, n_angles, subtract_incident)
    i = int(np.argmax(coarse.magnitude))
    step = 2 * np.pi / n_angles
    ang = coarse.angles[i] + np.linspace(-step, step, fine_points)
    fine = far_field_pattern(scenario, solution, radius, plane, subtract_incident=subtract_incident,
                             angles=ang)
    mag, theta = _parabolic_peak(ang, fine.magnitude, int(np.argmax(fine.magnitude)))
    theta = float(np.angle(np.exp(1j * theta)))
    return theta, mag


def _parabolic_peak(x: np.ndarray, y: np.ndarray, i: int) -> tuple[float, float]:
    """Refine a discrete maximum; no refinement at the ends or next to a masked sample."""
    if i == 0 or i == len(x) - 1 or not np.all(np.isfinite(y[i - 1 : i + 2])):
        return float(y[i]), float(x[i])
    xs, ys = x[i - 1 : i + 2], y[i - 1 : i + 2]
    a, b, c = np.polyfit(xs - xs[1], ys, 2)
    if a >= 0:
        return float(y[i]), float(x[i])
    dx = -b / (2 * a)
    dx = float(np.clip(dx, 0.5 * (xs[0] - xs[1]), 0.5 * (xs[2] - xs[1])))
    return float(a * dx * dx + b * dx + c), float(xs[1] + dx)


def focal_metrics(coords, values) -> tuple[float, float]:
    """Maximum of sampled values along a line, refined by a parabola through 3 samples.

    NaN samples are ignored for the maximum and are never used in the refinement.
    Returns (maximum value, position).
    """
    x = np.asarray(coords, dtype=float)
    y = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample set")
    if not np.any(np.isfinite(y)):
        raise ValueError("no valid samples")
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    return _parabolic_peak(x, y, int(np.nanargmax(y)))


def focal_metrics_grid(grid: GridSlice) -> tuple[float, float, float]:
    """(max, s, t) of a slice's normalised magnitude with per-axis parabolic refinement.

    Along an axis without refinement (masked neighbour or edge) the gain is zero.
    """
    img = grid.as_image()
    if not np.any(np.isfinite(img)):
        raise ValueError("no valid samples")
    it, is_ = np.unravel_index(int(np.nanargmax(img)), img.shape)
    vs, s = _parabolic_peak(grid.s, img[it], is_)
    vt, t = _parabolic_peak(grid.t, img[:, is_], it)
    # the two gains over the sample add up exactly for a separable quadratic peak
    return vs + vt - float(img[it, is_]), s, t


def time_snapshot(pressure, phase: float) -> np.ndarray:
    """Instantaneous real pressure Re(p exp(-i phase)); NaN entries stay NaN."""
    p = np.asarray(pressure, dtype=complex)
    return np.real(p * np.exp(-1j * phase))


def intensity_flux(scenario: Scenario, solution: SolutionField | None, domain_id: str,
                   center, radius: float, level: int = 3) -> float:
    """Net time-averaged flux (1/2) Re int p conj(v_n) dS through a sphere."""
    from .mesh import build_sphere_mesh, surface_quadrature
    from .quadrature import quadrature_rule

    sph = build_sphere_mesh(radius, center, subdivision_level=level)
    sq = surface_quadrature(sph, quadrature_rule(6))
    phi, p, _, _ = evaluate_points(scenario, solution, sq.points)
    grad = evaluate_gradient(scenario, solution, domain_id, sq.points)
    vn = np.einsum("qi,qi->q", grad, sq.normals)
    return float(0.5 * np.real(np.sum(p * np.conj(vn) * sq.weights)))


# ---------------------------------------------------------------------------
# file output
# ---------------------------------------------------------------------------


def _g(x: float) -> str:
    return f"{x:.17g}"


def write_grid_csv(grid: GridSlice, path) -> None:
    lines = ["x,y,z,re_p,im_p,abs_p_normalized,masked"]
    a = grid.abs_normalized
    for P, p, v, m in zip(grid.points, grid.pressure, a, grid.masked):
        if m or not np.isfinite(p):
            lines.append(f"{_g(P[0])},{_g(P[1])},{_g(P[2])},nan,nan,nan,1")
        else:
            lines.append(f"{_g(P[0])},{_g(P[1])},{_g(P[2])},{_g(p.real)},{_g(p.imag)},{_g(v)},0")
    Path(path).write_text("\n".join(lines) + "\n")


def write_radar_csv(pattern: RadarPattern, path) -> None:
    lines = ["theta_rad,abs_p_sc"]
    lines += [f"{_g(a)},{_g(m)}" for a, m in zip(pattern.angles, pattern.magnitude)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_snapshot_csv(grid: GridSlice, phases, path) -> None:
    phases = list(phases)
    lines = ["x,y,z," + ",".join(f"p_phase_{i}" for i in range(len(phases)))]
    snaps = [time_snapshot(grid.pressure, ph) / grid.scale for ph in phases]
    for q, P in enumerate(grid.points):
        vals = ["nan" if grid.masked[q] else _g(s[q]) for s in snaps]
        lines.append(f"{_g(P[0])},{_g(P[1])},{_g(P[2])}," + ",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def write_vtk(grid: GridSlice, path, name: str = "abs_p") -> None:
    """Legacy ASCII VTK of the normalised magnitude (masked points written as 0)."""
    ns, nt = len(grid.s), len(grid.t)
    vals = np.nan_to_num(grid.abs_normalized, nan=0.0)
    plane = grid.plane
    axes = None
    if plane is not None:
        iu = np.flatnonzero(plane.u)
        iv = np.flatnonzero(plane.v)
        if (len(iu) == 1 and len(iv) == 1 and iu[0] < iv[0]
                and plane.u[iu[0]] > 0 and plane.v[iv[0]] > 0):
            axes = (int(iu[0]), int(iv[0]))
    out = ["# vtk DataFile Version 3.0", name, "ASCII"]
    if axes is not None:
        dims = [1, 1, 1]
        spacing = [1.0, 1.0, 1.0]
        dims[axes[0]], dims[axes[1]] = ns, nt
        ds = (grid.s[1] - grid.s[0]) if ns > 1 else 1.0
        dt = (grid.t[1] - grid.t[0]) if nt > 1 else 1.0
        spacing[axes[0]] = ds * abs(plane.u[axes[0]])
        spacing[axes[1]] = dt * abs(plane.v[axes[1]])
        org = grid.points[0]
        out += [
            "DATASET STRUCTURED_POINTS",
            f"DIMENSIONS {dims[0]} {dims[1]} {dims[2]}",
            f"ORIGIN {_g(org[0])} {_g(org[1])} {_g(org[2])}",
            f"SPACING {_g(spacing[0])} {_g(spacing[1])} {_g(spacing[2])}",
        ]
    else:
        out += ["DATASET STRUCTURED_GRID", f"DIMENSIONS {ns} {nt} 1", f"POINTS {ns * nt} double"]
        out += [f"{_g(p[0])} {_g(p[1])} {_g(p[2])}" for p in grid.points]
    out += [f"POINT_DATA {ns * nt}", f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
    out += [_g(v) for v in vals]
    Path(path).write_text("\n".join(out) + "\n")
