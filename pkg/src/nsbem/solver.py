"""Desingularised collocation BEM for piecewise-homogeneous Helmholtz problems.

For a domain ``D`` with boundary normal ``n`` pointing out of ``D`` and a
collocation node ``x0`` the assembled row is::

    4 pi [D unbounded] phi(x0) + int (phi H_k - psi H_0) dS
        = int (dphi G_k - dpsi G_0) dS + sum_i Q_i G_k(x_i, x0)

    psi(x)  = phi(x0) + n(x0) . (x - x0) dphi(x0)
    dpsi(x) = n(x) . n(x0) dphi(x0)

Both integrands are bounded, so every element, including the ones touching
``x0``, is integrated with ordinary Gauss rules (composite rules graded towards
``x0`` on the touching elements, where the integrand is bounded but not
smooth).

Every surface stores its normal from its inner to its outer side.  Integrals
are evaluated in that orientation and multiplied by the side factor ``s = +1``
when the domain lies on the inner side, ``-1`` otherwise.  ``psi`` and
``dpsi`` are invariant under the flip.

Unknowns per surface node: interface ``(phi_inner, dphi)``, rigid ``phi`` of
the fluid side, pressure-release ``dphi``.  On an interface
``phi_outer = (rho_inner / rho_outer) phi_inner`` and ``dphi`` is shared.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .kernels import regularized_parts
from .mesh import (
    NODE_REF_COORDS,
    QuadraticTriangleMesh,
    element_diameters,
    geometry_at,
    mesh_integrity_check,
    nodal_normals,
    shape_functions,
    surface_quadrature,
)
from .quadrature import graded_rule, quadrature_rule, uniform_refined_rule

FOUR_PI = 4.0 * np.pi
BC_TAGS = ("interface", "rigid", "pressure_release")
MAX_NEAR_LEVELS = 4
# relative margin so that exact ties in the near-element test (common on
# symmetric meshes) are classified the same way after a rigid motion
TIE_MARGIN = 1e-9
# dense copies above this size (about 0.8 GB each) are avoided
KEEP_MATRIX_MAX = 7000


class ScenarioError(ValueError):
    """Inconsistent scenario description."""


class AssemblyError(RuntimeError):
    pass


class SingularSystemError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# scenario description
# ---------------------------------------------------------------------------


@dataclass
class Domain:
    """Homogeneous medium; ``k_ratio`` and ``rho_ratio`` are relative to the reference."""

    id: str
    k_ratio: complex = 1.0
    rho_ratio: float = 1.0
    unbounded: bool = False


@dataclass
class Surface:
    """A closed mesh with the media on either side.

    For ``rigid`` and ``pressure_release`` surfaces exactly one of ``inner``
    and ``outer`` names a domain; the other side is not part of the problem.
    """

    mesh: QuadraticTriangleMesh
    inner: str | None
    outer: str | None
    bc: str = "interface"

    @property
    def id(self) -> str:
        return self.mesh.surface_id

    def side(self, domain_id: str) -> int:
        if domain_id == self.inner:
            return 1
        if domain_id == self.outer:
            return -1
        return 0

    def fluid_sides(self) -> list[str]:
        return [d for d in (self.inner, self.outer) if d is not None]


@dataclass
class Source:
    domain: str
    position: np.ndarray
    strength: complex = 1.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.strength = complex(self.strength)


@dataclass
class Numerics:
    """Quadrature controls.

    Elements touching the collocation node get a composite rule of
    ``near_degree`` graded ``self_levels`` times towards the node.  Elements
    whose distance to the node is below ``near_factor`` element diameters are
    uniformly subdivided, more finely the closer they are.
    """

    regular_degree: int = 6
    near_degree: int = 8
    self_levels: int = 4
    near_factor: float = 1.0
    max_near_levels: int = MAX_NEAR_LEVELS
    near_surface_threshold: float = 0.2
    chunk_size: int = 128


@dataclass
class Scenario:
    domains: list[Domain]
    surfaces: list[Surface] = field(default_factory=list)
    sources: list[Source] = field(default_factory=list)
    k_ref: complex = 1.0
    omega: float = 1.0
    rho_ref: float = 1.0
    numerics: Numerics = field(default_factory=Numerics)

    def domain(self, domain_id: str) -> Domain:
        for d in self.domains:
            if d.id == domain_id:
                return d
        raise ScenarioError(f"unknown domain {domain_id!r}")

    def wavenumber(self, domain_id: str) -> complex:
        return complex(self.k_ref) * complex(self.domain(domain_id).k_ratio)

    def density(self, domain_id: str) -> float:
        return float(self.rho_ref) * float(self.domain(domain_id).rho_ratio)

    def surfaces_of(self, domain_id: str) -> list[tuple[int, int]]:
        """(surface index, side factor) for every surface bounding the domain."""
        out = []
        for t, s in enumerate(self.surfaces):
            side = s.side(domain_id)
            if side:
                out.append((t, side))
        return out

    def validate(self, check_meshes: bool = False) -> None:
        ids = [d.id for d in self.domains]
        if len(set(ids)) != len(ids):
            raise ScenarioError("domain ids must be unique")
        if sum(d.unbounded for d in self.domains) > 1:
            raise ScenarioError("at most one domain may be unbounded")
        for d in self.domains:
            if d.rho_ratio <= 0:
                raise ScenarioError(f"domain {d.id!r}: density must be positive")
        for t, s in enumerate(self.surfaces):
            if s.bc not in BC_TAGS:
                raise ScenarioError(f"surface {t} ({s.id}): unknown boundary condition {s.bc!r}")
            for d in (s.inner, s.outer):
                if d is not None and d not in ids:
                    raise ScenarioError(f"surface {t} ({s.id}): unknown domain {d!r}")
            if s.bc == "interface":
                if s.inner is None or s.outer is None or s.inner == s.outer:
                    raise ScenarioError(
                        f"surface {t} ({s.id}): an interface needs two distinct domains"
                    )
            elif (s.inner is None) == (s.outer is None):
                raise ScenarioError(
                    f"surface {t} ({s.id}): a {s.bc} surface borders exactly one domain"
                )
            if check_meshes:
                rep = mesh_integrity_check(s.mesh)
                if not rep.ok:
                    raise ScenarioError(f"surface {t} ({s.id}): " + "; ".join(rep.problems))
        for i, src in enumerate(self.sources):
            if src.domain not in ids:
                raise ScenarioError(f"source {i}: unknown domain {src.domain!r}")
            for t, s in enumerate(self.surfaces):
                d = np.linalg.norm(s.mesh.nodes - src.position, axis=1).min()
                if d < 1e-3 * float(element_diameters(s.mesh).min()):
                    raise ScenarioError(f"source {i} lies on surface {t} ({s.id})")
            if self.surfaces:
                where = locate_points(self, src.position[None, :])[0]
                if where != src.domain:
                    raise ScenarioError(
                        f"source {i} declared in {src.domain!r} but located in {where!r}"
                    )


# ---------------------------------------------------------------------------
# point location
# ---------------------------------------------------------------------------


def winding_numbers(mesh: QuadraticTriangleMesh, points: np.ndarray, degree: int = 6) -> np.ndarray:
    """Solid angle subtended by the closed surface over 4 pi: ~1 inside, ~0 outside."""
    sq = surface_quadrature(mesh, quadrature_rule(degree))
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(len(pts))
    for a in range(0, len(pts), 256):
        d = sq.points[None, :, :] - pts[a : a + 256, None, :]
        r = np.linalg.norm(d, axis=-1)
        dn = np.einsum("pqi,qi->pq", d, sq.normals)
        out[a : a + 256] = (dn / r**3) @ sq.weights / FOUR_PI
    return out


def locate_points(scenario: Scenario, points: np.ndarray) -> list[str | None]:
    """Domain containing each point (None for excluded regions)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    inside = [winding_numbers(s.mesh, pts) > 0.5 for s in scenario.surfaces]
    result: list[str | None] = []
    for p in range(len(pts)):
        found = None
        for d in scenario.domains:
            sides = scenario.surfaces_of(d.id)
            if not sides and not d.unbounded:
                continue
            ok = all(inside[t][p] if side > 0 else not inside[t][p] for t, side in sides)
            if ok and (sides or d.unbounded):
                # a bounded domain needs at least one enclosing surface
                if not d.unbounded and not any(side > 0 for _, side in sides):
                    continue
                found = d.id
                break
        result.append(found)
    return result


# ---------------------------------------------------------------------------
# unknown layout and containers
# ---------------------------------------------------------------------------


@dataclass
class UnknownLayout:
    """Column offsets of each surface's phi and dphi blocks and row offsets per (surface, domain)."""

    phi_offset: list[int | None]
    dphi_offset: list[int | None]
    row_offset: dict[tuple[int, str], int]
    size: int

    @classmethod
    def build(cls, scenario: Scenario) -> "UnknownLayout":
        phi, dphi = [], []
        col = 0
        for s in scenario.surfaces:
            n = s.mesh.n_nodes
            if s.bc in ("interface", "rigid"):
                phi.append(col)
                col += n
            else:
                phi.append(None)
            if s.bc in ("interface", "pressure_release"):
                dphi.append(col)
                col += n
            else:
                dphi.append(None)
        rows = {}
        row = 0
        for t, s in enumerate(scenario.surfaces):
            for d in s.fluid_sides():
                rows[(t, d)] = row
                row += s.mesh.n_nodes
        if row != col:
            raise AssemblyError(f"row count {row} differs from unknown count {col}")
        return cls(phi, dphi, rows, col)


@dataclass
class DomainRows:
    """Rows of one domain in terms of that domain's own side values.

    ``phi_coef[i, j]`` multiplies the domain-side potential at domain node
    ``j``; ``dphi_coef[i, j]`` multiplies the normal derivative in stored
    orientation.  Domain nodes are the nodes of ``surfaces`` concatenated;
    row ``i`` belongs to domain node ``row_start + i``.
    """

    domain_id: str
    surfaces: list[tuple[int, int]]
    node_offsets: list[int]
    phi_coef: np.ndarray | None
    dphi_coef: np.ndarray | None
    rhs: np.ndarray
    warnings: list[str] = field(default_factory=list)
    row_start: int = 0

    @property
    def n_rows(self) -> int:
        return len(self.rhs)


@dataclass
class DenseComplexSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    layout: UnknownLayout
    warnings: list[str] = field(default_factory=list)
    assembly_time: float = 0.0

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


@dataclass
class SolveReport:
    dimension: int
    residual: float
    assembly_time: float
    solve_time: float
    warnings: list[str] = field(default_factory=list)

    def as_text(self) -> str:
        lines = [
            f"unknowns        {self.dimension}",
            f"residual        {self.residual:.3e}",
            f"assembly_time_s {self.assembly_time:.3f}",
            f"solve_time_s    {self.solve_time:.3f}",
        ]
        lines += [f"warning         {w}" for w in self.warnings]
        return "\n".join(lines)


@dataclass
class SolutionField:
    """Nodal surface values.

    ``phi[t]`` is the inner-side potential for interfaces and the fluid-side
    potential for rigid surfaces (zeros on pressure-release surfaces);
    ``dphi[t]`` is the normal derivative along the stored normal (zeros on
    rigid surfaces).
    """

    scenario: Scenario
    phi: list[np.ndarray]
    dphi: list[np.ndarray]
    report: SolveReport | None = None

    def phi_side(self, t: int, domain_id: str) -> np.ndarray:
        s = self.scenario.surfaces[t]
        if s.bc == "interface" and domain_id == s.outer:
            return self.phi[t] * (self.scenario.density(s.inner) / self.scenario.density(s.outer))
        return self.phi[t]

    def dphi_side(self, t: int, domain_id: str) -> np.ndarray:
        """Normal derivative along the normal pointing out of ``domain_id``."""
        return self.scenario.surfaces[t].side(domain_id) * self.dphi[t]


# ---------------------------------------------------------------------------
# integration helpers
# ---------------------------------------------------------------------------


def minimum_degree(k, diameter: float) -> int:
    """Smallest regular quadrature degree regarded as adequate for |k| h."""
    return min(40, 4 + 2 * math.ceil(abs(complex(k)) * diameter))


def _near_levels(ratio: np.ndarray, factor: float, max_levels: int) -> np.ndarray:
    with np.errstate(divide="ignore"):
        lv = np.ceil(np.log2(factor * (1.0 + TIE_MARGIN) / np.maximum(ratio, 1e-300)))
    return np.clip(lv, 1, max_levels).astype(int)


@dataclass
class _SurfaceData:
    mesh: QuadraticTriangleMesh
    sq: object
    diam: np.ndarray
    probe: np.ndarray  # (E, 6 + Q, 3) nodes and quadrature points per element


def _surface_data(mesh: QuadraticTriangleMesh, degree: int) -> _SurfaceData:
    sq = surface_quadrature(mesh, quadrature_rule(degree))
    E = mesh.n_elements
    probe = np.concatenate(
        [mesh.nodes[mesh.elements], sq.points.reshape(E, sq.n_per_element, 3)], axis=1
    )
    return _SurfaceData(mesh, sq, element_diameters(mesh), probe)


def _element_distance(data: _SurfaceData, x: np.ndarray) -> np.ndarray:
    """Approximate distance from points x (c, 3) to every element (c, E)."""
    d2 = 0.0
    for a in range(3):
        d2 = d2 + (data.probe[None, :, :, a] - x[:, None, None, a]) ** 2
    return np.sqrt(np.min(d2, axis=2))


def _pair_contributions(x0, n0, pos, nrm, wj, shape, k, sign, want_dphi):
    """Integrals over one element per (collocation point, element) pair.

    ``pos``, ``nrm`` (P, Q, 3); ``wj`` (P, Q) weights times jacobian;
    ``shape`` (Q, 6) or (P, Q, 6).  Returns nodal coefficients (P, 6) and
    the diagonal parts (P,) of the phi and dphi rows.
    """
    d = pos - x0[:, None, :]
    r = np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2 + d[..., 2] ** 2)
    dn = d[..., 0] * nrm[..., 0] + d[..., 1] * nrm[..., 1] + d[..., 2] * nrm[..., 2]
    g0 = 1.0 / r
    h0 = -dn / r**3
    dg, dh = regularized_parts(r, dn, k)
    w = sign * wj
    ein = "pq,qa->pa" if shape.ndim == 2 else "pq,pqa->pa"
    phi_coef = np.einsum(ein, (h0 + dh) * w, shape)
    phi_diag = -np.sum(h0 * w, axis=1)
    if not want_dphi:
        return phi_coef, phi_diag, None, None
    dn0 = d[..., 0] * n0[:, 0, None] + d[..., 1] * n0[:, 1, None] + d[..., 2] * n0[:, 2, None]
    nn0 = nrm[..., 0] * n0[:, 0, None] + nrm[..., 1] * n0[:, 1, None] + nrm[..., 2] * n0[:, 2, None]
    dphi_coef = -np.einsum(ein, (g0 + dg) * w, shape)
    dphi_diag = np.sum((-dn0 * h0 + nn0 * g0) * w, axis=1)
    return phi_coef, phi_diag, dphi_coef, dphi_diag


def _refined_pairs(data: _SurfaceData, rule, elems: np.ndarray, batch: int = 4000):
    """Yield (slice, pos, nrm, wj) for a composite rule on the given elements."""
    for a in range(0, len(elems), batch):
        sl = slice(a, min(a + batch, len(elems)))
        pos, nrm, jac = geometry_at(data.mesh, elems[sl], rule.points)
        yield sl, pos, nrm, jac * rule.weights[None, :]


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def monopole_rhs(scenario: Scenario, domain_id: str, x0: np.ndarray) -> np.ndarray:
    """Sum of Q_i exp(i k |x_i - x0|) / |x_i - x0| over the domain's sources."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    out = np.zeros(len(x0), dtype=complex)
    k = scenario.wavenumber(domain_id)
    for i, src in enumerate(scenario.sources):
        if src.domain != domain_id:
            continue
        r = np.linalg.norm(x0 - src.position, axis=1)
        if np.any(r == 0):
            raise ScenarioError(f"source {i} coincides with a collocation node")
        out += src.strength * np.exp(1j * k * r) / r
    return out


def _domain_needs(scenario: Scenario, surfaces) -> tuple[bool, bool]:
    bcs = {scenario.surfaces[t].bc for t, _ in surfaces}
    return bool(bcs & {"interface", "rigid"}), bool(bcs & {"interface", "pressure_release"})


def assemble_domain_equations(scenario: Scenario, domain_id: str,
                              numerics: Numerics | None = None,
                              rows: tuple[int, int] | None = None) -> DomainRows:
    """Collocation rows of one domain at the nodes of its bounding surfaces.

    ``rows = (r0, r1)`` restricts the assembly to domain nodes ``r0 .. r1 - 1``.
    """
    num = numerics or scenario.numerics
    dom = scenario.domain(domain_id)
    k = scenario.wavenumber(domain_id)
    surfs = scenario.surfaces_of(domain_id)
    offsets = []
    M = 0
    for t, _ in surfs:
        offsets.append(M)
        M += scenario.surfaces[t].mesh.n_nodes
    r0, r1 = (0, M) if rows is None else (max(0, int(rows[0])), min(M, int(rows[1])))
    if M == 0 or r1 <= r0:
        z = np.zeros((0, M), dtype=complex)
        return DomainRows(domain_id, surfs, offsets, z, z.copy(), np.zeros(0, dtype=complex), row_start=r0)
    want_phi, want_dphi = _domain_needs(scenario, surfs)
    notes: list[str] = []

    meshes = [scenario.surfaces[t].mesh for t, _ in surfs]
    X0 = np.vstack([m.nodes for m in meshes])
    N0 = np.vstack([nodal_normals(m) for m in meshes])
    data = [_surface_data(m, num.regular_degree) for m in meshes]
    for (t, _), dat in zip(surfs, data):
        need = minimum_degree(k, float(dat.diam.max()))
        if num.regular_degree < need:
            notes.append(
                f"domain {domain_id}: quadrature degree {num.regular_degree} below the "
                f"suggested minimum {need} for |k| h on surface {scenario.surfaces[t].id}"
            )

    # sparse maps from quadrature values to domain-node coefficients
    shapes = []
    for (t, side), off, dat in zip(surfs, offsets, data):
        sq = dat.sq
        E, Q = dat.mesh.n_elements, sq.n_per_element
        rows = np.arange(E * Q).repeat(6)
        cols = (off + dat.mesh.elements[np.arange(E).repeat(Q)]).ravel()
        vals = (np.tile(sq.shape, (E, 1)) * (side * sq.weights)[:, None]).ravel()
        shapes.append(sp.csr_matrix((vals, (rows, cols)), shape=(E * Q, M)).T.tocsr())

    R = r1 - r0
    phi_coef = np.zeros((R, M), dtype=complex) if want_phi else None
    dphi_coef = np.zeros((R, M), dtype=complex) if want_dphi else None
    phi_diag = np.full(R, FOUR_PI if dom.unbounded else 0.0, dtype=complex)
    dphi_diag = np.zeros(R, dtype=complex)
    near_pairs: list[list[tuple[np.ndarray, np.ndarray, np.ndarray]]] = [[] for _ in surfs]

    # collocation node -> (surface position, local node index)
    owner = np.concatenate([np.full(m.n_nodes, j) for j, m in enumerate(meshes)])
    local = np.concatenate([np.arange(m.n_nodes) for m in meshes])

    for a in range(r0, r1, num.chunk_size):
        b = min(a + num.chunk_size, r1)
        x0, n0 = X0[a:b], N0[a:b]
        c = slice(a - r0, b - r0)
        for j, ((t, side), dat, S) in enumerate(zip(surfs, data, shapes)):
            sq = dat.sq
            E, Q = dat.mesh.n_elements, sq.n_per_element
            dist = _element_distance(dat, x0)
            near = dist < num.near_factor * (1.0 + TIE_MARGIN) * dat.diam[None, :]
            ii, ee = np.nonzero(near)
            near_pairs[j].append((ii + (a - r0), ee, dist[ii, ee] / dat.diam[ee]))
            keep = np.repeat(~near, Q, axis=1).astype(float)

            # far pairs only: the plain kernels carry no cancellation here
            dx, dy, dz = (sq.points[None, :, a_] - x0[:, a_, None] for a_ in range(3))
            r = np.sqrt(dx * dx + dy * dy + dz * dz)
            dn = dx * sq.normals[:, 0] + dy * sq.normals[:, 1] + dz * sq.normals[:, 2]
            inv = keep / r
            g0 = inv
            h0 = -dn * inv / (r * r)
            ek = np.exp(1j * k * r) if k != 0 else np.ones_like(r)
            w = side * sq.weights
            if want_phi:
                hk = h0 * ek * (1.0 - 1j * k * r)
                phi_coef[c] += (S @ hk.T).T
            phi_diag[c] -= h0 @ w
            if want_dphi:
                dphi_coef[c] -= (S @ (g0 * ek).T).T
                dn0 = dx * n0[:, 0, None] + dy * n0[:, 1, None] + dz * n0[:, 2, None]
                nn0 = n0 @ sq.normals.T
                dphi_diag[c] += (-dn0 * h0 + nn0 * g0) @ w

    # touching and nearby elements
    for j, ((t, side), off, dat) in enumerate(zip(surfs, offsets, data)):
        if not near_pairs[j]:
            continue
        ii = np.concatenate([p[0] for p in near_pairs[j]])
        ee = np.concatenate([p[1] for p in near_pairs[j]])
        ratio = np.concatenate([p[2] for p in near_pairs[j]])
        conn = dat.mesh.elements
        # position of the collocation node inside the element, -1 if absent
        same = owner[ii + r0] == j
        pos_in = np.full(len(ii), -1)
        if np.any(same):
            match = conn[ee[same]] == local[ii[same] + r0][:, None]
            has = match.any(axis=1)
            idx = np.flatnonzero(same)
            pos_in[idx[has]] = np.argmax(match[has], axis=1)
        groups = {}
        for node_pos in range(6):
            sel = np.flatnonzero(pos_in == node_pos)
            if sel.size:
                target = tuple(float(v) for v in NODE_REF_COORDS[node_pos])
                groups[("graded", node_pos)] = (graded_rule(num.near_degree, num.self_levels, target), sel)
        rest = np.flatnonzero(pos_in < 0)
        if rest.size:
            lv = _near_levels(ratio[rest], num.near_factor, num.max_near_levels)
            for level in np.unique(lv):
                groups[("uniform", int(level))] = (
                    uniform_refined_rule(num.near_degree, int(level)), rest[lv == level]
                )
        for rule, sel in groups.values():
            N, _, _ = shape_functions(rule.points[:, 0], rule.points[:, 1])
            for sl, pos, nrm, wj in _refined_pairs(dat, rule, ee[sel]):
                rows_i = ii[sel][sl]
                pc, pd, dc, dd = _pair_contributions(
                    X0[rows_i + r0], N0[rows_i + r0], pos, nrm, wj, N, k, side, want_dphi
                )
                cols = off + conn[ee[sel][sl]]
                if want_phi:
                    np.add.at(phi_coef, (rows_i[:, None], cols), pc)
                np.add.at(phi_diag, rows_i, pd)
                if want_dphi:
                    np.add.at(dphi_coef, (rows_i[:, None], cols), dc)
                    np.add.at(dphi_diag, rows_i, dd)

    loc = np.arange(R)
    if want_phi:
        phi_coef[loc, loc + r0] += phi_diag
    if want_dphi:
        dphi_coef[loc, loc + r0] += dphi_diag
    for name, arr in (("phi", phi_coef), ("dphi", dphi_coef)):
        if arr is not None and not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise AssemblyError(
                f"non-finite {name} coefficient in domain {domain_id} at collocation node "
                f"{int(bad[0]) + r0}, column {int(bad[1])}"
            )
    rhs = monopole_rhs(scenario, domain_id, X0[r0:r1])
    return DomainRows(domain_id, surfs, offsets, phi_coef, dphi_coef, rhs, notes, r0)


def couple_interfaces(scenario: Scenario, parts: list[DomainRows],
                      layout: UnknownLayout | None = None,
                      out: DenseComplexSystem | None = None) -> DenseComplexSystem:
    """Map domain-side rows onto the shared unknowns and apply boundary conditions.

    With ``out`` given, the rows are added into that system (used to
    assemble one domain at a time).
    """
    layout = layout or UnknownLayout.build(scenario)
    if out is None:
        out = DenseComplexSystem(
            np.zeros((layout.size, layout.size), dtype=complex),
            np.zeros(layout.size, dtype=complex),
            layout,
        )
    A, b = out.matrix, out.rhs
    for part in parts:
        D = part.domain_id
        p0, p1 = part.row_start, part.row_start + part.n_rows
        for (t_row, _), r_off in zip(part.surfaces, part.node_offsets):
            n_row = scenario.surfaces[t_row].mesh.n_nodes
            lo, hi = max(r_off, p0), min(r_off + n_row, p1)
            if hi <= lo:
                continue
            g0 = layout.row_offset[(t_row, D)] + lo - r_off
            g_rows = slice(g0, g0 + hi - lo)
            l_rows = slice(lo - p0, hi - p0)
            b[g_rows] += part.rhs[l_rows]
            for (t, _), c_off in zip(part.surfaces, part.node_offsets):
                s = scenario.surfaces[t]
                n = s.mesh.n_nodes
                l_cols = slice(c_off, c_off + n)
                if layout.phi_offset[t] is not None:
                    fac = 1.0
                    if s.bc == "interface" and D == s.outer:
                        fac = scenario.density(s.inner) / scenario.density(s.outer)
                    g = layout.phi_offset[t]
                    A[g_rows, g : g + n] += fac * part.phi_coef[l_rows, l_cols]
                if layout.dphi_offset[t] is not None:
                    g = layout.dphi_offset[t]
                    A[g_rows, g : g + n] += part.dphi_coef[l_rows, l_cols]
        out.warnings.extend(part.warnings)
    return out


def build_system(scenario: Scenario, numerics: Numerics | None = None,
                 block_rows: int = 1024) -> DenseComplexSystem:
    """Assemble every domain and couple them into one dense system.

    Domains are assembled ``block_rows`` rows at a time, so the temporary
    storage stays at two ``block_rows x M`` arrays.
    """
    t0 = time.perf_counter()
    scenario.validate()
    layout = UnknownLayout.build(scenario)
    system = DenseComplexSystem(
        np.zeros((layout.size, layout.size), dtype=complex), np.zeros(layout.size, dtype=complex), layout
    )
    for d in scenario.domains:
        M = sum(scenario.surfaces[t].mesh.n_nodes for t, _ in scenario.surfaces_of(d.id))
        for r0 in range(0, M, block_rows):
            part = assemble_domain_equations(scenario, d.id, numerics, (r0, r0 + block_rows))
            couple_interfaces(scenario, [part], layout, system)
            del part
    # warnings repeat once per block
    system.warnings = list(dict.fromkeys(system.warnings))
    system.assembly_time = time.perf_counter() - t0
    return system


def solve_dense(system: DenseComplexSystem, keep_matrix: bool = True,
                singular_tol: float = 1e-13) -> tuple[np.ndarray, SolveReport]:
    """LU solve with a residual report ``||Ax - b||_inf / ||b||_inf``.

    ``keep_matrix=False`` factorises in place to save memory; the residual
    is then reported as NaN.
    """
    t0 = time.perf_counter()
    A, b = system.matrix, system.rhs
    n = A.shape[0]
    if n == 0:
        return np.zeros(0, dtype=complex), SolveReport(0, 0.0, system.assembly_time, 0.0, list(system.warnings))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, overwrite_a=not keep_matrix, check_finite=False)
    u = np.abs(np.diag(lu))
    if u.min() <= singular_tol * u.max():
        raise SingularSystemError(
            "numerically singular system: check for a fictitious (interior resonance) "
            "frequency or inconsistent boundary conditions"
        )
    x = scipy.linalg.lu_solve((lu, piv), b, check_finite=False)
    if keep_matrix:
        bn = np.abs(b).max()
        res = np.abs(A @ x - b).max()
        residual = float(res / bn) if bn > 0 else float(res)
    else:
        residual = float("nan")
    rep = SolveReport(n, residual, system.assembly_time, time.perf_counter() - t0, list(system.warnings))
    return x, rep


def unpack_solution(scenario: Scenario, layout: UnknownLayout, x: np.ndarray,
                    report: SolveReport | None = None) -> SolutionField:
    phi, dphi = [], []
    for t, s in enumerate(scenario.surfaces):
        n = s.mesh.n_nodes
        p, d = layout.phi_offset[t], layout.dphi_offset[t]
        phi.append(x[p : p + n].copy() if p is not None else np.zeros(n, dtype=complex))
        dphi.append(x[d : d + n].copy() if d is not None else np.zeros(n, dtype=complex))
    return SolutionField(scenario, phi, dphi, report)


def solve_scenario(scenario: Scenario, numerics: Numerics | None = None,
                   keep_matrix: bool | None = None) -> SolutionField:
    """Assemble, solve and unpack in one call.

    By default the matrix is kept (and the residual reported) only when a
    second copy stays below ``KEEP_MATRIX_MAX`` unknowns.
    """
    system = build_system(scenario, numerics)
    layout = system.layout
    if keep_matrix is None:
        keep_matrix = system.dimension <= KEEP_MATRIX_MAX
    x, rep = solve_dense(system, keep_matrix=keep_matrix)
    del system
    return unpack_solution(scenario, layout, x, rep)
