"""Closed quadratic (6-node) triangular surface meshes.

Element convention: ``elements[e] = (c0, c1, c2, m01, m12, m20)`` with the
corners counterclockwise seen from the outer side, so that
``d x/d xi  x  d x/d eta`` points from the inner medium to the outer medium.
Reference coordinates put ``c0`` at (0, 0), ``c1`` at (1, 0), ``c2`` at (0, 1).

Meshes are generated on the unit sphere by geodesic subdivision of an
icosahedron with a vertex on each pole (``20 f**2`` elements for frequency
``f``; ``f = 2**level`` for the usual subdivision levels).  Mid-edge nodes are
great-circle midpoints of their corners and every node is then pushed through
the parametric map, so curved elements interpolate the true surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .quadrature import QuadratureRule, quadrature_rule

# reference coordinates of the six nodes, in element order
NODE_REF_COORDS = np.array(
    [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]
)
_EDGES = ((0, 1, 3), (1, 2, 4), (2, 0, 5))


class MeshQualityError(ValueError):
    pass


@dataclass
class QuadraticTriangleMesh:
    nodes: np.ndarray
    elements: np.ndarray
    surface_id: str = "surface"

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 3:
            raise ValueError("nodes must have shape (n, 3)")
        if self.elements.ndim != 2 or self.elements.shape[1] != 6:
            raise ValueError("elements must have shape (m, 6)")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def transformed(self, rotation=None, translation=None) -> "QuadraticTriangleMesh":
        x = self.nodes
        if rotation is not None:
            x = x @ np.asarray(rotation, dtype=float).T
        if translation is not None:
            x = x + np.asarray(translation, dtype=float)
        return QuadraticTriangleMesh(x, self.elements.copy(), self.surface_id)


# ---------------------------------------------------------------------------
# shape functions
# ---------------------------------------------------------------------------


def shape_functions(xi, eta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values and (xi, eta) derivatives of the six quadratic shape functions.

    Returns arrays of shape ``(..., 6)``.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    l0 = 1.0 - xi - eta
    N = np.stack(
        [
            l0 * (2 * l0 - 1),
            xi * (2 * xi - 1),
            eta * (2 * eta - 1),
            4 * l0 * xi,
            4 * xi * eta,
            4 * eta * l0,
        ],
        axis=-1,
    )
    z = np.zeros_like(xi)
    dxi = np.stack(
        [1 - 4 * l0, 4 * xi - 1, z, 4 * (l0 - xi), 4 * eta, -4 * eta], axis=-1
    )
    deta = np.stack(
        [1 - 4 * l0, z, 4 * eta - 1, -4 * xi, 4 * xi, 4 * (l0 - eta)], axis=-1
    )
    return N, dxi, deta


def shape_eval(mesh: QuadraticTriangleMesh, element_index: int, xi: float, eta: float):
    """Position, unit outward normal and area scale at ``(xi, eta)`` of one element."""
    N, dxi, deta = shape_functions(xi, eta)
    x = mesh.nodes[mesh.elements[element_index]]
    pos = N @ x
    cr = np.cross(dxi @ x, deta @ x)
    jac = float(np.linalg.norm(cr))
    return pos, cr / jac, jac


@dataclass
class SurfaceQuadrature:
    """Quadrature points of a whole mesh for a given rule.

    Arrays are flattened element-major: point ``q`` of element ``e`` sits at
    index ``e * n_q + q``.
    """

    points: np.ndarray  # (E*Q, 3)
    normals: np.ndarray  # (E*Q, 3)
    weights: np.ndarray  # (E*Q,) quadrature weight times jacobian
    shape: np.ndarray  # (Q, 6)
    n_per_element: int


def geometry_at(mesh: QuadraticTriangleMesh, elements: np.ndarray, ref_points: np.ndarray):
    """Positions, unit normals and jacobians at reference points on given elements.

    ``elements`` has shape (P,), ``ref_points`` shape (Q, 2) or (P, Q, 2).
    Returns arrays of shape (P, Q, 3), (P, Q, 3), (P, Q).
    """
    N, dxi, deta = shape_functions(ref_points[..., 0], ref_points[..., 1])
    X = mesh.nodes[mesh.elements[elements]]  # (P, 6, 3)
    # (Q, 6) @ (P, 6, 3) and (P, Q, 6) @ (P, 6, 3) both broadcast to (P, Q, 3)
    pos = N @ X
    t1 = dxi @ X
    t2 = deta @ X
    cr = np.cross(t1, t2)
    jac = np.linalg.norm(cr, axis=-1)
    return pos, cr / jac[..., None], jac


def surface_quadrature(mesh: QuadraticTriangleMesh, rule: QuadratureRule) -> SurfaceQuadrature:
    pos, nrm, jac = geometry_at(mesh, np.arange(mesh.n_elements), rule.points)
    N, _, _ = shape_functions(rule.points[:, 0], rule.points[:, 1])
    return SurfaceQuadrature(
        points=pos.reshape(-1, 3),
        normals=nrm.reshape(-1, 3),
        weights=(jac * rule.weights).reshape(-1),
        shape=N,
        n_per_element=len(rule),
    )


def nodal_normals(mesh: QuadraticTriangleMesh) -> np.ndarray:
    """Unit normal at each node: mean of the adjacent elements' normals there."""
    acc = np.zeros_like(mesh.nodes)
    for a in range(6):
        _, nrm, _ = geometry_at(mesh, np.arange(mesh.n_elements), NODE_REF_COORDS[a : a + 1])
        np.add.at(acc, mesh.elements[:, a], nrm[:, 0, :])
    return acc / np.linalg.norm(acc, axis=1, keepdims=True)


def element_diameters(mesh: QuadraticTriangleMesh) -> np.ndarray:
    c = mesh.nodes[mesh.elements[:, :3]]
    d = np.stack(
        [np.linalg.norm(c[:, i] - c[:, j], axis=1) for i, j in ((0, 1), (1, 2), (2, 0))], axis=1
    )
    return d.max(axis=1)


def element_centroids(mesh: QuadraticTriangleMesh) -> np.ndarray:
    pos, _, _ = geometry_at(mesh, np.arange(mesh.n_elements), np.array([[1 / 3, 1 / 3]]))
    return pos[:, 0, :]


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    """Unit icosahedron with vertices on the +z and -z poles."""
    h = 1.0 / np.sqrt(5.0)
    rho = 2.0 / np.sqrt(5.0)
    verts = [[0.0, 0.0, 1.0]]
    for k in range(5):
        a = 2 * np.pi * k / 5
        verts.append([rho * np.cos(a), rho * np.sin(a), h])
    for k in range(5):
        a = 2 * np.pi * k / 5 + np.pi / 5
        verts.append([rho * np.cos(a), rho * np.sin(a), -h])
    verts.append([0.0, 0.0, -1.0])
    faces = []
    for k in range(5):
        u0, u1 = 1 + k, 1 + (k + 1) % 5
        l0, l1 = 6 + k, 6 + (k + 1) % 5
        faces += [(0, u0, u1), (u0, l0, u1), (u1, l0, l1), (11, l1, l0)]
    verts = np.array(verts)
    faces = np.array(faces)
    for f in faces:
        a, b, c = verts[f]
        if np.dot(np.cross(b - a, c - a), a + b + c) < 0:
            f[1], f[2] = f[2], f[1]
    return verts, faces


def unit_sphere_mesh(frequency: int) -> tuple[np.ndarray, np.ndarray]:
    """Geodesic quadratic mesh of the unit sphere: (unit node vectors, elements)."""
    f = int(frequency)
    if f < 1:
        raise ValueError("frequency must be >= 1")
    iv, faces = _icosahedron()
    index: dict[tuple, int] = {}
    pts: list[np.ndarray] = []

    def corner(p: np.ndarray) -> int:
        u = p / np.linalg.norm(p)
        key = tuple(np.round(u, 11) + 0.0)
        if key not in index:
            index[key] = len(pts)
            pts.append(u)
        return index[key]

    tris = []
    for a, b, c in faces:
        A, B, C = iv[a], iv[b], iv[c]
        grid = {}
        for i in range(f + 1):
            for j in range(f + 1 - i):
                grid[i, j] = corner(A + (B - A) * i / f + (C - A) * j / f)
        for i in range(f):
            for j in range(f - i):
                tris.append((grid[i, j], grid[i + 1, j], grid[i, j + 1]))
                if i + j < f - 1:
                    tris.append((grid[i + 1, j], grid[i + 1, j + 1], grid[i, j + 1]))

    edge_index: dict[tuple[int, int], int] = {}
    elements = []
    for t in tris:
        mids = []
        for p, q, _ in _EDGES:
            key = (min(t[p], t[q]), max(t[p], t[q]))
            if key not in edge_index:
                m = pts[key[0]] + pts[key[1]]
                edge_index[key] = len(pts)
                pts.append(m / np.linalg.norm(m))
            mids.append(edge_index[key])
        elements.append((*t, *mids))
    return np.array(pts), np.array(elements, dtype=np.int64)


def frequency_for_level(level: int) -> int:
    if level < 0:
        raise ValueError("subdivision level must be >= 0")
    return 2 ** int(level)


def build_sphere_mesh(radius: float, center=(0.0, 0.0, 0.0), subdivision_level: int = 2,
                      frequency: int | None = None, surface_id: str = "sphere") -> QuadraticTriangleMesh:
    """Quadratic sphere mesh with 20 f**2 elements and 40 f**2 + 2 nodes."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    f = frequency if frequency is not None else frequency_for_level(subdivision_level)
    u, elems = unit_sphere_mesh(f)
    return QuadraticTriangleMesh(radius * u + np.asarray(center, dtype=float), elems, surface_id)


@dataclass
class ParametricSurfaceSpec:
    """Closed surface parametrised by polar/azimuthal angles of the unit sphere.

    ``kind`` is one of ``"sphere"`` (params: ``radius``), ``"bowl"`` (params:
    ``radius``, ``depth_coef`` = 0.1, ``sag_coef`` = 0.3, giving
    ``(a sin t cos p, a sin t sin p, a (c1 (cos t - 1) + c2 sin^2 t))``) or
    ``"custom-axisymmetric"`` where ``profile(theta) -> (rho, z)`` is given.
    """

    kind: str
    params: dict = field(default_factory=dict)
    center: tuple = (0.0, 0.0, 0.0)
    profile: Callable | None = None

    def map_unit(self, u: np.ndarray) -> np.ndarray:
        """Map unit-sphere points (n, 3) onto the surface."""
        u = np.asarray(u, dtype=float)
        a = float(self.params.get("radius", 1.0))
        if self.kind == "sphere":
            x = a * u
        elif self.kind == "bowl":
            c1 = float(self.params.get("depth_coef", 0.1))
            c2 = float(self.params.get("sag_coef", 0.3))
            z = a * (c1 * (u[:, 2] - 1.0) + c2 * (1.0 - u[:, 2] ** 2))
            x = np.column_stack([a * u[:, 0], a * u[:, 1], z])
        elif self.kind == "custom-axisymmetric":
            if self.profile is None:
                raise ValueError("custom-axisymmetric surface needs a profile callable")
            theta = np.arccos(np.clip(u[:, 2], -1.0, 1.0))
            rho, z = self.profile(theta)
            s = np.hypot(u[:, 0], u[:, 1])
            safe = np.where(s > 0, s, 1.0)
            x = np.column_stack([rho * u[:, 0] / safe, rho * u[:, 1] / safe, z])
            x[s == 0, :2] = 0.0
        else:
            raise ValueError(f"unknown surface kind {self.kind!r}")
        return x + np.asarray(self.center, dtype=float)


def build_parametric_mesh(spec: ParametricSurfaceSpec, subdivision_level: int = 2,
                          frequency: int | None = None, surface_id: str | None = None,
                          min_jacobian_ratio: float = 1e-3) -> QuadraticTriangleMesh:
    """Sphere-topology quadratic mesh with every node mapped through ``spec``."""
    f = frequency if frequency is not None else frequency_for_level(subdivision_level)
    u, elems = unit_sphere_mesh(f)
    mesh = QuadraticTriangleMesh(spec.map_unit(u), elems, surface_id or spec.kind)
    rule = quadrature_rule(6)
    _, _, jac = geometry_at(mesh, np.arange(mesh.n_elements), np.vstack([rule.points, NODE_REF_COORDS]))
    if not np.all(np.isfinite(jac)) or jac.min() < min_jacobian_ratio * np.median(jac):
        bad = int(np.argmin(np.nan_to_num(jac.min(axis=1), nan=-1.0)))
        raise MeshQualityError(f"degenerate parametrisation: near-zero jacobian on element {bad}")
    return mesh


# ---------------------------------------------------------------------------
# integrity
# ---------------------------------------------------------------------------


@dataclass
class MeshReport:
    ok: bool
    closed: bool
    oriented: bool
    midedge_consistent: bool
    outward: bool
    area: float
    volume: float
    normal_sum: np.ndarray
    problems: list[str] = field(default_factory=list)


def mesh_integrity_check(mesh: QuadraticTriangleMesh, degree: int = 6) -> MeshReport:
    """Topology and geometry checks; problems are reported, never raised."""
    problems: list[str] = []
    edges: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
    for e, el in enumerate(mesh.elements):
        for p, q, m in _EDGES:
            a, b = int(el[p]), int(el[q])
            edges.setdefault((min(a, b), max(a, b)), []).append((a, int(el[m]), e))

    closed = oriented = midedge = True
    for key, uses in edges.items():
        if len(uses) != 2:
            closed = False
            problems.append(f"edge {key} shared by {len(uses)} elements")
            continue
        (a1, m1, e1), (a2, m2, e2) = uses
        if a1 == a2:
            oriented = False
            problems.append(f"elements {e1} and {e2} have inconsistent orientation")
        if m1 != m2:
            midedge = False
            problems.append(f"edge {key} has different mid-edge nodes {m1} / {m2}")
    corner_nodes = set(mesh.elements[:, :3].ravel().tolist())
    mid_nodes = set(mesh.elements[:, 3:].ravel().tolist())
    if corner_nodes & mid_nodes:
        midedge = False
        problems.append("some nodes serve both as corner and mid-edge node")
    unused = mesh.n_nodes - len(corner_nodes | mid_nodes)
    if unused:
        problems.append(f"{unused} unused nodes")

    sq = surface_quadrature(mesh, quadrature_rule(degree))
    area = float(sq.weights.sum())
    volume = float(np.sum(np.einsum("qi,qi->q", sq.points, sq.normals) * sq.weights) / 3.0)
    nsum = (sq.normals * sq.weights[:, None]).sum(axis=0)
    outward = volume > 0
    if not outward:
        problems.append("enclosed volume is not positive: normals point inwards")
    if np.linalg.norm(nsum) > 1e-8 * area:
        problems.append(f"normal sum {np.linalg.norm(nsum):.3e} not zero: surface not closed")
    ok = closed and oriented and midedge and outward and not unused and np.linalg.norm(nsum) <= 1e-8 * area
    return MeshReport(ok, closed, oriented, midedge, outward, area, volume, nsum, problems)


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

_MAGIC = "nsbem-mesh 1"


def write_mesh(mesh: QuadraticTriangleMesh, path) -> None:
    """Plain-text export.  Coordinates are written with 17 significant digits."""
    lines = [_MAGIC, f"surface_id {mesh.surface_id}", f"{mesh.n_nodes} {mesh.n_elements}"]
    lines += [f"{i} {x:.17g} {y:.17g} {z:.17g}" for i, (x, y, z) in enumerate(mesh.nodes)]
    lines += [f"{i} " + " ".join(str(int(v)) for v in el) for i, el in enumerate(mesh.elements)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> QuadraticTriangleMesh:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise ValueError(f"{path}: not an {_MAGIC!r} file")
    surface_id = lines[1].split(maxsplit=1)[1] if len(lines[1].split()) > 1 else ""
    n_nodes, n_elem = (int(v) for v in lines[2].split())
    body = lines[3:]
    nodes = np.array([[float(v) for v in ln.split()[1:4]] for ln in body[:n_nodes]])
    elems = np.array([[int(v) for v in ln.split()[1:7]] for ln in body[n_nodes:n_nodes + n_elem]])
    return QuadraticTriangleMesh(nodes.reshape(-1, 3), elems.reshape(-1, 6), surface_id)
