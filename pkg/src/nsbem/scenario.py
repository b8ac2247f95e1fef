"""Scenario files.

A scenario is a TOML document.  Complex numbers are written as ``[re, im]``
(a bare number is read as real).  Lengths are in units of the experiment's
reference length, so that dimensionless groups such as ``k a`` appear directly
as ``reference.k``.

Layout::

    [reference]         k, omega, density, length_name
    [media.<id>]        k_ratio, rho_ratio, unbounded
    [[surfaces]]        id, kind, radius/params, center, level | frequency,
                        inner, outer, bc, mesh (kind = "file")
    [[sources]]         domain, position, strength
    [numerics]          any field of ``solver.Numerics``
    [validation]        analytic core-shell comparison (optional)
    [outputs]           tracks, grids, radar, focal, beams, snapshots
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .mesh import (
    ParametricSurfaceSpec,
    QuadraticTriangleMesh,
    build_parametric_mesh,
    build_sphere_mesh,
    read_mesh,
)
from .solver import BC_TAGS, Domain, Numerics, Scenario, ScenarioError, Source, Surface

SURFACE_KINDS = ("sphere", "bowl", "custom-axisymmetric", "file")


def parse_complex(value, where: str = "value") -> complex:
    """``[re, im]`` or a real number."""
    if isinstance(value, bool):
        raise ScenarioError(f"{where}: expected a number or [re, im], got {value!r}")
    if isinstance(value, (int, float)):
        return complex(float(value), 0.0)
    if isinstance(value, (list, tuple)) and len(value) == 2 and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        return complex(float(value[0]), float(value[1]))
    raise ScenarioError(f"{where}: expected a number or [re, im], got {value!r}")


def _vector(value, where: str, n: int = 3) -> np.ndarray:
    try:
        v = np.asarray(value, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: expected {n} numbers, got {value!r}") from None
    if v.size != n:
        raise ScenarioError(f"{where}: expected {n} numbers, got {value!r}")
    return v


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ScenarioError(f"{where}: missing key {key!r}")
    return table[key]


@dataclass
class ScenarioFile:
    """A parsed scenario together with its raw sections."""

    path: Path | None
    name: str
    scenario: Scenario
    outputs: dict = field(default_factory=dict)
    validation: dict | None = None
    reference_length: str = "a"
    meshing: list[dict] = field(default_factory=list)
    large: bool = False


def _profile_callable(samples, where: str):
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 2:
        raise ScenarioError(f"{where}: profile must be a list of [theta, rho, z] rows")
    order = np.argsort(arr[:, 0])
    th, rho, z = arr[order].T
    if th[0] > 0 or th[-1] < np.pi:
        raise ScenarioError(f"{where}: profile must cover theta in [0, pi]")

    def profile(theta):
        return np.interp(theta, th, rho), np.interp(theta, th, z)

    return profile


def build_surface_mesh(spec: dict, where: str, base: Path | None = None) -> QuadraticTriangleMesh:
    sid = str(_require(spec, "id", where))
    kind = spec.get("kind", "sphere")
    if kind not in SURFACE_KINDS:
        raise ScenarioError(f"{where}: unknown kind {kind!r}; expected one of {SURFACE_KINDS}")
    if kind == "file":
        p = Path(_require(spec, "mesh", where))
        if base is not None and not p.is_absolute():
            p = base / p
        mesh = read_mesh(p)
        return QuadraticTriangleMesh(mesh.nodes, mesh.elements, sid)
    center = tuple(_vector(spec.get("center", [0.0, 0.0, 0.0]), f"{where}.center"))
    level = int(spec.get("level", 2))
    freq = spec.get("frequency")
    freq = int(freq) if freq is not None else None
    if kind == "sphere":
        radius = float(_require(spec, "radius", where))
        try:
            return build_sphere_mesh(radius, center, level, freq, sid)
        except ValueError as exc:
            raise ScenarioError(f"{where}: {exc}") from None
    params = dict(spec.get("params", {}))
    if "radius" in spec:
        params["radius"] = float(spec["radius"])
    profile = None
    if kind == "custom-axisymmetric":
        profile = _profile_callable(_require(spec, "profile", where), where)
    return build_parametric_mesh(ParametricSurfaceSpec(kind, params, center, profile), level, freq, sid)


def scenario_from_dict(doc: dict, path: Path | None = None) -> ScenarioFile:
    base = path.parent if path is not None else None
    ref = doc.get("reference", {})
    k_ref = parse_complex(ref.get("k", 1.0), "reference.k")
    omega = float(ref.get("omega", abs(k_ref)))
    rho_ref = float(ref.get("density", 1.0))

    media = doc.get("media")
    if not media:
        raise ScenarioError("scenario needs at least one [media.<id>] table")
    domains = []
    for mid, m in media.items():
        domains.append(
            Domain(
                str(mid),
                parse_complex(m.get("k_ratio", 1.0), f"media.{mid}.k_ratio"),
                float(m.get("rho_ratio", 1.0)),
                bool(m.get("unbounded", False)),
            )
        )

    surfaces = []
    meshing = []
    for i, s in enumerate(doc.get("surfaces", [])):
        where = f"surfaces[{i}]"
        bc = s.get("bc", "interface")
        if bc not in BC_TAGS:
            raise ScenarioError(f"{where}: unknown bc {bc!r}; expected one of {BC_TAGS}")
        mesh = build_surface_mesh(s, where, base)
        surfaces.append(Surface(mesh, s.get("inner"), s.get("outer"), bc))
        meshing.append({"id": mesh.surface_id, "nodes": mesh.n_nodes, "elements": mesh.n_elements})

    sources = []
    for i, s in enumerate(doc.get("sources", [])):
        where = f"sources[{i}]"
        sources.append(
            Source(
                str(_require(s, "domain", where)),
                _vector(_require(s, "position", where), f"{where}.position"),
                parse_complex(s.get("strength", 1.0), f"{where}.strength"),
            )
        )

    known = {f.name for f in fields(Numerics)}
    num = doc.get("numerics", {})
    unknown = set(num) - known
    if unknown:
        raise ScenarioError(f"numerics: unknown keys {sorted(unknown)}")
    numerics = Numerics(**num)

    sc = Scenario(domains, surfaces, sources, k_ref, omega, rho_ref, numerics)
    sc.validate()
    meta = doc.get("scenario", {})
    name = str(meta.get("name", path.stem if path is not None else "scenario"))
    return ScenarioFile(
        path,
        name,
        sc,
        doc.get("outputs", {}),
        doc.get("validation"),
        str(ref.get("length_name", "a")),
        meshing,
        bool(meta.get("large", False)),
    )


def load_document(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def load_scenario(path) -> ScenarioFile:
    path = Path(path)
    return scenario_from_dict(load_document(path), path)


def oracle_config(sf: ScenarioFile):
    """Core-shell oracle configuration described by a ``[validation]`` table.

    The table names the scenario media playing the external, shell and core
    roles and the two sphere radii; wavenumbers, densities and sources are
    taken from the scenario itself.  Sources must sit on the +z axis.
    """
    from .oracle import AxialSource, CoreShellConfig

    v = sf.validation
    if not v:
        raise ScenarioError("scenario has no [validation] table")
    roles = _require(v, "media", "validation")
    sc = sf.scenario
    region_of = {}
    for role in ("external", "shell", "core"):
        region_of[str(_require(roles, role, "validation.media"))] = role
    srcs = []
    for i, s in enumerate(sc.sources):
        if np.hypot(s.position[0], s.position[1]) > 1e-12 or s.position[2] < 0:
            raise ScenarioError(f"source {i} is not on the non-negative z axis")
        srcs.append(AxialSource(region_of[s.domain], float(s.position[2]), s.strength))
    rev = {r: d for d, r in region_of.items()}
    return CoreShellConfig(
        float(_require(v, "a_core", "validation")),
        float(_require(v, "a_shell", "validation")),
        sc.wavenumber(rev["external"]),
        sc.wavenumber(rev["shell"]),
        sc.wavenumber(rev["core"]),
        sc.density(rev["external"]),
        sc.density(rev["shell"]),
        sc.density(rev["core"]),
        srcs,
    )


def describe(sf: ScenarioFile) -> dict[str, Any]:
    sc = sf.scenario
    return {
        "name": sf.name,
        "k_ref": [sc.k_ref.real, sc.k_ref.imag] if isinstance(sc.k_ref, complex) else sc.k_ref,
        "omega": sc.omega,
        "domains": [d.id for d in sc.domains],
        "surfaces": sf.meshing,
        "sources": len(sc.sources),
    }
