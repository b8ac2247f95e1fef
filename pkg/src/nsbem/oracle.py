"""Series solution for axial monopoles around a concentric core-shell sphere.

Regions and their media (subscript 1 is the shell, 2 the core)::

    external  r >= a_shell           k0, rho0   phi = S0 + sum C_n h_n(k0 r) P_n
    shell     a_core <= r < a_shell  k1, rho1   phi = S1 + sum [D_n j_n + E_n y_n](k1 r) P_n
    core      r < a_core             k2, rho2   phi = S2 + sum F_n j_n(k2 r) P_n

``S`` is the multipole expansion of the free-space monopoles lying in that
region.  The four coefficients of each order follow from continuity of
``rho phi`` and ``d phi / d r`` on both interfaces.  Points exactly on an
interface are evaluated with the outer region's expansion.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .special import legendre_p_all, sph_all_with_derivatives, sph_h1_all, sph_jn_all, truncation_terms

REGIONS = ("external", "shell", "core")


class ModalSingularityError(ArithmeticError):
    pass


class CoincidentSourceError(ValueError):
    pass


@dataclass(frozen=True)
class AxialSource:
    region: str
    z: float
    strength: complex = 1.0


@dataclass
class CoreShellConfig:
    a_core: float
    a_shell: float
    k0: complex
    k1: complex
    k2: complex
    rho0: float = 1.0
    rho1: float = 1.0
    rho2: float = 1.0
    sources: list[AxialSource] = field(default_factory=list)

    def __post_init__(self):
        if not 0 < self.a_core < self.a_shell:
            raise ValueError("need 0 < a_core < a_shell")
        if min(self.rho0, self.rho1, self.rho2) <= 0:
            raise ValueError("densities must be positive")
        self.sources = [s if isinstance(s, AxialSource) else AxialSource(*s) for s in self.sources]
        for s in self.sources:
            if s.region not in REGIONS:
                raise ValueError(f"unknown region {s.region!r}")
            if s.z < 0:
                raise ValueError("sources sit on the non-negative z axis (r_s >= 0)")
            if self.region_of(s.z) != s.region or s.z in (self.a_core, self.a_shell):
                raise ValueError(f"source at r_s={s.z} does not lie strictly inside region {s.region!r}")

    def region_of(self, r: float) -> str:
        if r >= self.a_shell:
            return "external"
        if r >= self.a_core:
            return "shell"
        return "core"

    def wavenumber(self, region: str) -> complex:
        return complex({"external": self.k0, "shell": self.k1, "core": self.k2}[region])

    def density(self, region: str) -> float:
        return {"external": self.rho0, "shell": self.rho1, "core": self.rho2}[region]

    def scaled(self, factor: complex) -> "CoreShellConfig":
        """Copy with every source strength multiplied by ``factor``."""
        srcs = [AxialSource(s.region, s.z, s.strength * factor) for s in self.sources]
        return CoreShellConfig(self.a_core, self.a_shell, self.k0, self.k1, self.k2,
                               self.rho0, self.rho1, self.rho2, srcs)


@dataclass
class ModalCoefficients:
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray
    residuals: np.ndarray

    @property
    def order(self) -> int:
        return len(self.C) - 1


def default_order(cfg: CoreShellConfig) -> int:
    """Largest truncation count over all sources, lengths in units of ``a_core``."""
    n = [truncation_terms(cfg.wavenumber(s.region) * cfg.a_core, s.z / cfg.a_core) for s in cfg.sources]
    return max(n, default=truncation_terms(cfg.k0 * cfg.a_core, 1.0))


def monopole_series_potential(k, Q, r_s: float, r, theta, N: int):
    """Multipole expansion of Q exp(ik|x - x_s|) / (4 pi |x - x_s|), source on the z axis."""
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(r == r_s):
        raise CoincidentSourceError("field radius coincides with source radius")
    if Q == 0:
        return np.zeros(np.broadcast(r, theta).shape, dtype=complex)[()]
    k = complex(k)
    rg = np.maximum(r, r_s)
    rl = np.minimum(r, r_s)
    h = sph_h1_all(N, k * rg)
    j = sph_jn_all(N, k * rl)
    P = legendre_p_all(N, np.cos(theta))
    n = np.arange(N + 1).reshape((-1,) + (1,) * (h.ndim - 1))
    terms = (2 * n + 1) * h * j * P
    return (Q / (4 * np.pi) * 1j * k * terms.sum(axis=0))[()]


def _source_series(cfg: CoreShellConfig, region: str, r: np.ndarray, N: int):
    """Radial coefficients (value, d/dr) of the region's own sources, shape (N+1, len(r))."""
    k = cfg.wavenumber(region)
    val = np.zeros((N + 1, len(r)), dtype=complex)
    der = np.zeros_like(val)
    n = np.arange(N + 1)[:, None]
    for s in cfg.sources:
        if s.region != region or s.strength == 0:
            continue
        pref = s.strength / (4 * np.pi) * 1j * k * (2 * n + 1)
        inner = r < s.z
        if np.any(inner):
            ri = r[inner]
            jr, djr = sph_all_with_derivatives("j", N, k * ri)
            hs = sph_h1_all(N, np.full(1, k * s.z))
            val[:, inner] += pref * hs * jr
            der[:, inner] += pref * hs * k * djr
        outer = r > s.z
        if np.any(outer):
            ro = r[outer]
            hr, dhr = sph_all_with_derivatives("h", N, k * ro)
            js = sph_jn_all(N, np.full(1, k * s.z))
            val[:, outer] += pref * hr * js
            der[:, outer] += pref * k * dhr * js
        if np.any(r == s.z):
            raise CoincidentSourceError("evaluation radius coincides with a source")
    return val, der


def _modal_system(cfg: CoreShellConfig, N: int):
    """Matrices (N+1, 4, 4) and right-hand sides (N+1, 4) of the interface conditions."""
    a, b = cfg.a_core, cfg.a_shell
    k0, k1, k2 = cfg.k0, cfg.k1, cfg.k2
    r0, r1, r2 = cfg.rho0, cfg.rho1, cfg.rho2
    h0b, dh0b = sph_all_with_derivatives("h", N, np.array([k0 * b]))
    j1b, dj1b = sph_all_with_derivatives("j", N, np.array([k1 * b]))
    y1b, dy1b = sph_all_with_derivatives("y", N, np.array([k1 * b]))
    j1a, dj1a = sph_all_with_derivatives("j", N, np.array([k1 * a]))
    y1a, dy1a = sph_all_with_derivatives("y", N, np.array([k1 * a]))
    j2a, dj2a = sph_all_with_derivatives("j", N, np.array([k2 * a]))

    M = np.zeros((N + 1, 4, 4), dtype=complex)
    M[:, 0, 0] = r0 * h0b[:, 0]
    M[:, 0, 1] = -r1 * j1b[:, 0]
    M[:, 0, 2] = -r1 * y1b[:, 0]
    M[:, 1, 1] = r1 * j1a[:, 0]
    M[:, 1, 2] = r1 * y1a[:, 0]
    M[:, 1, 3] = -r2 * j2a[:, 0]
    M[:, 2, 0] = k0 * dh0b[:, 0]
    M[:, 2, 1] = -k1 * dj1b[:, 0]
    M[:, 2, 2] = -k1 * dy1b[:, 0]
    M[:, 3, 1] = k1 * dj1a[:, 0]
    M[:, 3, 2] = k1 * dy1a[:, 0]
    M[:, 3, 3] = -k2 * dj2a[:, 0]

    rb = np.array([b])
    ra = np.array([a])
    s0b, ds0b = _source_series(cfg, "external", rb, N)
    s1b, ds1b = _source_series(cfg, "shell", rb, N)
    s1a, ds1a = _source_series(cfg, "shell", ra, N)
    s2a, ds2a = _source_series(cfg, "core", ra, N)
    rhs = np.stack(
        [
            -r0 * s0b[:, 0] + r1 * s1b[:, 0],
            -r1 * s1a[:, 0] + r2 * s2a[:, 0],
            -ds0b[:, 0] + ds1b[:, 0],
            -ds1a[:, 0] + ds2a[:, 0],
        ],
        axis=1,
    )
    return M, rhs


def solve_modal_coefficients(cfg: CoreShellConfig, N: int | None = None) -> ModalCoefficients:
    """Solve the 4x4 interface system independently for each order n = 0..N."""
    N = default_order(cfg) if N is None else int(N)
    M, rhs = _modal_system(cfg, N)
    X = np.zeros((N + 1, 4), dtype=complex)
    res = np.zeros(N + 1)
    for n in range(N + 1):
        A = M[n]
        # column equilibration; the orders of magnitude of j_n, y_n, h_n diverge with n
        scale = 1.0 / np.max(np.abs(A), axis=0)
        As = A * scale
        try:
            xs = np.linalg.solve(As, rhs[n])
        except np.linalg.LinAlgError as exc:
            raise ModalSingularityError(f"interface system singular for order n={n}") from exc
        if np.linalg.cond(As) > 1e14 or not np.all(np.isfinite(xs)):
            raise ModalSingularityError(f"interface system numerically singular for order n={n}")
        X[n] = xs * scale
        bmax = np.max(np.abs(rhs[n]))
        res[n] = np.max(np.abs(A @ X[n] - rhs[n])) / bmax if bmax > 0 else 0.0
    return ModalCoefficients(C=X[:, 0], D=X[:, 1], E=X[:, 2], F=X[:, 3], residuals=res)


def modal_residuals(cfg: CoreShellConfig, coeffs: ModalCoefficients) -> np.ndarray:
    """max |M x - b| / max |b| per order, recomputed from scratch."""
    M, rhs = _modal_system(cfg, coeffs.order)
    X = np.stack([coeffs.C, coeffs.D, coeffs.E, coeffs.F], axis=1)
    r = np.abs(np.einsum("nij,nj->ni", M, X) - rhs).max(axis=1)
    b = np.abs(rhs).max(axis=1)
    return np.where(b > 0, r / np.where(b > 0, b, 1.0), r)


def _direct_closed(cfg: CoreShellConfig, region: str, r: np.ndarray, theta: np.ndarray,
                   radial_derivative: bool) -> np.ndarray:
    """Closed-form field of the region's own monopoles (the exact sum of their series)."""
    k = cfg.wavenumber(region)
    out = np.zeros(r.shape, dtype=complex)
    c = np.cos(theta)
    for s in cfg.sources:
        if s.region != region or s.strength == 0:
            continue
        R = np.sqrt(np.maximum(r * r + s.z * s.z - 2.0 * r * s.z * c, 0.0))
        if np.any(R == 0):
            raise CoincidentSourceError("evaluation point coincides with a source")
        g = s.strength * np.exp(1j * k * R) / (4 * np.pi * R)
        if radial_derivative:
            # d R / d r = (r - z cos theta) / R
            out += g * (1j * k - 1.0 / R) * (r - s.z * c) / R
        else:
            out += g
    return out


def eval_potential(cfg: CoreShellConfig, coeffs: ModalCoefficients, r, theta, radial_derivative=False,
                   direct: str = "closed"):
    """Potential (or its radial derivative) at spherical coordinates (r, theta).

    ``direct="series"`` sums the region's own monopoles with the same
    truncated multipole series as the scattered part; the default
    ``"closed"`` uses their closed form, which is the exact limit of that
    series and stays accurate next to a source where the series converges
    slowly.
    """
    if direct not in ("closed", "series"):
        raise ValueError("direct must be 'closed' or 'series'")
    r = np.atleast_1d(np.asarray(r, dtype=float))
    theta = np.broadcast_to(np.atleast_1d(np.asarray(theta, dtype=float)), r.shape)
    shape = r.shape
    r = r.ravel()
    theta = theta.ravel()
    N = coeffs.order
    P = legendre_p_all(N, np.cos(theta))
    out = np.zeros(r.shape, dtype=complex)
    regions = np.array([cfg.region_of(x) for x in r])
    for region in REGIONS:
        m = regions == region
        if not np.any(m):
            continue
        rr = r[m]
        k = cfg.wavenumber(region)
        for s in cfg.sources:
            if s.region == region and np.any((rr == s.z) & (np.abs(np.sin(theta[m])) < 1e-15) & (np.cos(theta[m]) > 0)):
                raise CoincidentSourceError("evaluation point coincides with a source")
        if direct == "series":
            sv, sd = _source_series(cfg, region, rr, N)
            radial = sd if radial_derivative else sv
        else:
            radial = 0.0
        if region == "external":
            h, dh = sph_all_with_derivatives("h", N, k * rr)
            hom = coeffs.C[:, None] * (k * dh if radial_derivative else h)
        elif region == "shell":
            j, dj = sph_all_with_derivatives("j", N, k * rr)
            y, dy = sph_all_with_derivatives("y", N, k * rr)
            if radial_derivative:
                hom = k * (coeffs.D[:, None] * dj + coeffs.E[:, None] * dy)
            else:
                hom = coeffs.D[:, None] * j + coeffs.E[:, None] * y
        elif radial_derivative:
            _, dj = sph_all_with_derivatives("j", N, k * rr)
            hom = coeffs.F[:, None] * k * dj
        else:
            hom = coeffs.F[:, None] * sph_jn_all(N, k * rr)
        out[m] = np.sum((radial + hom) * P[:, m], axis=0)
        if direct == "closed":
            out[m] += _direct_closed(cfg, region, rr, theta[m], radial_derivative)
    return out.reshape(shape)


def eval_potential_xyz(cfg: CoreShellConfig, coeffs: ModalCoefficients, points,
                       direct: str = "closed") -> np.ndarray:
    """Potential at Cartesian points (..., 3); the solution is axisymmetric about z."""
    p = np.asarray(points, dtype=float)
    r = np.linalg.norm(p, axis=-1)
    safe = np.where(r > 0, r, 1.0)
    theta = np.arccos(np.clip(p[..., 2] / safe, -1.0, 1.0))
    return eval_potential(cfg, coeffs, r, theta, direct=direct)


@dataclass
class TrackRow:
    track_id: int
    theta: float
    phi: complex


def validate_tracks(cfg: CoreShellConfig, track_radii, samples_per_track: int,
                    coeffs: ModalCoefficients | None = None) -> list[TrackRow]:
    """Analytic potential on circles of the xz-plane, theta in [0, 2 pi)."""
    for r in track_radii:
        if r in (cfg.a_core, cfg.a_shell):
            raise ValueError(f"track radius {r} lies on an interface")
    coeffs = coeffs if coeffs is not None else solve_modal_coefficients(cfg)
    rows = []
    theta = 2 * np.pi * np.arange(samples_per_track) / samples_per_track
    for t, r in enumerate(track_radii):
        pts = np.column_stack([r * np.sin(theta), np.zeros_like(theta), r * np.cos(theta)])
        vals = eval_potential_xyz(cfg, coeffs, pts)
        rows += [TrackRow(t, float(th), complex(v)) for th, v in zip(theta, vals)]
    return rows


def write_track_csv(rows, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["track_id", "theta_rad", "re_phi", "im_phi", "abs_phi"])
        for row in rows:
            w.writerow([row.track_id, f"{row.theta:.17g}", f"{row.phi.real:.17g}",
                        f"{row.phi.imag:.17g}", f"{abs(row.phi):.17g}"])


def paper_validation_config() -> CoreShellConfig:
    """Validation case with lengths in units of a_core and k0 a_core = 1.

    Values are assigned by subscript: shell k1 = 1.5 k0, rho1 = 5 rho0; core
    k2 = (0.8 + 0.6i) k0, rho2 = 2 rho0.
    """
    return CoreShellConfig(
        a_core=1.0, a_shell=2.0,
        k0=1.0, k1=1.5, k2=0.8 + 0.6j,
        rho0=1.0, rho1=5.0, rho2=2.0,
        sources=[
            AxialSource("external", 3.0, 0.8 + 0.6j),
            AxialSource("shell", 1.5, 1.0),
            AxialSource("core", 0.5, -1.0),
        ],
    )
