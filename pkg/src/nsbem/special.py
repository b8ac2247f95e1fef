"""Spherical Bessel/Hankel functions of complex argument and Legendre polynomials.

All ``*_all`` routines return every order ``0..nmax`` at once, stacked along a
new leading axis, and broadcast over array arguments::

    j = sph_jn_all(10, z)        # shape (11,) + np.shape(z)

``j_n`` is obtained from a downward continued-fraction recurrence for the
ratios ``j_n / j_{n-1}`` (stable for every order), anchored on the closed form
of whichever of ``j_0``, ``j_1`` is larger in magnitude.  ``y_n`` is dominant
and is computed by upward recurrence near the real axis; see ``_bessel_yh``
for the treatment of arguments with a large imaginary part.
"""

from __future__ import annotations

import math

import numpy as np

MAX_ORDER = 1000
_SERIES_RADIUS = 1.0
_WRONSKIAN_IMAG = 2.0


class UnsupportedOrderError(ValueError):
    pass


class SingularArgumentError(ValueError):
    pass


def _check_order(n: int) -> int:
    n = int(n)
    if n < 0:
        raise UnsupportedOrderError(f"order must be non-negative, got {n}")
    if n > MAX_ORDER:
        raise UnsupportedOrderError(f"order {n} exceeds supported maximum {MAX_ORDER}")
    return n


def _j01(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """j_0 and j_1 from closed forms, with the ascending series near the origin."""
    small = np.abs(z) < _SERIES_RADIUS
    zs = np.where(small, 1.0, z)
    s, c = np.sin(zs), np.cos(zs)
    j0 = s / zs
    j1 = s / zs**2 - c / zs
    if np.any(small):
        zz = np.where(small, z, 0.0)
        t = -0.5 * zz * zz
        term0 = np.ones_like(zz)
        term1 = zz / 3.0
        s0, s1 = term0.copy(), term1.copy()
        for k in range(1, 20):
            term0 = term0 * t / (k * (2 * k + 1))
            term1 = term1 * t / (k * (2 * k + 3))
            s0 = s0 + term0
            s1 = s1 + term1
        j0 = np.where(small, s0, j0)
        j1 = np.where(small, s1, j1)
    return j0, j1


def sph_jn_all(nmax: int, z) -> np.ndarray:
    """Spherical Bessel functions of the first kind, orders 0..nmax."""
    nmax = _check_order(nmax)
    z = np.asarray(z, dtype=complex)
    out = np.empty((nmax + 1,) + z.shape, dtype=complex)
    zero = z == 0
    zs = np.where(zero, 1.0, z)
    j0, j1 = _j01(zs)
    out[0] = j0
    if nmax == 0:
        out[0] = np.where(zero, 1.0, out[0])
        return out

    amax = float(np.max(np.abs(zs))) if zs.size else 0.0
    start = int(max(nmax, math.ceil(amax)) + 30 + math.ceil(8.0 * amax ** (1.0 / 3.0)))
    # ratios[n] = j_n / j_{n-1} for n = 1..nmax
    ratios = np.empty((nmax + 1,) + z.shape, dtype=complex)
    r = np.zeros(z.shape, dtype=complex)
    for n in range(start, 0, -1):
        denom = (2 * n + 1) - zs * r
        denom = np.where(denom == 0, 1e-300, denom)
        r = zs / denom
        if n <= nmax:
            ratios[n] = r

    use_j1 = np.abs(j1) > np.abs(j0)
    out[1] = np.where(use_j1, j1, j0 * ratios[1])
    for n in range(2, nmax + 1):
        out[n] = out[n - 1] * ratios[n]

    if np.any(zero):
        out[0] = np.where(zero, 1.0, out[0])
        out[1:] = np.where(zero, 0.0, out[1:])
    return out


def _h1_upward(nmax: int, z: np.ndarray) -> np.ndarray:
    """h_n by upward recurrence from its closed forms; accurate for Im z > 0."""
    out = np.empty((nmax + 1,) + z.shape, dtype=complex)
    e = np.exp(1j * z)
    out[0] = -1j * e / z
    if nmax >= 1:
        out[1] = -e * (z + 1j) / z**2
    with np.errstate(all="ignore"):
        for n in range(1, nmax):
            out[n + 1] = (2 * n + 1) / z * out[n] - out[n - 1]
    return out


def _bessel_yh(nmax: int, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(y_n, h_n) for orders 0..nmax.

    Three regimes by Im z:

    * |Im z| <= 2: upward recurrence for y_n, h_n = j_n + i y_n;
    * Im z > 2: h_n decays like exp(-Im z) while j_n, y_n grow, so h_n comes
      from its own upward recurrence and y_n = -i (h_n - j_n);
    * Im z < -2: y_n from the cross-product identity
      j_{n+1} y_n - j_n y_{n+1} = 1/z^2 with accurate j_n (which has no zeros
      off the real axis), then h_n = j_n + i y_n.
    """
    if np.any(z == 0):
        raise SingularArgumentError("y_n and h_n are singular at z = 0")
    j = sph_jn_all(nmax, z)
    y = np.empty((nmax + 1,) + z.shape, dtype=complex)
    s, c = np.sin(z), np.cos(z)
    y[0] = -c / z
    if nmax >= 1:
        y[1] = -c / z**2 - s / z
    with np.errstate(all="ignore"):
        for n in range(1, nmax):
            y[n + 1] = (2 * n + 1) / z * y[n] - y[n - 1]
    h = j + 1j * y

    upper = z.imag > _WRONSKIAN_IMAG
    if np.any(upper):
        hu = _h1_upward(nmax, z[upper])
        h[:, upper] = hu
        y[:, upper] = -1j * (hu - j[:, upper])

    lower = z.imag < -_WRONSKIAN_IMAG
    if np.any(lower):
        zl = z[lower]
        jl = j[:, lower]
        inv_z2 = 1.0 / zl**2
        yl = np.empty_like(jl)
        yl[0] = -np.cos(zl) / zl
        for n in range(nmax):
            yl[n + 1] = (jl[n + 1] * yl[n] - inv_z2) / jl[n]
        y[:, lower] = yl
        h[:, lower] = jl + 1j * yl
    return y, h


def sph_yn_all(nmax: int, z) -> np.ndarray:
    """Spherical Bessel functions of the second kind, orders 0..nmax."""
    nmax = _check_order(nmax)
    return _bessel_yh(nmax, np.asarray(z, dtype=complex))[0]


def sph_h1_all(nmax: int, z) -> np.ndarray:
    """Spherical Hankel functions of the first kind, h_n = j_n + i y_n."""
    nmax = _check_order(nmax)
    return _bessel_yh(nmax, np.asarray(z, dtype=complex))[1]


def _derivative_all(values: np.ndarray, z: np.ndarray) -> np.ndarray:
    """z_n'(z) = -z_{n+1}(z) + (n/z) z_n(z) for n = 0..len(values)-2."""
    n = np.arange(values.shape[0] - 1).reshape((-1,) + (1,) * z.ndim)
    return -values[1:] + n / z * values[:-1]


def sph_all_with_derivatives(kind: str, nmax: int, z) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of j, y or h for orders 0..nmax."""
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0):
        raise SingularArgumentError("derivative evaluated at z = 0")
    funcs = {"j": sph_jn_all, "y": sph_yn_all, "h": sph_h1_all}
    if kind not in funcs:
        raise ValueError(f"kind must be one of {sorted(funcs)}, got {kind!r}")
    vals = funcs[kind](nmax + 1, z)
    return vals[:-1], _derivative_all(vals, z)


def sph_bessel_j(n: int, z) -> complex | np.ndarray:
    n = _check_order(n)
    return sph_jn_all(n, z)[n][()]


def sph_bessel_y(n: int, z) -> complex | np.ndarray:
    n = _check_order(n)
    return sph_yn_all(n, z)[n][()]


def sph_hankel1(n: int, z) -> complex | np.ndarray:
    n = _check_order(n)
    return sph_h1_all(n, z)[n][()]


def sph_bessel_derivative(kind: str, n: int, z) -> complex | np.ndarray:
    """Derivative of j_n, y_n or h_n (``kind`` in {"j", "y", "h"}) at z."""
    n = _check_order(n)
    _, d = sph_all_with_derivatives(kind, n, z)
    return d[n][()]


def legendre_p_all(nmax: int, x) -> np.ndarray:
    """Legendre polynomials P_0..P_nmax by upward recurrence."""
    nmax = _check_order(nmax)
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0):
        raise ValueError("legendre_p requires -1 <= x <= 1")
    out = np.empty((nmax + 1,) + x.shape)
    out[0] = 1.0
    if nmax >= 1:
        out[1] = x
    for n in range(nmax - 1):
        out[n + 2] = ((2 * n + 3) * x * out[n + 1] - (n + 1) * out[n]) / (n + 2)
    return out


def legendre_p(n: int, x) -> float | np.ndarray:
    n = _check_order(n)
    return legendre_p_all(n, x)[n][()]


def truncation_terms(k, r_s: float) -> int:
    """Number of multipole terms for a monopole at radius ``r_s``.

    Lengths are expected in units of the scatterer's characteristic radius.
    For ``r_s >= 1/2`` the count depends on ``|k|`` alone, otherwise on
    ``|k r_s|``; the value is rounded half-up and never below 1.
    """
    if r_s < 0:
        raise ValueError("source radius must be non-negative")
    kk = abs(complex(k))
    if kk == 0:
        raise ValueError("wavenumber magnitude must be positive")
    x = kk if r_s >= 0.5 else kk * r_s
    return max(1, int(math.floor(x + 4.0 * x ** (1.0 / 3.0) + 1.0 + 0.5)))
