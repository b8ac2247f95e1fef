"""Helmholtz and Laplace free-space kernels and their finite differences.

Conventions (no 1/(4 pi) factor):

    G_k = exp(i k r) / r                H_k = n . grad_x G_k
    G_0 = 1 / r                         H_0 = -(x - x0) . n / r**3

The regularised pair dG = G_k - G_0 and dH = H_k - H_0 is finite as r -> 0 and
is evaluated with a Taylor series for |k r| < ``SERIES_THRESHOLD`` so that
no nearly-equal quantities are subtracted.

Every function broadcasts over leading dimensions of its point arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SERIES_THRESHOLD = 1e-2
_SERIES_TERMS = 10
# the closed form of the dH factor cancels to O(|z|) relative, so its
# series branch reaches further out
_DH_THRESHOLD = 0.5
_DH_TERMS = 18


class CoincidentPointsError(ValueError):
    pass


@dataclass
class KernelPair:
    g: np.ndarray
    h: np.ndarray


def _geometry(x, x0, normal):
    d = np.asarray(x, dtype=float) - np.asarray(x0, dtype=float)
    r = np.sqrt(np.sum(d * d, axis=-1))
    dn = np.sum(d * np.asarray(normal, dtype=float), axis=-1)
    return r, dn


def laplace_kernels(x, x0, normal_at_x) -> KernelPair:
    r, dn = _geometry(x, x0, normal_at_x)
    if np.any(r == 0):
        raise CoincidentPointsError("laplace kernels evaluated at coincident points")
    return KernelPair(g=1.0 / r, h=-dn / r**3)


def helmholtz_kernels(x, x0, normal_at_x, k) -> KernelPair:
    r, dn = _geometry(x, x0, normal_at_x)
    if np.any(r == 0):
        raise CoincidentPointsError("helmholtz kernels evaluated at coincident points")
    k = complex(k)
    e = np.exp(1j * k * r)
    return KernelPair(g=e / r, h=dn * e * (1j * k * r - 1.0) / r**3)


def expm1_over(z: np.ndarray) -> np.ndarray:
    """(exp(z) - 1) / z, finite at z = 0."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < SERIES_THRESHOLD
    out = np.empty_like(z)
    zs = z[~small]
    out[~small] = np.expm1(zs) / zs if zs.size else zs
    if np.any(small):
        zz = z[small]
        term = np.ones_like(zz)
        acc = np.ones_like(zz)
        for n in range(2, _SERIES_TERMS + 2):
            term = term * zz / n
            acc = acc + term
        out[small] = acc
    return out


def _dh_factor(z: np.ndarray) -> np.ndarray:
    """[exp(z)(z - 1) + 1] / z**2 for z = i k r, finite at z = 0 (limit 1/2)."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < _DH_THRESHOLD
    out = np.empty_like(z)
    zs = z[~small]
    if zs.size:
        # exp(z)(z-1) + 1 = z expm1(z) - expm1(z) + z
        em = np.expm1(zs)
        out[~small] = (zs * em - em + zs) / zs**2
    if np.any(small):
        # sum_{n>=2} z^n (n-1)/n!  divided by z^2
        zz = z[small]
        fact = 2.0
        pw = np.ones_like(zz)
        acc = np.full_like(zz, 0.5)
        for n in range(3, _DH_TERMS + 3):
            fact *= n
            pw = pw * zz
            acc = acc + pw * (n - 1) / fact
        out[small] = acc
    return out


def regularized_parts(r: np.ndarray, dn: np.ndarray, k) -> tuple[np.ndarray, np.ndarray]:
    """dG and dH from distances ``r`` and ``dn = (x - x0) . n``."""
    k = complex(k)
    r = np.asarray(r, dtype=float)
    if k == 0:
        z = np.zeros(np.shape(r), dtype=complex)
        return z, z.copy()
    ikr = 1j * k * r
    dg = 1j * k * expm1_over(ikr)
    # dH = dn [exp(ikr)(ikr-1)+1] / r^3 = dn (ik)^2 F(ikr) / r
    with np.errstate(divide="ignore", invalid="ignore"):
        dh = np.where(r > 0, dn * (1j * k) ** 2 * _dh_factor(ikr) / np.where(r > 0, r, 1.0), 0.0)
    return dg, dh


def regularized_kernels(x, x0, normal_at_x, k) -> KernelPair:
    """dG = G_k - G_0 and dH = H_k - H_0, defined for all x including x = x0."""
    r, dn = _geometry(x, x0, normal_at_x)
    dg, dh = regularized_parts(r, dn, k)
    return KernelPair(g=dg, h=dh)
