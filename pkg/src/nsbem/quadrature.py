"""Quadrature on the reference triangle {(xi, eta): xi, eta >= 0, xi + eta <= 1}.

Degrees 2, 4, 6 and 8 use the classical fully symmetric rules (3, 6, 12 and
16 points).  Every other degree up to ``MAX_DEGREE`` falls back to a collapsed
Gauss-Jacobi (Stroud conical product) rule, which is exact but not symmetric.

Composite rules built from sub-triangles are used by the assembly for elements
where the integrand is bounded but not smooth (graded towards a point) and for
nearly-singular element/point pairs (uniform refinement).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_DEGREE = 40

# (orbit kind, barycentric parameters, weight normalised to unit area)
_SYMMETRIC = {
    2: [("a", 1.0 / 6.0, 1.0 / 3.0)],
    4: [
        ("a", 0.445948490915965, 0.223381589678011),
        ("a", 0.091576213509771, 0.109951743655322),
    ],
    6: [
        ("a", 0.249286745170910, 0.116786275726379),
        ("a", 0.063089014491502, 0.050844906370207),
        ("b", (0.053145049844817, 0.310352451033784), 0.082851075618374),
    ],
    8: [
        ("c", None, 0.144315607677787),
        ("a", 0.459292588292723, 0.095091634267285),
        ("a", 0.170569307751760, 0.103217370534718),
        ("a", 0.050547228317031, 0.032458497623198),
        ("b", (0.008394777409958, 0.263112829634638), 0.027230314174435),
    ],
}


class UnsupportedDegreeError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Points ``(xi, eta)`` with positive weights summing to 1/2."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, f) -> float:
        return float(np.sum(self.weights * f(self.points[:, 0], self.points[:, 1])))


def supported_degrees() -> list[int]:
    return list(range(1, MAX_DEGREE + 1))


def _symmetric_rule(degree: int) -> QuadratureRule:
    bary = []
    weights = []
    for kind, par, w in _SYMMETRIC[degree]:
        if kind == "c":
            orbit = [(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)]
        elif kind == "a":
            a = par
            b = 1.0 - 2.0 * a
            orbit = [(b, a, a), (a, b, a), (a, a, b)]
        else:
            a, b = par
            orbit = sorted(set(itertools.permutations((a, b, 1.0 - a - b))))
        bary.extend(orbit)
        weights.extend([w] * len(orbit))
    bary = np.array(bary)
    w = np.array(weights)
    w = 0.5 * w / w.sum()
    return QuadratureRule(points=bary[:, 1:].copy(), weights=w, degree=degree)


def _conical_rule(degree: int) -> QuadratureRule:
    n = degree // 2 + 1
    u, wu = roots_jacobi(n, 1.0, 0.0)  # weight (1 - u) on [-1, 1]
    v, wv = roots_legendre(n)
    s = 0.5 * (u + 1.0)
    t = 0.5 * (v + 1.0)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(wu, wv) / 8.0
    xi = S.ravel()
    eta = ((1.0 - S) * T).ravel()
    return QuadratureRule(points=np.column_stack([xi, eta]), weights=W.ravel(), degree=degree)


@lru_cache(maxsize=None)
def quadrature_rule(degree: int) -> QuadratureRule:
    """Quadrature rule exact for polynomials of total degree ``degree``."""
    if int(degree) != degree or not 1 <= degree <= MAX_DEGREE:
        raise UnsupportedDegreeError(
            f"unsupported quadrature degree {degree!r}; supported degrees are 1..{MAX_DEGREE} "
            f"(symmetric rules for {sorted(_SYMMETRIC)})"
        )
    degree = int(degree)
    if degree in _SYMMETRIC:
        return _symmetric_rule(degree)
    return _conical_rule(degree)


def _map_rule(rule: QuadratureRule, tri: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map a rule onto the sub-triangle with reference-space vertices ``tri`` (3, 2)."""
    a, b, c = tri
    jac = abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    pts = a + np.outer(rule.points[:, 0], b - a) + np.outer(rule.points[:, 1], c - a)
    return pts, rule.weights * jac


def _split4(tri: np.ndarray) -> list[np.ndarray]:
    a, b, c = tri
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    return [np.array(t) for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))]


_REFERENCE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _composite(rule: QuadratureRule, tris: list[np.ndarray]) -> QuadratureRule:
    pts, wts = zip(*(_map_rule(rule, t) for t in tris))
    return QuadratureRule(points=np.vstack(pts), weights=np.concatenate(wts), degree=rule.degree)


@lru_cache(maxsize=None)
def uniform_refined_rule(degree: int, levels: int) -> QuadratureRule:
    """``degree`` rule applied on each of the 4**levels congruent sub-triangles."""
    tris = [_REFERENCE]
    for _ in range(levels):
        tris = [child for t in tris for child in _split4(t)]
    return _composite(quadrature_rule(degree), tris)


@lru_cache(maxsize=None)
def graded_rule(degree: int, levels: int, target: tuple[float, float]) -> QuadratureRule:
    """Composite rule refined geometrically towards the reference point ``target``.

    ``target`` must be a vertex of the sub-triangulation (a corner or an edge
    midpoint of the reference triangle).  At each level every sub-triangle
    having ``target`` as a vertex is split in four.
    """
    p = np.asarray(target, dtype=float)
    done: list[np.ndarray] = []
    active = [_REFERENCE]
    for _ in range(levels):
        nxt = []
        for t in active:
            for child in _split4(t):
                if np.any(np.all(np.isclose(child, p, atol=1e-14), axis=1)):
                    nxt.append(child)
                else:
                    done.append(child)
        active = nxt
    return _composite(quadrature_rule(degree), done + active)
