"""Shared sampling helpers for the oracle tests and the acceptance run."""

from pathlib import Path

import numpy as np

from nsbem.oracle import monopole_series_potential
from nsbem.special import truncation_terms

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"

# Media wavenumbers of the validation case with real values; lengths in units of a_core.
ADMISSIBLE_K = (1.0, 1.5)
ADMISSIBLE_RS = (0.5, 3.5)
ADMISSIBLE_RATIO = 0.3
ADMISSIBLE_RMAX = 3.5


def admissible_samples(rng: np.random.Generator, n: int):
    """(k, r_s, r, theta) with r_< / r_> <= 0.3 and r_> <= 3.5."""
    out = []
    while len(out) < n:
        k = float(rng.choice(ADMISSIBLE_K))
        rs = float(rng.uniform(*ADMISSIBLE_RS))
        r = float(rng.uniform(0.05, ADMISSIBLE_RMAX))
        if min(r, rs) / max(r, rs) > ADMISSIBLE_RATIO:
            continue
        out.append((k, rs, r, float(rng.uniform(0.0, np.pi))))
    return out


def series_error(k, rs, r, theta, N) -> float:
    R = np.sqrt(r * r + rs * rs - 2 * r * rs * np.cos(theta))
    exact = np.exp(1j * k * R) / (4 * np.pi * R)
    return float(abs(monopole_series_potential(k, 1.0, rs, r, theta, N) - exact) / abs(exact))


def worst_series_error(seed: int = 2024, n: int = 100, N: int | None = None) -> float:
    rng = np.random.default_rng(seed)
    return max(
        series_error(k, rs, r, th, truncation_terms(k, rs) if N is None else N)
        for k, rs, r, th in admissible_samples(rng, n)
    )
