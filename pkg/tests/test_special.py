import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsbem.special import (
    SingularArgumentError,
    UnsupportedOrderError,
    legendre_p,
    legendre_p_all,
    sph_all_with_derivatives,
    sph_bessel_derivative,
    sph_bessel_j,
    sph_bessel_y,
    sph_h1_all,
    sph_hankel1,
    sph_jn_all,
    sph_yn_all,
    truncation_terms,
)

# (n, z, j_n(z), y_n(z)) from 40-digit mpmath evaluations of the half-integer Bessel functions
FROZEN = [
    (0, complex(1.5, 0.0), complex(0.6649966577360363, 0.0), complex(-0.04715813444513527, 0.0)),
    (3, complex(2.0, 0.5), complex(0.05500987754044196, 0.03921870213159919),
     complex(-0.9518126303320047, 0.8469267463650143)),
    (10, complex(0.8, 0.6), complex(7.167181383158984e-11, 9.439155503472899e-12),
     complex(-473477613.40863615, 459154793.2806363)),
    (25, complex(7.5, -1.2), complex(-1.6346795851235745e-12, 1.2469990065353673e-12),
     complex(918562353.8542343, 936704330.9435991)),
    (5, complex(12.0, 3.0), complex(-0.3951379435771892, 0.48748191142332964),
     complex(-0.48944096996672143, -0.3897695934949674)),
    (40, complex(30.0, 0.0), complex(5.4547023530357504e-05, 0.0), complex(-11.254868007614817, 0.0)),
    (2, complex(0.01, 0.0), complex(6.6666190477513225e-06, 0.0), complex(-3000050.001249979, 0.0)),
]


@pytest.mark.parametrize("n,z,j_ref,y_ref", FROZEN)
def test_frozen_values(n, z, j_ref, y_ref):
    assert abs(sph_bessel_j(n, z) - j_ref) <= 1e-12 * abs(j_ref)
    assert abs(sph_bessel_y(n, z) - y_ref) <= 1e-12 * abs(y_ref)


def test_against_mpmath_grid():
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 30
    for z in [0.3 + 0.1j, 2.0 - 0.7j, 5.5 + 2.5j, 9.0 + 0.0j, 1.0 - 3.0j]:
        j = sph_jn_all(20, z)
        h = sph_h1_all(20, z)
        for n in (0, 1, 4, 9, 20):
            zm = mp.mpc(z.real, z.imag)
            f = mp.sqrt(mp.pi / (2 * zm))
            jr = complex(f * mp.besselj(n + 0.5, zm))
            hr = complex(f * mp.hankel1(n + 0.5, zm))
            assert abs(j[n] - jr) <= 1e-11 * abs(jr)
            assert abs(h[n] - hr) <= 1e-11 * abs(hr)


def test_closed_forms_low_order():
    z = np.array([0.7, 3.2 + 1.1j, -2.0 + 0.5j])
    j = sph_jn_all(1, z)
    y = sph_yn_all(1, z)
    np.testing.assert_allclose(j[0], np.sin(z) / z, rtol=1e-14)
    np.testing.assert_allclose(j[1], np.sin(z) / z**2 - np.cos(z) / z, rtol=1e-13)
    np.testing.assert_allclose(y[0], -np.cos(z) / z, rtol=1e-14)
    np.testing.assert_allclose(sph_h1_all(0, z)[0], -1j * np.exp(1j * z) / z, rtol=1e-13)


def test_wronskian_complex_grid():
    re, im = np.meshgrid(np.linspace(0.1, 20.0, 25), np.linspace(-5.0, 5.0, 21))
    z = re + 1j * im
    j = sph_jn_all(51, z)
    y = sph_yn_all(51, z)
    for n in range(51):
        w = j[n + 1] * y[n] - j[n] * y[n + 1]
        assert np.max(np.abs(w * z**2 - 1.0)) <= 1e-10


def test_wronskian_at_rounding_floor_on_disc():
    # for large |Im z| both products grow like exp(2 |Im z|), so the identity
    # can only hold to rounding relative to their size
    re, im = np.meshgrid(np.linspace(-100, 100, 41), np.linspace(-100, 100, 41))
    z = (re + 1j * im).ravel()
    z = z[(np.abs(z) >= 0.1) & (np.abs(z) <= 100)]
    j, dj = sph_all_with_derivatives("j", 50, z)
    y, dy = sph_all_with_derivatives("y", 50, z)
    a, b = j * dy, dj * y
    dev = np.abs((a - b) * z**2 - 1.0)
    assert np.max(dev / ((np.abs(a) + np.abs(b)) * np.abs(z) ** 2)) <= 1e-13
    assert np.max(dev[:, np.abs(z.imag) <= 5.0]) <= 1e-10


def test_large_imaginary_argument_against_mpmath():
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 40
    for z in (-100j, 30 - 60j, 50 + 70j, -80 + 20j):
        j = sph_jn_all(50, z)
        y = sph_yn_all(50, z)
        zm = mp.mpc(z.real, z.imag)
        f = mp.sqrt(mp.pi / (2 * zm))
        for n in (0, 7, 50):
            jr = complex(f * mp.besselj(n + 0.5, zm))
            yr = complex(f * mp.bessely(n + 0.5, zm))
            assert abs(j[n] - jr) <= 1e-13 * abs(jr)
            assert abs(y[n] - yr) <= 1e-13 * abs(yr)


def test_derivative_matches_finite_difference():
    z, h = 2.3 + 0.4j, 1e-6
    for kind in ("j", "y", "h"):
        for n in (0, 2, 7):
            fd = {
                "j": lambda x: sph_bessel_j(n, x),
                "y": lambda x: sph_bessel_y(n, x),
                "h": lambda x: sph_hankel1(n, x),
            }[kind]
            num = (fd(z + h) - fd(z - h)) / (2 * h)
            assert abs(sph_bessel_derivative(kind, n, z) - num) <= 1e-7 * max(1.0, abs(num))


def test_values_and_derivatives_shapes():
    vals, ders = sph_all_with_derivatives("h", 6, np.ones((2, 3)))
    assert vals.shape == ders.shape == (7, 2, 3)
    with pytest.raises(ValueError):
        sph_all_with_derivatives("q", 3, 1.0)


def test_origin_and_errors():
    j = sph_jn_all(4, 0.0)
    assert j[0] == 1.0 and np.all(j[1:] == 0.0)
    with pytest.raises(SingularArgumentError):
        sph_yn_all(3, 0.0)
    with pytest.raises(SingularArgumentError):
        sph_all_with_derivatives("j", 3, 0.0)
    with pytest.raises(UnsupportedOrderError):
        sph_jn_all(-1, 1.0)
    with pytest.raises(UnsupportedOrderError):
        sph_jn_all(5000, 1.0)


def test_legendre_against_numpy():
    x = np.linspace(-1, 1, 41)
    P = legendre_p_all(12, x)
    for n in range(13):
        c = np.zeros(n + 1)
        c[n] = 1.0
        np.testing.assert_allclose(P[n], np.polynomial.legendre.legval(x, c), atol=1e-13)
    assert legendre_p(3, 1.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        legendre_p(2, 1.5)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1.0, 1.0), st.integers(0, 60))
def test_legendre_bounded(x, n):
    assert abs(legendre_p(n, x)) <= 1.0 + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 25.0), st.floats(-4.0, 4.0), st.integers(1, 40))
def test_recurrence_identity(re, im, n):
    z = complex(re, im)
    j = sph_jn_all(n + 1, z)
    lhs = j[n - 1] + j[n + 1]
    rhs = (2 * n + 1) / z * j[n]
    assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), abs(rhs), abs(j[n - 1]))


def test_truncation_terms():
    assert truncation_terms(1.0, 3.0) == 6
    assert truncation_terms(1.5, 1.5) == truncation_terms(1.5, 0.7)
    # small source radius: uses |k r_s|
    assert truncation_terms(1.0, 0.1) == truncation_terms(0.1, 1.0)
    assert truncation_terms(1e-6, 0.2) == 1
    with pytest.raises(ValueError):
        truncation_terms(0.0, 1.0)
    with pytest.raises(ValueError):
        truncation_terms(1.0, -1.0)
