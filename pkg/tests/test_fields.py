import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsbem.fields import (
    GridSlice,
    LocationError,
    NearBoundaryError,
    PlaneSpec,
    beam_direction,
    evaluate_domain_point,
    evaluate_gradient,
    evaluate_points,
    far_field_pattern,
    focal_metrics,
    focal_metrics_grid,
    intensity_flux,
    monopole_reference_pressure,
    pressure_grid_slice,
    time_snapshot,
    write_grid_csv,
    write_radar_csv,
    write_snapshot_csv,
    write_vtk,
)
from nsbem.mesh import build_sphere_mesh
from nsbem.solver import Domain, Scenario, ScenarioError, Source, Surface, solve_scenario

FREE_POWER = 1.0 / (8 * np.pi)  # rho omega k |Q|^2 / (8 pi) with all factors 1


def free(sources, k=1.0, omega=1.0, rho=1.0):
    return Scenario([Domain("ext", 1.0, 1.0, True)], [], list(sources), k_ref=k, omega=omega, rho_ref=rho)


def rigid(mesh, sources, k=1.0):
    return Scenario([Domain("ext", 1.0, 1.0, True)], [Surface(mesh, None, "ext", "rigid")], list(sources),
                    k_ref=k, omega=1.0)


@pytest.fixture(scope="module")
def rigid_case():
    m = build_sphere_mesh(1.0, subdivision_level=1, surface_id="s")
    sc = rigid(m, [Source("ext", [0.0, 0.0, 3.0], 1.0)])
    return sc, solve_scenario(sc)


def test_far_field_decay_of_bare_monopole():
    sc = free([Source("ext", [0.0, 0.0, 0.0], 0.7 - 0.2j)], k=2.0)
    r = np.geomspace(10.0, 1e5, 12)
    pts = np.column_stack([r * np.sin(0.4), np.zeros_like(r), r * np.cos(0.4)])
    phi, _, _, _ = evaluate_points(sc, None, pts)
    rp = np.abs(phi) * r
    assert np.max(np.abs(rp / rp[0] - 1.0)) <= 1e-10


def test_pressure_convention():
    sc = free([Source("ext", [0.0, 0.0, 0.0], 1.0)], omega=3.0, rho=1.5)
    s = evaluate_domain_point(sc, None, [0.0, 0.0, 2.0])
    assert s.pressure == pytest.approx(1j * 3.0 * 1.5 * s.phi, rel=1e-15)
    assert s.phi == pytest.approx(np.exp(2j) / (8 * np.pi), rel=1e-14)
    assert monopole_reference_pressure(sc) == pytest.approx(1.5 * 3.0 / (4 * np.pi))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 2 * np.pi))
def test_normalization_invariance_free(alpha):
    plane = PlaneSpec([0, 0, 0], [1, 0, 0], [0, 0, 1], (-2.0, 2.0), (-2.0, 2.0))
    base = pressure_grid_slice(free([Source("ext", [0.1, 0.0, 0.3], 2.0)]), None, plane, (9, 7))
    rot = pressure_grid_slice(free([Source("ext", [0.1, 0.0, 0.3], 2.0 * np.exp(1j * alpha))]), None, plane, (9, 7))
    ok = ~base.masked
    np.testing.assert_allclose(rot.abs_normalized[ok], base.abs_normalized[ok], rtol=1e-12)


def test_normalization_invariance_scatterer(rigid_case):
    sc, sol = rigid_case
    plane = PlaneSpec([0, 0, 0], [1, 0, 0], [0, 0, 1], (-2.5, 2.5), (-2.5, 2.5))
    base = pressure_grid_slice(sc, sol, plane, (11, 11))
    ph = np.exp(0.83j)
    sc2 = rigid(sc.surfaces[0].mesh, [Source("ext", [0.0, 0.0, 3.0], ph)])
    sol2 = solve_scenario(sc2)
    rot = pressure_grid_slice(sc2, sol2, plane, (11, 11))
    ok = ~base.masked
    np.testing.assert_array_equal(base.masked, rot.masked)
    np.testing.assert_allclose(rot.abs_normalized[ok], base.abs_normalized[ok], rtol=1e-12)
    a = far_field_pattern(sc, sol, 50.0, n_angles=36).magnitude / monopole_reference_pressure(sc)
    b = far_field_pattern(sc2, sol2, 50.0, n_angles=36).magnitude / monopole_reference_pressure(sc2)
    np.testing.assert_allclose(b, a, rtol=1e-12)


def test_gradient_matches_finite_difference(rigid_case):
    sc, sol = rigid_case
    x = np.array([1.3, -0.9, 0.8])
    h = 1e-5
    g = evaluate_gradient(sc, sol, "ext", x[None, :])[0]
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fp, _, _, _ = evaluate_points(sc, sol, np.array([x + e, x - e]))
        assert abs(g[i] - (fp[0] - fp[1]) / (2 * h)) <= 1e-6 * np.abs(g).max()


def test_flux_of_free_monopole():
    sc = free([Source("ext", [0.1, 0.0, -0.2], 1.0)])
    assert intensity_flux(sc, None, "ext", (0, 0, 0), 1.5) == pytest.approx(FREE_POWER, rel=1e-4)


def test_flux_through_scatterer_is_lossless(rigid_case):
    sc, sol = rigid_case
    f1 = intensity_flux(sc, sol, "ext", (0, 0, 0), 1.8) / FREE_POWER
    assert f1 >= -1e-6
    m2 = build_sphere_mesh(1.0, subdivision_level=2, surface_id="s")
    sc2 = rigid(m2, sc.sources)
    f2 = intensity_flux(sc2, solve_scenario(sc2), "ext", (0, 0, 0), 1.8) / FREE_POWER
    assert abs(f2) < abs(f1)


def test_point_errors(rigid_case):
    sc, sol = rigid_case
    with pytest.raises(ScenarioError):
        evaluate_domain_point(sc, sol, [0.0, 0.0, 3.0])
    with pytest.raises(LocationError):
        evaluate_domain_point(sc, sol, [0.0, 0.0, 0.2])
    with pytest.raises(NearBoundaryError):
        evaluate_domain_point(sc, sol, [0.0, 0.0, 1.0005])
    s = evaluate_domain_point(sc, sol, [0.0, 0.0, 1.2])
    assert s.domain == "ext" and np.isfinite(s.phi)


def test_masking_and_source_points(rigid_case):
    sc, sol = rigid_case
    pts = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 3.0], [0.0, 0.0, 1.001], [0.0, 2.0, 0.0]])
    phi, p, where, masked = evaluate_points(sc, sol, pts)
    assert where[0] is None
    assert masked.tolist() == [True, True, True, False]
    assert np.isnan(phi[:3]).all() and np.isfinite(p[3])


def test_far_field_radius_errors(rigid_case):
    sc, sol = rigid_case
    with pytest.raises(ScenarioError, match="intersects"):
        far_field_pattern(sc, sol, 0.9)
    with pytest.raises(ScenarioError, match="enclose"):
        far_field_pattern(sc, sol, 2.0)


def test_far_field_scattered_part_only():
    sc = free([Source("ext", [0.0, 0.0, 0.5], 1.0)])
    pat = far_field_pattern(sc, None, 100.0, n_angles=24)
    assert np.max(pat.magnitude) < 1e-15
    tot = far_field_pattern(sc, None, 100.0, n_angles=24, subtract_incident=False)
    assert np.allclose(tot.magnitude, 1.0 / (4 * np.pi * 100.0), rtol=1e-2)


@pytest.mark.parametrize("direction", [0.3, -2.0, 1.2])
def test_beam_direction_of_endfire_pair(direction):
    # two phased monopoles radiate most strongly along the line joining them
    k, d = 4.0, 0.4
    axis = np.array([np.sin(direction), 0.0, np.cos(direction)])
    sc = free([Source("ext", [0, 0, 0], 1.0), Source("ext", d * axis, np.exp(1j * k * d))], k=k)
    theta, mag = beam_direction(sc, None, 200.0, subtract_incident=False, n_angles=180)
    assert theta == pytest.approx(direction, abs=2e-3)
    assert mag == pytest.approx(2.0 / (4 * np.pi * 200.0), rel=1e-2)


def test_focal_metrics_parabola():
    x = np.linspace(-1, 1, 21)
    y = 2.0 - (x - 0.037) ** 2
    vmax, pos = focal_metrics(x, y)
    assert pos == pytest.approx(0.037, abs=1e-12)
    assert vmax == pytest.approx(2.0, abs=1e-12)


def test_focal_metrics_nan_neighbour_and_edges():
    x = np.arange(6.0)
    vmax, pos = focal_metrics(x, [1.0, 2.0, 5.0, np.nan, 1.0, 0.0])
    assert (vmax, pos) == (5.0, 2.0)
    assert focal_metrics(x, [9.0, 2.0, 1.0, 0.0, 0.0, 0.0]) == (9.0, 0.0)
    with pytest.raises(ValueError):
        focal_metrics([], [])
    with pytest.raises(ValueError):
        focal_metrics([0.0, 1.0], [np.nan, np.nan])


def _synthetic_grid(f, s, t):
    S, T = np.meshgrid(s, t, indexing="xy")
    P = np.column_stack([S.ravel(), np.zeros(S.size), T.ravel()])
    p = f(S, T).ravel().astype(complex)
    masked = ~np.isfinite(p)
    plane = PlaneSpec([0, 0, 0], [1, 0, 0], [0, 0, 1], (s[0], s[-1]), (t[0], t[-1]))
    return GridSlice(P, s, t, p, masked, 1.0, plane)


def test_focal_metrics_grid():
    s, t = np.linspace(0, 2, 41), np.linspace(-1, 1, 31)
    g = _synthetic_grid(lambda S, T: 3.0 - (S - 1.013) ** 2 - 2 * (T + 0.21) ** 2, s, t)
    vmax, ps, pt = focal_metrics_grid(g)
    assert (ps, pt) == (pytest.approx(1.013, abs=1e-9), pytest.approx(-0.21, abs=1e-9))
    assert vmax == pytest.approx(3.0, abs=1e-12)


def test_time_snapshot_identities():
    p = np.array([1 + 2j, -0.5 + 0.1j, np.nan])
    np.testing.assert_allclose(time_snapshot(p, 0.0)[:2], p.real[:2])
    np.testing.assert_allclose(time_snapshot(p, np.pi)[:2], -p.real[:2], atol=1e-15)
    assert np.isnan(time_snapshot(p, 1.0)[2])
    phases = 2 * np.pi * np.arange(16) / 16
    mean_sq = np.mean([time_snapshot(p[:2], ph) ** 2 for ph in phases], axis=0)
    np.testing.assert_allclose(mean_sq, np.abs(p[:2]) ** 2 / 2, rtol=1e-10)


def test_grid_csv_format(tmp_path):
    s, t = np.linspace(0, 1, 3), np.linspace(0, 1, 2)
    g = _synthetic_grid(lambda S, T: np.where(S > 0.9, np.nan, 1.0 / 3.0 + S), s, t)
    write_grid_csv(g, tmp_path / "g.csv")
    rows = list(csv.reader(open(tmp_path / "g.csv")))
    assert rows[0] == ["x", "y", "z", "re_p", "im_p", "abs_p_normalized", "masked"]
    assert len(rows) == 1 + 6
    assert rows[1][3] == "0.33333333333333331"
    assert rows[3][3:] == ["nan", "nan", "nan", "1"]
    assert all(r[6] in ("0", "1") for r in rows[1:])


def test_radar_and_snapshot_csv(tmp_path):
    sc = free([Source("ext", [0.0, 0.0, 0.0], 1.0)])
    pat = far_field_pattern(sc, None, 10.0, n_angles=8, subtract_incident=False)
    write_radar_csv(pat, tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["theta_rad", "abs_p_sc"] and len(rows) == 9
    assert float(rows[3][0]) == pytest.approx(np.pi / 2)
    s, t = np.linspace(0, 1, 2), np.linspace(0, 1, 2)
    g = _synthetic_grid(lambda S, T: 1j + S, s, t)
    write_snapshot_csv(g, [0.0, np.pi / 2], tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["x", "y", "z", "p_phase_0", "p_phase_1"]
    assert float(rows[2][3]) == pytest.approx(1.0) and float(rows[2][4]) == pytest.approx(1.0)


def test_vtk_structured_points_and_fallback(tmp_path):
    s, t = np.linspace(0, 1, 3), np.linspace(0, 2, 5)
    g = _synthetic_grid(lambda S, T: S + T, s, t)
    write_vtk(g, tmp_path / "a.vtk")
    text = (tmp_path / "a.vtk").read_text().splitlines()
    assert "DATASET STRUCTURED_POINTS" in text
    assert "DIMENSIONS 3 1 5" in text and "SPACING 0.5 1 0.5" in text
    np.testing.assert_array_equal([float(v) for v in text[-15:]], g.abs_normalized)
    g.plane = PlaneSpec([0, 0, 0], [1, 1, 0], [0, 0, 1], (0, 1), (0, 2))
    write_vtk(g, tmp_path / "b.vtk")
    text = (tmp_path / "b.vtk").read_text()
    assert "DATASET STRUCTURED_GRID" in text and "POINTS 15 double" in text


def test_grid_rejects_unknown_normalization():
    plane = PlaneSpec([0, 0, 0], [1, 0, 0], [0, 0, 1], (0, 1), (0, 1))
    with pytest.raises(ValueError):
        pressure_grid_slice(free([Source("ext", [0, 0, 5.0], 1.0)]), None, plane, (2, 2), "peak")
