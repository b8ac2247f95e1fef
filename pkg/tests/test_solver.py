import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from helpers import SCENARIOS
from nsbem.fields import evaluate_points
from nsbem.mesh import QuadraticTriangleMesh, build_sphere_mesh
from nsbem.scenario import load_scenario
from nsbem.solver import (
    DenseComplexSystem,
    Domain,
    Scenario,
    ScenarioError,
    SingularSystemError,
    Source,
    Surface,
    UnknownLayout,
    build_system,
    locate_points,
    monopole_rhs,
    solve_dense,
    solve_scenario,
    unpack_solution,
)
from nsbem.validation import null_test

SRC_OUT = Source("ext", [0.0, 0.0, 2.5], 1.0)
SRC_IN = Source("in", [0.2, -0.1, 0.3], 0.5 - 0.2j)
PROBES = np.array([[0.3, -1.9, 1.2], [0.2, 0.1, -0.3], [2.5, 0.5, 0.0]])


def two_media(mesh, sources, k_in=1.4 + 0.1j, rho_in=2.0):
    doms = [Domain("ext", 1.0, 1.0, True), Domain("in", k_in, rho_in, False)]
    return Scenario(doms, [Surface(mesh, "in", "ext", "interface")], list(sources), k_ref=1.0, omega=1.0)


def one_sided(mesh, bc, sources):
    return Scenario([Domain("ext", 1.0, 1.0, True)], [Surface(mesh, None, "ext", bc)], list(sources),
                    k_ref=1.0, omega=1.0)


@pytest.fixture(scope="module")
def sphere1():
    return build_sphere_mesh(1.0, subdivision_level=1, surface_id="s")


def test_layout_dimension_core_shell():
    sf = load_scenario(SCENARIOS / "core_shell_validation.toml")
    lay = UnknownLayout.build(sf.scenario)
    assert lay.size == 2568
    assert [s.mesh.n_nodes for s in sf.scenario.surfaces] == [642, 642]


def test_layout_dimension_rigid_bowl():
    sf = load_scenario(SCENARIOS / "bowl_ka100.toml")
    assert UnknownLayout.build(sf.scenario).size == 5762


def test_layout_pressure_release_counts_nodes(sphere1):
    lay = UnknownLayout.build(one_sided(sphere1, "pressure_release", []))
    assert lay.size == sphere1.n_nodes
    assert lay.phi_offset == [None] and lay.dphi_offset == [0]


def test_constant_null_field_is_exact_for_laplace():
    # the subtraction makes the k = 0 rows annihilate constants to rounding
    res = null_test(0.0, levels=(0, 1, 2))
    assert max(res.residuals) < 1e-13


def test_constant_null_field_order_complex_k():
    res = null_test(0.8 + 0.6j, levels=(0, 1, 2))
    assert res.residuals[0] > res.residuals[1] > res.residuals[2]
    assert min(res.orders) >= 3.0


@pytest.mark.parametrize("k", [0.0, 0.8 + 0.6j, 2.0])
def test_dipole_null_field_order(k):
    res = null_test(k, levels=(1, 2), field="dipole")
    assert res.orders[0] >= 3.0


def test_null_field_values():
    from nsbem.validation import _null_field

    x = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    val, der = _null_field("dipole", 1e-7, x, 1.0)
    np.testing.assert_allclose(val, [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(der, [1.0, 0.0], atol=1e-12)
    with pytest.raises(ValueError):
        _null_field("quadrupole", 1.0, x, 1.0)


def test_transparent_interface_gives_free_field(sphere1):
    sc = two_media(sphere1, [SRC_OUT], k_in=1.0, rho_in=1.0)
    sol = solve_scenario(sc)
    phi, _, _, _ = evaluate_points(sc, sol, PROBES)
    R = np.linalg.norm(PROBES - SRC_OUT.position, axis=1)
    exact = np.exp(1j * R) / (4 * np.pi * R)
    assert np.max(np.abs(phi - exact) / np.abs(exact)) < 1e-3
    # surface data are the incident field: phi on the surface, dphi along the outward normal
    x = sphere1.nodes
    r = np.linalg.norm(x - SRC_OUT.position, axis=1)
    assert np.max(np.abs(sol.phi[0] - np.exp(1j * r) / (4 * np.pi * r))) < 1e-3 * np.max(np.abs(sol.phi[0]))


def _swap_field(bc, level, a, b):
    m = build_sphere_mesh(1.0, subdivision_level=level, surface_id="s")
    vals = []
    for src, rcv in ((a, b), (b, a)):
        sc = one_sided(m, bc, [Source("ext", src, 1.0)])
        phi, _, _, _ = evaluate_points(sc, solve_scenario(sc), np.array([rcv]))
        vals.append(phi[0])
    return abs(vals[0] - vals[1]) / abs(vals[0])


def test_reciprocity_rigid_sphere():
    assert _swap_field("rigid", 2, [0.0, 0.0, 3.0], [2.0, 1.0, -2.5]) <= 1e-6


def test_reciprocity_improves_with_refinement():
    a, b = [0.0, 0.0, 2.5], [1.5, 1.0, -2.0]
    assert _swap_field("pressure_release", 2, a, b) < _swap_field("pressure_release", 1, a, b)


def test_source_superposition(sphere1):
    sys_ab = build_system(two_media(sphere1, [SRC_OUT, SRC_IN]))
    sys_a = build_system(two_media(sphere1, [SRC_OUT]))
    sys_b = build_system(two_media(sphere1, [SRC_IN]))
    # the matrix does not depend on the sources
    assert np.array_equal(sys_a.matrix, sys_ab.matrix)
    np.testing.assert_allclose(sys_a.rhs + sys_b.rhs, sys_ab.rhs, rtol=0, atol=1e-14 * np.abs(sys_ab.rhs).max())
    xa, ra = solve_dense(sys_a)
    xb, rb = solve_dense(sys_b)
    _, rab = solve_dense(sys_ab)
    b = sys_ab.rhs
    combined = np.abs(sys_ab.matrix @ (xa + xb) - b).max() / np.abs(b).max()
    bound = (ra.residual * np.abs(sys_a.rhs).max() + rb.residual * np.abs(sys_b.rhs).max()) / np.abs(b).max()
    assert combined <= bound * (1 + 1e-6) + 1e-16
    assert combined <= 10 * max(rab.residual, 1e-15)


def test_rotation_invariance(sphere1):
    R = Rotation.from_rotvec([0.3, -0.7, 1.1]).as_matrix()
    sc = two_media(sphere1, [SRC_OUT, SRC_IN])
    sol = solve_scenario(sc)
    rot = QuadraticTriangleMesh(sphere1.nodes @ R.T, sphere1.elements, "s")
    sc_r = two_media(rot, [Source(s.domain, R @ s.position, s.strength) for s in (SRC_OUT, SRC_IN)])
    sol_r = solve_scenario(sc_r)
    for a, b in zip(sol_r.phi + sol_r.dphi, sol.phi + sol.dphi):
        assert np.max(np.abs(a - b)) <= 1e-8 * np.max(np.abs(b))
    phi, _, _, _ = evaluate_points(sc, sol, PROBES)
    phi_r, _, _, _ = evaluate_points(sc_r, sol_r, PROBES @ R.T)
    assert np.max(np.abs(phi_r - phi)) <= 1e-8 * np.max(np.abs(phi))


def test_block_assembly_matches_single_block(sphere1):
    sc = two_media(sphere1, [SRC_OUT, SRC_IN])
    full = build_system(sc, block_rows=10_000)
    blocked = build_system(sc, block_rows=37)
    np.testing.assert_allclose(blocked.matrix, full.matrix, rtol=0, atol=1e-13 * np.abs(full.matrix).max())
    np.testing.assert_array_equal(blocked.rhs, full.rhs)


def test_keep_matrix_off_reports_nan(sphere1):
    sc = one_sided(sphere1, "rigid", [SRC_OUT])
    kept = solve_scenario(sc, keep_matrix=True)
    dropped = solve_scenario(sc, keep_matrix=False)
    assert kept.report.residual < 1e-12
    assert np.isnan(dropped.report.residual)
    np.testing.assert_allclose(dropped.phi[0], kept.phi[0], rtol=1e-12)


def test_singular_system_raises():
    lay = UnknownLayout([], [], {}, 3)
    A = np.ones((3, 3), dtype=complex)
    with pytest.raises(SingularSystemError):
        solve_dense(DenseComplexSystem(A, np.ones(3, dtype=complex), lay))


def test_empty_system():
    lay = UnknownLayout([], [], {}, 0)
    x, rep = solve_dense(DenseComplexSystem(np.zeros((0, 0), dtype=complex), np.zeros(0, dtype=complex), lay))
    assert x.size == 0 and rep.dimension == 0


def test_unpack_fills_absent_unknowns(sphere1):
    sc = one_sided(sphere1, "rigid", [SRC_OUT])
    lay = UnknownLayout.build(sc)
    sol = unpack_solution(sc, lay, np.arange(lay.size, dtype=complex))
    assert np.all(sol.dphi[0] == 0) and sol.phi[0][5] == 5


def test_outer_side_potential_uses_density_ratio(sphere1):
    sc = two_media(sphere1, [SRC_OUT], rho_in=2.0)
    lay = UnknownLayout.build(sc)
    sol = unpack_solution(sc, lay, np.ones(lay.size, dtype=complex))
    np.testing.assert_allclose(sol.phi_side(0, "ext"), 2.0)
    np.testing.assert_allclose(sol.dphi_side(0, "ext"), -1.0)
    np.testing.assert_allclose(sol.dphi_side(0, "in"), 1.0)


def test_locate_points(sphere1):
    sc = two_media(sphere1, [])
    assert locate_points(sc, np.array([[0, 0, 0.2], [0, 3.0, 0], [0.5, 0.5, 0.5]])) == ["in", "ext", "in"]


def test_monopole_rhs_rejects_coincident_node(sphere1):
    sc = one_sided(sphere1, "rigid", [])
    sc.sources = [Source("ext", sphere1.nodes[0], 1.0)]
    with pytest.raises(ScenarioError):
        monopole_rhs(sc, "ext", sphere1.nodes[:3])


@pytest.mark.parametrize(
    "mutate,message",
    [
        (lambda sc: sc.domains.append(Domain("ext")), "unique"),
        (lambda sc: sc.domains.append(Domain("other", unbounded=True)), "unbounded"),
        (lambda sc: setattr(sc.domains[1], "rho_ratio", -1.0), "density"),
        (lambda sc: setattr(sc.surfaces[0], "bc", "soft"), "boundary condition"),
        (lambda sc: setattr(sc.surfaces[0], "outer", "nowhere"), "unknown domain"),
        (lambda sc: setattr(sc.surfaces[0], "outer", "in"), "two distinct"),
        (lambda sc: sc.sources.append(Source("ext", [0, 0, 0.1])), "located in"),
        (lambda sc: sc.sources.append(Source("void", [0, 0, 3.0])), "unknown domain"),
    ],
)
def test_scenario_validation(sphere1, mutate, message):
    sc = two_media(sphere1, [])
    mutate(sc)
    with pytest.raises(ScenarioError, match=message):
        sc.validate()


def test_rigid_surface_needs_one_side(sphere1):
    sc = two_media(sphere1, [])
    sc.surfaces[0].bc = "rigid"
    with pytest.raises(ScenarioError, match="exactly one"):
        sc.validate()
