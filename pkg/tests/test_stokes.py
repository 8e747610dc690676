import numpy as np
import pytest
import scipy.io
import scipy.sparse.linalg as spla

from svstokes.analysis import exact_fields
from svstokes.elements import collapsed_rule
from svstokes.mesh import classify, generate_foursplit, single_triangle
from svstokes.stokes import (assemble, build_dof_map, divergence_norms, element_matrices,
                             export_system, h1_seminorm, interpolate_velocity, null_residual,
                             pressure_mean, smallest_pressure_singular_value, solve, spurious_mode)


def test_dof_counts_single_triangle():
    d = build_dof_map(single_triangle())
    assert d.n_scalar == 15 and d.n_pressure == 10
    assert d.boundary.sum() == 12 and d.free_velocity.size == 6


def test_dof_counts_foursplit():
    m = generate_foursplit(8)
    d = build_dof_map(m)
    # vertices + 3 per edge + 3 per triangle
    assert d.n_scalar == m.n_vertices + 3 * m.n_edges + 3 * m.n_triangles == 2113
    assert build_dof_map(generate_foursplit(32)).n_pressure == 40960


def test_shared_edge_nodes_coincide():
    m = generate_foursplit(2, 3, 5)
    d = build_dof_map(m)
    x = d.node_coords[d.cell_dofs]                     # (nt, 15, 2)
    from svstokes.elements import P4
    ref = np.einsum("nk,tkd->tnd", P4.node_barycentric, m.vertices[m.triangles])
    assert np.allclose(x, ref, atol=1e-14)


@pytest.fixture(scope="module")
def small_system():
    m = generate_foursplit(2, 1.0005, 1)
    return assemble(m, build_dof_map(m), exact_fields().f)


def test_stiffness_is_symmetric_positive_definite(small_system):
    a = small_system.A
    assert abs(a - a.T).max() == 0.0
    eig = np.linalg.eigvalsh(a.toarray())
    assert eig.min() > 0


def test_saddle_matrix_symmetric(small_system):
    k = small_system.matrix()
    assert abs(k - k.T).max() < 1e-14 * abs(k).max()


def test_constant_pressure_is_in_kernel_of_gradient(small_system):
    ones = np.ones(small_system.n_pressure)
    assert np.abs(small_system.B.T @ ones).max() < 1e-12


def test_lyness_matches_high_order_rule():
    m = generate_foursplit(2, 3, 5)
    a1, bx1, by1 = element_matrices(m)
    a2, bx2, by2 = element_matrices(m, collapsed_rule(12))
    for p, q in ((a1, a2), (bx1, bx2), (by1, by2)):
        assert np.abs(p - q).max() < 1e-12 * max(1.0, np.abs(q).max())


def test_zero_source_gives_zero_solution():
    m = generate_foursplit(2, 1.0005, 1)
    sol = solve(assemble(m))
    assert np.abs(sol.velocity).max() < 1e-14
    assert np.abs(sol.pressure).max() < 1e-10


def test_solution_is_divergence_free_with_zero_mean_pressure(solved):
    case = solved(4, 1.0005, 1)
    sol = case.solution
    assert np.sqrt(np.sum(divergence_norms(sol) ** 2)) < 1e-10 * h1_seminorm(sol)
    assert abs(pressure_mean(case.mesh, sol.pressure)) < 1e-10
    assert sol.diagnostics["residual"] < 1e-9
    assert not sol.rank_deficient


def test_velocity_interpolant_is_reasonable_approximation(solved):
    case = solved(4, 1.0005, 1)
    ui = interpolate_velocity(case.dofs, case.exact.u)
    rel = np.linalg.norm(case.solution.velocity - ui) / np.linalg.norm(ui)
    assert rel < 0.05


def test_uniform_mesh_is_rank_deficient_with_unique_velocity():
    m = generate_foursplit(4)
    system = assemble(m, build_dof_map(m), exact_fields().f)
    s1 = solve(system)
    s2 = solve(system, pressure_shift=1e-7)
    assert s1.rank_deficient and s2.rank_deficient
    scale = np.abs(s1.velocity).max()
    assert np.abs(s1.velocity - s2.velocity).max() < 1e-10 * scale
    assert s1.diagnostics["residual"] < 1e-9


@pytest.mark.parametrize("mesh", [generate_foursplit(2), single_triangle()],
                         ids=["foursplit", "single"])
def test_spurious_modes_are_null_on_exact_meshes(mesh):
    rep = classify(mesh)
    system = assemble(mesh)
    for v in np.flatnonzero(rep.exactly_singular):
        q = spurious_mode(mesh, rep, v)
        assert null_residual(system, q) < 1e-12


def test_spurious_mode_residual_decreases_towards_singular():
    res = []
    for r in (1.1, 1.01, 1.001, 1.0005):
        m = generate_foursplit(2, r, 1)
        rep = classify(m)
        v = int(np.flatnonzero(rep.quasi_singular & np.array(
            [loc == "interior" for loc in rep.location]))[0])
        res.append(null_residual(assemble(m), spurious_mode(m, rep, v)))
    assert all(b < a for a, b in zip(res, res[1:]))
    assert res[-1] < 2e-2 * res[0]


def test_spurious_mode_rejects_regular_vertex():
    m = generate_foursplit(2, 1, 3)
    rep = classify(m)
    with pytest.raises(ValueError):
        spurious_mode(m, rep, m.n_vertices - 1)


def test_smallest_singular_value_tracks_quasi_singularity():
    s = [smallest_pressure_singular_value(assemble(generate_foursplit(2, r, 1)))
         for r in (1.1, 1.01)]
    assert s[1] < s[0]
    assert smallest_pressure_singular_value(assemble(generate_foursplit(2))) < 1e-10


def test_null_probe_distinguishes_exact_from_quasi(solved):
    # the probe reports the dominant eigenvalue mu of -eps K_eps^{-1} on pressures
    assert 1 - solved(4, 1.0005, 1).solution.diagnostics["null_probe"] > 1e-8
    m = generate_foursplit(2)
    assert 1 - solve(assemble(m)).diagnostics["null_probe"] < 1e-10


def test_export_system_roundtrip(tmp_path, small_system):
    export_system(small_system, tmp_path / "k.mtx")
    k = scipy.io.mmread(tmp_path / "k.mtx")
    assert k.shape == (small_system.n_unknowns,) * 2
    assert abs(k.tocsc() - small_system.matrix()).max() < 1e-15 * abs(small_system.A).max()


def test_residual_of_unshifted_system(solved):
    case = solved(4, 1.0005, 1)
    sol = case.solution
    x = np.concatenate([sol.velocity[case.system.free], sol.pressure.ravel(), [sol.multiplier]])
    b = case.system.rhs()
    r = np.linalg.norm(case.system.matrix() @ x - b) / np.linalg.norm(b)
    assert r < 1e-9
