import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from perfhom import fem
from perfhom.coefficients import MatrixField, ScalarVolumeField, SourceField
from perfhom.errors import ConflictingConstraints, MissingTag, SolverBreakdown
from perfhom.geometry import GAMMA, SIGMA, TriMesh, macro_mesh, sigma_length

NONSYM = MatrixField("trig", ((1.0, 0.5), (0.0, 1.0)), ((0.0, 0.3), (0.0, 0.0)), (1, 0))


@pytest.fixture(scope="module")
def unit_triangle():
    return TriMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))


def test_element_stiffness(unit_triangle):
    K = fem.stiffness_matrix(unit_triangle).toarray()
    assert np.allclose(K, 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]), atol=1e-15)


def test_element_mass(unit_triangle):
    M = fem.mass_matrix(unit_triangle).toarray()
    assert np.allclose(M, (0.5 / 12) * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]), atol=1e-15)


def test_edge_mass():
    v = np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 5.0]])
    mesh = TriMesh(v, np.array([[0, 1, 2]]), {"E": np.array([[0, 1]])})
    Ms = fem.surface_mass(mesh, "E").toarray()[:2, :2]
    assert np.allclose(Ms, (5.0 / 6) * np.array([[2, 1], [1, 2]]), atol=1e-14)
    with pytest.raises(MissingTag):
        fem.surface_mass(mesh, SIGMA)


def test_convection_orientation(unit_triangle):
    # int (b . grad phi_j) phi_i with b = e1: grad phi = (-1,-1), (1,0), (0,1)
    C = fem.assemble_bilinear(unit_triangle, fem.Convection((1.0, 0.0))).toarray()
    assert np.allclose(C, np.tile([-1, 1, 0], (3, 1)) / 6, atol=1e-15)


def test_diffusion_orientation(unit_triangle):
    # K_ij = int (A grad phi_j) . grad phi_i; with A = [[0,1],[0,0]]: (A g_j).g_i = g_j[1] g_i[0]
    K = fem.assemble_bilinear(unit_triangle, fem.Diffusion(np.array([[0.0, 1.0], [0.0, 0.0]]))).toarray()
    g = np.array([[-1, -1], [1, 0], [0, 1]], dtype=float)
    assert np.allclose(K, 0.5 * np.outer(g[:, 0], g[:, 1]), atol=1e-15)


def test_loads(plain3, cell4):
    assert fem.assemble_load(plain3, 1.0).sum() == pytest.approx(1.0, abs=1e-14)
    assert not fem.assemble_load(plain3, SourceField()).any()
    g = fem.assemble_load(cell4, 1.0, SIGMA).sum()
    assert g == pytest.approx(sigma_length(cell4), abs=1e-14)
    assert g == pytest.approx(np.pi / 2, rel=0.02)


def test_symmetric_and_kernel(cell4):
    A = MatrixField("trig", ((2.0, 0.3), (0.3, 1.0)), ((0.4, 0.1), (0.1, 0.2)), (1, 2))
    K = fem.assemble_bilinear(cell4, fem.Diffusion(A))
    asym = abs(K - K.T).max()
    assert asym <= 1e-12 * abs(K).max()
    assert np.abs(K @ np.ones(cell4.nv)).max() <= 1e-12
    Kn = fem.assemble_bilinear(cell4, fem.Diffusion(NONSYM))
    assert np.abs(Kn @ np.ones(cell4.nv)).max() <= 1e-12
    assert np.abs(Kn.T @ np.ones(cell4.nv)).max() <= 1e-12


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_mass_psd(cell4, seed):
    M = fem.mass_matrix(cell4, ScalarVolumeField("trig", 1.0, 0.9, (1, 1)))
    x = np.random.default_rng(seed).standard_normal(cell4.nv)
    assert x @ (M @ x) >= -1e-12


def test_assembly_bitwise_deterministic(cell4):
    a = fem.assemble_bilinear(cell4, fem.Diffusion(NONSYM))
    b = fem.assemble_bilinear(cell4, fem.Diffusion(NONSYM))
    assert np.array_equal(a.data, b.data) and np.array_equal(a.indices, b.indices)


def test_constraint_dimensions(plain3, cell4):
    mesh1 = macro_mesh(3)
    sys = fem.apply_constraints(fem.SparseSystem(fem.stiffness_matrix(mesh1), np.zeros(mesh1.nv)), mesh1, dirichlet=GAMMA)
    assert sys.reduced.shape[0] == 7 * 7
    sys = fem.apply_constraints(fem.SparseSystem(fem.stiffness_matrix(cell4), np.zeros(cell4.nv)), cell4, periodic=True)
    assert sys.reduced.shape[0] == cell4.nv - len(cell4.periodic_pairs)
    sysz = fem.apply_constraints(
        fem.SparseSystem(fem.stiffness_matrix(cell4), np.zeros(cell4.nv)), cell4, periodic=True, zero_mean=True
    )
    assert sysz.reduced.shape[0] == sys.reduced.shape[0] + 1


def test_conflicting_constraints(cell4):
    from dataclasses import replace

    tagged = replace(cell4, edge_groups={**cell4.edge_groups, GAMMA: cell4.edge_groups["CELL_FACE_R"]})
    with pytest.raises(ConflictingConstraints):
        fem.apply_constraints(fem.SparseSystem(fem.stiffness_matrix(tagged), np.zeros(tagged.nv)), tagged,
                              dirichlet=GAMMA, periodic=True)


def test_identity_solve():
    b = np.arange(5.0)
    x, res = fem.solve_reduced(sp.eye(5, format="csr"), b)
    assert np.array_equal(x, b) and res == 0.0


def test_singular_breaks_down():
    with pytest.raises(SolverBreakdown):
        fem.solve_reduced(sp.csr_matrix(np.zeros((3, 3))), np.ones(3))


def test_dirichlet_zero_load():
    mesh = macro_mesh(4)
    sys = fem.apply_constraints(fem.SparseSystem(fem.stiffness_matrix(mesh), np.zeros(mesh.nv)), mesh, dirichlet=GAMMA)
    assert not fem.solve(sys, mesh).values.any()


def _manufactured_error(level):
    mesh = macro_mesh(level)

    def exact(x):
        return x[..., 0] * (1 - x[..., 0]) * x[..., 1] * (1 - x[..., 1])

    def source(x):
        return 2 * (x[..., 0] * (1 - x[..., 0]) + x[..., 1] * (1 - x[..., 1]))

    sys = fem.apply_constraints(fem.SparseSystem(fem.stiffness_matrix(mesh), fem.assemble_load(mesh, source)),
                                mesh, dirichlet=GAMMA)
    u = fem.solve(sys, mesh)
    from perfhom import quadrature

    _, area = fem.element_gradients(mesh)
    pts = quadrature.triangle_points(mesh.vertices, mesh.triangles)
    err = u.at_quadrature() - exact(pts)
    return np.sqrt((area * (err**2 @ quadrature.TRI_WEIGHTS)).sum())


def test_manufactured_solution_second_order():
    e = [_manufactured_error(L) for L in (3, 4, 5, 6)]
    rates = np.log2(np.array(e[:-1]) / np.array(e[1:]))
    assert rates[-1] == pytest.approx(2.0, abs=0.15)
    assert (rates > 1.8).all()


def test_dirichlet_and_periodic_exact(cell4):
    mesh = macro_mesh(4)
    sys = fem.apply_constraints(fem.SparseSystem(fem.stiffness_matrix(mesh), fem.assemble_load(mesh, 1.0)),
                                mesh, dirichlet=GAMMA, dirichlet_value=0.25)
    u = fem.solve(sys, mesh)
    assert (u.values[mesh.tag_nodes(GAMMA)] == 0.25).all()
    K = fem.stiffness_matrix(cell4) + fem.mass_matrix(cell4)
    sysp = fem.apply_constraints(fem.SparseSystem(K, fem.assemble_load(cell4, lambda x: np.sin(6 * x[..., 0]))),
                                 cell4, periodic=True)
    v = fem.solve(sysp, cell4).values
    a, b = cell4.periodic_pairs.T
    assert np.array_equal(v[a], v[b])


def test_norms(plain3, cell4):
    one = fem.FEFunction(plain3, np.ones(plain3.nv))
    assert fem.norm(one, "L2_VOLUME") == pytest.approx(1.0, abs=1e-14)
    assert fem.norm(one, "H1_SEMI") == 0.0
    one4 = fem.FEFunction(cell4, np.ones(cell4.nv))
    assert fem.norm(one4, "L2_SURFACE", SIGMA) ** 2 == pytest.approx(np.pi / 2, rel=0.02)
    with pytest.raises(MissingTag):
        fem.norm(fem.FEFunction(plain3, np.ones(plain3.nv)), "L2_SURFACE", "X")


def test_fefunction_csv(tmp_path, plain3):
    fn = fem.FEFunction(plain3, plain3.vertices[:, 0])
    fn.write_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "node_index,x,y,value"
    assert len(lines) == plain3.nv + 1
    with pytest.raises(ValueError):
        fem.FEFunction(plain3, np.ones(3))
