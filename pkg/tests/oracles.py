"""Independent reference computations used by the tests."""
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def fd_reaction_diffusion_center(n: int = 256) -> float:
    """Center value of ``-lap u + u = 1``, ``u = 0`` on the boundary, 5-point stencil on an (n+1)^2 grid."""
    h = 1.0 / n
    m = n - 1
    T = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(m, m)) / h**2
    eye = sp.eye(m)
    A = (sp.kron(T, eye) + sp.kron(eye, T) + sp.eye(m * m)).tocsc()
    u = spla.spsolve(A, np.ones(m * m)).reshape(m, m)
    return float(u[m // 2, m // 2])


def dense_trace_constant(Ms, M, K, delta: float) -> float:
    """Largest generalized eigenvalue of the trace pencil, dense symmetric solver."""
    B = (M / delta + delta * K).toarray()
    return float(sla.eigh(Ms.toarray(), B, eigvals_only=True)[-1])


def richardson(coarse: float, fine: float, order: float = 2.0) -> float:
    return fine + (fine - coarse) / (2.0**order - 1.0)


def mirror_x(mesh):
    """Copy of ``mesh`` reflected through ``y1 = 1/2`` with orientation restored."""
    from perfhom.geometry import TriMesh, CellGeometry

    v = mesh.vertices.copy()
    v[:, 0] = 1.0 - v[:, 0]
    tris = mesh.triangles[:, [0, 2, 1]]
    g = mesh.geometry
    geom = CellGeometry((1.0 - g.hole_center[0], g.hole_center[1]), g.hole_radius, g.refinement)
    return TriMesh(v, tris, dict(mesh.edge_groups), mesh.periodic_pairs, geom)
