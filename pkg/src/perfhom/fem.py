"""P1 finite elements on triangle meshes.

Bilinear forms are assembled with the orientation ``K[i, j] = a(phi_j, phi_i)``
so that a nonsymmetric diffusion matrix enters as ``(A grad u) . grad v``.
Volume integrals use the 3-point degree-2 rule, edge integrals 2-point Gauss.
Coefficients are evaluated at cell coordinates ``frac(x * N)`` where ``N`` is
the mesh's tiling factor, so the same code assembles cell and fine problems.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import quadrature
from .coefficients import (
    MatrixField,
    ScalarVolumeField,
    SourceField,
    SurfaceResistivity,
    cell_coords,
    eval_matrix,
)
from .errors import ConflictingConstraints, SolverBreakdown
from .geometry import TriMesh

DEFAULT_TOL = 1e-10


# -- element geometry --------------------------------------------------------

def element_gradients(mesh: TriMesh):
    """P1 basis gradients ``(nt, 3, 2)`` and triangle areas ``(nt,)``."""
    p = mesh.vertices[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    # rows of inv(J)^T applied to reference gradients (-1,-1), (1,0), (0,1)
    inv = np.empty((len(p), 2, 2))
    inv[:, 0, 0] = d2[:, 1] / det
    inv[:, 0, 1] = -d2[:, 0] / det
    inv[:, 1, 0] = -d1[:, 1] / det
    inv[:, 1, 1] = d1[:, 0] / det
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    grads = np.einsum("kr,trd->tkd", ref, inv)
    return grads, 0.5 * det


def _coords(mesh: TriMesh, pts):
    return cell_coords(pts, mesh.n_tiles)


def element_matrix_field(mesh: TriMesh, A) -> np.ndarray:
    """Quadrature average of ``A`` on each triangle, ``(nt, 2, 2)``.

    Every volume integral of ``A`` against P1 gradients goes through this
    average, which keeps discrete Galerkin identities exact.
    """
    if isinstance(A, MatrixField):
        pts = quadrature.triangle_points(mesh.vertices, mesh.triangles)
        vals = eval_matrix(A, _coords(mesh, pts))
        return np.einsum("q,tqij->tij", quadrature.TRI_WEIGHTS, vals)
    A = np.asarray(A, dtype=float)
    return np.broadcast_to(A, (mesh.nt, 2, 2)).copy()


def _volume_density(mesh: TriMesh, w, pts):
    if isinstance(w, (int, float, np.floating)):
        return np.full(pts.shape[:-1], float(w))
    if isinstance(w, SourceField):
        return w.oscillating(pts, mesh.n_tiles)
    if isinstance(w, ScalarVolumeField):
        return w(_coords(mesh, pts))
    return np.asarray(w(pts), dtype=float)


def _surface_density(mesh: TriMesh, w, pts):
    if isinstance(w, (int, float, np.floating)):
        return np.full(pts.shape[:-1], float(w))
    if isinstance(w, SurfaceResistivity):
        return w.at_points(_coords(mesh, pts), mesh.geometry.hole_center)
    if isinstance(w, SourceField):
        return w.oscillating(pts, mesh.n_tiles)
    return np.asarray(w(pts), dtype=float)


# -- forms -------------------------------------------------------------------

@dataclass(frozen=True)
class FormDescriptor:
    kind: str
    A: object = None
    b: tuple = (0.0, 0.0)
    w: object = 1.0
    tag: str | None = None


def Diffusion(A) -> FormDescriptor:
    return FormDescriptor("diffusion", A=A)


def Convection(b) -> FormDescriptor:
    return FormDescriptor("convection", b=tuple(float(v) for v in b))


def VolumeReaction(w=1.0) -> FormDescriptor:
    return FormDescriptor("reaction", w=w)


def SurfaceReaction(alpha, tag) -> FormDescriptor:
    return FormDescriptor("surface", w=alpha, tag=tag)


def _scatter(mesh_size, conn, local):
    k = conn.shape[1]
    rows = np.repeat(conn, k, axis=1).ravel()
    cols = np.tile(conn, (1, k)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh_size, mesh_size)).tocsr()


def assemble_bilinear(mesh: TriMesh, term: FormDescriptor) -> sp.csr_matrix:
    if term.kind == "diffusion":
        grads, area = element_gradients(mesh)
        Ae = element_matrix_field(mesh, term.A)
        # K[i, j] = area * grad_i . (A grad_j)
        local = area[:, None, None] * np.einsum("tid,tde,tje->tij", grads, Ae, grads)
        return _scatter(mesh.nv, mesh.triangles, local)
    if term.kind == "convection":
        grads, area = element_gradients(mesh)
        bg = grads @ np.asarray(term.b)  # (nt, 3): b . grad phi_j
        local = (area / 3.0)[:, None, None] * np.broadcast_to(bg[:, None, :], (mesh.nt, 3, 3))
        return _scatter(mesh.nv, mesh.triangles, local)
    if term.kind == "reaction":
        _, area = element_gradients(mesh)
        pts = quadrature.triangle_points(mesh.vertices, mesh.triangles)
        wq = _volume_density(mesh, term.w, pts) * quadrature.TRI_WEIGHTS
        phi = quadrature.TRI_BARY  # phi_i at point q
        local = area[:, None, None] * np.einsum("tq,qi,qj->tij", wq, phi, phi)
        return _scatter(mesh.nv, mesh.triangles, local)
    if term.kind == "surface":
        edges = mesh.edges(term.tag)
        pts, length = quadrature.edge_points(mesh.vertices, edges)
        wq = _surface_density(mesh, term.w, pts) * quadrature.EDGE_WEIGHTS
        phi = quadrature.edge_shape_values()
        local = length[:, None, None] * np.einsum("eq,qi,qj->eij", wq, phi, phi)
        return _scatter(mesh.nv, edges, local)
    raise ValueError(f"unknown form kind {term.kind!r}")


def assemble_load(mesh: TriMesh, source, tag: str | None = None) -> np.ndarray:
    """Nodal load vector of a volume density, or of a surface density on ``tag``."""
    out = np.zeros(mesh.nv)
    if tag is None:
        _, area = element_gradients(mesh)
        pts = quadrature.triangle_points(mesh.vertices, mesh.triangles)
        wq = _volume_density(mesh, source, pts) * quadrature.TRI_WEIGHTS
        local = area[:, None] * (wq @ quadrature.TRI_BARY)
        np.add.at(out, mesh.triangles, local)
    else:
        edges = mesh.edges(tag)
        pts, length = quadrature.edge_points(mesh.vertices, edges)
        wq = _surface_density(mesh, source, pts) * quadrature.EDGE_WEIGHTS
        local = length[:, None] * (wq @ quadrature.edge_shape_values())
        np.add.at(out, edges, local)
    return out


def mass_matrix(mesh: TriMesh, w=1.0):
    return assemble_bilinear(mesh, VolumeReaction(w))


def stiffness_matrix(mesh: TriMesh, A=None):
    return assemble_bilinear(mesh, Diffusion(np.eye(2) if A is None else A))


def surface_mass(mesh: TriMesh, tag: str, w=1.0):
    return assemble_bilinear(mesh, SurfaceReaction(w, tag))


# -- functions ---------------------------------------------------------------

@dataclass(eq=False)
class FEFunction:
    mesh: TriMesh
    values: np.ndarray
    residual: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.nv,):
            raise ValueError(
                f"expected {self.mesh.nv} nodal values, got shape {self.values.shape}"
            )

    def gradients(self) -> np.ndarray:
        """Constant gradient on each triangle, ``(nt, 2)``."""
        grads, _ = element_gradients(self.mesh)
        return np.einsum("tkd,tk->td", grads, self.values[self.mesh.triangles])

    def at_quadrature(self) -> np.ndarray:
        return self.values[self.mesh.triangles] @ quadrature.TRI_BARY.T

    def mean(self) -> float:
        _, area = element_gradients(self.mesh)
        return float((area * self.values[self.mesh.triangles].mean(axis=1)).sum())

    def __add__(self, other):
        return FEFunction(self.mesh, self.values + _vals(other))

    def __sub__(self, other):
        return FEFunction(self.mesh, self.values - _vals(other))

    def __mul__(self, s):
        return FEFunction(self.mesh, self.values * s)

    __rmul__ = __mul__

    def __neg__(self):
        return FEFunction(self.mesh, -self.values)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("node_index,x,y,value\n")
            for i, ((x, y), v) in enumerate(zip(self.mesh.vertices, self.values)):
                fh.write(f"{i},{float(x)!r},{float(y)!r},{float(v)!r}\n")


def _vals(other):
    return other.values if isinstance(other, FEFunction) else other


def integrate(fn: FEFunction) -> float:
    """Volume integral of a P1 function."""
    return fn.mean()


def norm(fn: FEFunction, kind: str = "L2_VOLUME", tag: str | None = None) -> float:
    u = fn.values
    if kind == "L2_VOLUME":
        return float(np.sqrt(max(u @ (mass_matrix(fn.mesh) @ u), 0.0)))
    if kind == "H1_SEMI":
        _, area = element_gradients(fn.mesh)
        g = fn.gradients()
        return float(np.sqrt((area * (g * g).sum(1)).sum()))
    if kind == "L2_SURFACE":
        if tag is None:
            raise ValueError("L2_SURFACE norm needs an edge tag")
        return float(np.sqrt(max(u @ (surface_mass(fn.mesh, tag) @ u), 0.0)))
    raise ValueError(f"unknown norm kind {kind!r}")


# -- constraints and solves --------------------------------------------------

@dataclass(eq=False)
class SparseSystem:
    """Assembled (unconstrained) system ``matrix @ u = rhs`` on mesh nodes.

    After :func:`apply_constraints` the reduced operator lives in ``reduced``
    and ``prolong``/``lift`` map reduced unknowns back to nodal values.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    prolong: sp.csr_matrix | None = None
    lift: np.ndarray | None = None
    zero_mean: bool = False
    reduced: sp.csr_matrix | None = None
    reduced_rhs: np.ndarray | None = None
    dirichlet: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def constrained(self) -> bool:
        return self.reduced is not None

    def expand(self, x: np.ndarray) -> np.ndarray:
        n = self.prolong.shape[1]
        return self.prolong @ x[:n] + self.lift


def periodic_roots(n: int, pairs) -> np.ndarray:
    """Representative node of each periodic class (smallest index)."""
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return np.array([find(i) for i in range(n)])


def apply_constraints(
    sys: SparseSystem,
    mesh: TriMesh,
    *,
    dirichlet: str | None = None,
    dirichlet_value=0.0,
    periodic: bool = False,
    zero_mean: bool = False,
) -> SparseSystem:
    n = mesh.nv
    roots = periodic_roots(n, mesh.periodic_pairs) if periodic else np.arange(n)
    fixed = np.zeros(n, dtype=bool)
    lift = np.zeros(n)
    if dirichlet is not None:
        nodes = mesh.tag_nodes(dirichlet)
        if periodic and (roots[nodes] != nodes).any():
            raise ConflictingConstraints("node is both Dirichlet and periodic slave")
        fixed[nodes] = True
        if callable(dirichlet_value):
            lift[nodes] = dirichlet_value(mesh.vertices[nodes])
        else:
            lift[nodes] = dirichlet_value
    free_roots = np.unique(roots[~fixed])
    col = -np.ones(n, dtype=np.int64)
    col[free_roots] = np.arange(len(free_roots))
    node_col = col[roots]
    keep = (~fixed) & (node_col >= 0)
    P = sp.csr_matrix(
        (np.ones(keep.sum()), (np.flatnonzero(keep), node_col[keep])),
        shape=(n, len(free_roots)),
    )
    K = sys.matrix
    Kr = (P.T @ K @ P).tocsr()
    br = P.T @ (sys.rhs - K @ lift)
    if zero_mean:
        c = P.T @ (mass_matrix(mesh) @ np.ones(n))
        Kr = sp.bmat([[Kr, sp.csr_matrix(c[:, None])], [sp.csr_matrix(c[None, :]), None]]).tocsr()
        br = np.append(br, 0.0)
    return SparseSystem(
        matrix=sys.matrix,
        rhs=sys.rhs,
        prolong=P,
        lift=lift,
        zero_mean=zero_mean,
        reduced=Kr,
        reduced_rhs=br,
        dirichlet={int(i): float(lift[i]) for i in np.flatnonzero(fixed)},
    )


def solve_reduced(A: sp.spmatrix, b: np.ndarray, tol: float = DEFAULT_TOL):
    """Sparse LU solve with one step of iterative refinement if needed."""
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), 0.0
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise SolverBreakdown(f"factorization failed: {exc}", residual=np.inf) from exc
    x = lu.solve(b)
    res = np.linalg.norm(A @ x - b) / bnorm
    if not res <= tol:
        x = x + lu.solve(b - A @ x)
        res = np.linalg.norm(A @ x - b) / bnorm
    if not res <= tol:
        raise SolverBreakdown(f"relative residual {res:.3e} above tolerance {tol:.1e}", residual=res)
    return x, float(res)


def solve(sys: SparseSystem, mesh: TriMesh, tol: float = DEFAULT_TOL) -> FEFunction:
    if not sys.constrained:
        x, res = solve_reduced(sys.matrix, sys.rhs, tol)
        return FEFunction(mesh, x, res)
    x, res = solve_reduced(sys.reduced, sys.reduced_rhs, tol)
    return FEFunction(mesh, sys.expand(x), res)
