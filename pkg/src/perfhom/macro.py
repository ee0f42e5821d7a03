"""Homogenized problem on the unit square and two-scale reconstruction."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .cells import CellSolutionSet
from .coefficients import cell_coords, sym_eigs
from .effective import HomogenizedModel
from .errors import NotElliptic, ProvenanceMismatch
from .geometry import GAMMA, TriMesh

log = logging.getLogger(__name__)

BARY_TOL = 1e-9


class TriLocator:
    """Point location on a triangle mesh through a uniform bucket grid.

    Each bucket stores the triangles whose bounding box touches it; a query
    tests all candidates of its bucket at once and keeps the one with the
    largest minimum barycentric coordinate.
    """

    def __init__(self, mesh: TriMesh, buckets: int | None = None):
        self.mesh = mesh
        p = mesh.vertices[mesh.triangles]
        self.lo = mesh.vertices.min(axis=0)
        span = mesh.vertices.max(axis=0) - self.lo
        self.n = buckets or max(1, int(np.sqrt(mesh.nt / 2)))
        self.size = np.where(span > 0, span / self.n, 1.0)
        blo = self._bucket(p.min(axis=1), clip=True)
        bhi = self._bucket(p.max(axis=1), clip=True)
        cells = [[] for _ in range(self.n * self.n)]
        for t in range(mesh.nt):
            for i in range(blo[t, 0], bhi[t, 0] + 1):
                for j in range(blo[t, 1], bhi[t, 1] + 1):
                    cells[i * self.n + j].append(t)
        width = max(len(c) for c in cells)
        self.table = np.full((len(cells), width), -1, dtype=np.int64)
        for k, c in enumerate(cells):
            self.table[k, : len(c)] = c
        # affine maps x -> barycentric (lambda_1, lambda_2)
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        self.origin = p[:, 0]
        self.inv = np.stack(
            [np.stack([d2[:, 1], -d2[:, 0]], -1), np.stack([-d1[:, 1], d1[:, 0]], -1)], 1
        ) / det[:, None, None]

    def _bucket(self, x, clip=False):
        b = np.floor((x - self.lo) / self.size).astype(np.int64)
        return np.clip(b, 0, self.n - 1) if clip else b

    def barycentric(self, tri, x):
        l12 = np.einsum("...ij,...j->...i", self.inv[tri], x - self.origin[tri])
        return np.concatenate([1 - l12.sum(-1, keepdims=True), l12], axis=-1)

    def locate(self, points, strict: bool = True):
        """Containing triangle and barycentric coordinates for each point.

        With ``strict`` a point outside the mesh raises ``ValueError``;
        otherwise its triangle index is -1.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        b = self._bucket(pts, clip=True)
        cand = self.table[b[:, 0] * self.n + b[:, 1]]  # (np, w)
        safe = np.where(cand >= 0, cand, 0)
        bary = self.barycentric(safe, pts[:, None, :])  # (np, w, 3)
        score = np.where(cand >= 0, bary.min(-1), -np.inf)
        best = score.argmax(1)
        rows = np.arange(len(pts))
        tri = cand[rows, best]
        lam = bary[rows, best]
        outside = score[rows, best] < -BARY_TOL
        if outside.any():
            if strict:
                raise ValueError(f"{outside.sum()} point(s) lie outside the mesh")
            tri = np.where(outside, -1, tri)
        return tri, lam


@dataclass(eq=False)
class MacroSolution:
    mesh: TriMesh
    u: fem.FEFunction
    model: HomogenizedModel
    peclet: float
    locator: TriLocator = field(repr=False, default=None)

    def __post_init__(self):
        if self.locator is None:
            self.locator = TriLocator(self.mesh)

    def evaluate(self, points):
        """``u`` and its elementwise gradient at arbitrary points of the square."""
        pts = np.asarray(points, dtype=float)
        tri, lam = self.locator.locate(pts.reshape(-1, 2))
        value = (self.u.values[self.mesh.triangles[tri]] * lam).sum(-1)
        grad = self.u.gradients()[tri]
        return value.reshape(pts.shape[:-1]), grad.reshape(pts.shape)


def solve_homogenized(
    model: HomogenizedModel, macro_mesh: TriMesh, tol: float = fem.DEFAULT_TOL
) -> MacroSolution:
    """Galerkin solution of the constant-coefficient macro problem, zero on ``GAMMA``."""
    A = np.asarray(model.A_hom, dtype=float)
    lo, _ = sym_eigs(A)
    if not lo > 0:
        raise NotElliptic(f"symmetric part of A_hom has minimum eigenvalue {lo:.3g}")
    K = (
        fem.assemble_bilinear(macro_mesh, fem.Diffusion(A))
        + fem.assemble_bilinear(macro_mesh, fem.Convection(model.B))
        + fem.assemble_bilinear(macro_mesh, fem.VolumeReaction(float(model.lam)))
    )
    rhs = fem.assemble_load(macro_mesh, model.F)
    sys = fem.apply_constraints(fem.SparseSystem(K, rhs), macro_mesh, dirichlet=GAMMA)
    u = fem.solve(sys, macro_mesh, tol)
    peclet = float(np.linalg.norm(model.B) * macro_mesh.h_max / (2 * lo))
    if peclet >= 1:
        warnings.warn(f"mesh Peclet number {peclet:.3g} >= 1; Galerkin convection may oscillate")
    log.info("macro solve: %d nodes, Peclet %.3g, residual %.2e", macro_mesh.nv, peclet, u.residual)
    return MacroSolution(macro_mesh, u, model, peclet)


class CellEvaluator:
    """Values and gradients of the cell solutions at arbitrary cell points."""

    def __init__(self, cells: CellSolutionSet):
        self.cells = cells
        self.locator = TriLocator(cells.mesh)
        self.tris = cells.mesh.triangles
        fns = (cells.zeta[0], cells.zeta[1], cells.gamma)
        self.values = np.stack([f.values for f in fns], axis=1)  # (nv, 3)
        self.grads = np.stack([f.gradients() for f in fns], axis=1)  # (nt, 3, 2)

    def at_triangles(self, tri, lam):
        """Cell functions ``(zeta1, zeta2, gamma)`` and gradients on known triangles."""
        vals = np.einsum("pk,pkf->pf", lam, self.values[self.tris[tri]])
        return vals, self.grads[tri]

    def __call__(self, y):
        tri, lam = self.locator.locate(np.asarray(y, dtype=float).reshape(-1, 2))
        return self.at_triangles(tri, lam)


def _u1_from_parts(u, grad_u, vals, grads):
    """``u1 = sum_k zeta_k d_k u + gamma u`` and its ``y``-gradient."""
    u1 = vals[:, 0] * grad_u[:, 0] + vals[:, 1] * grad_u[:, 1] + vals[:, 2] * u
    gy = (
        grads[:, 0] * grad_u[:, 0:1]
        + grads[:, 1] * grad_u[:, 1:2]
        + grads[:, 2] * u[:, None]
    )
    return u1, gy


class U1Evaluator:
    """Two-scale corrector ``u1(x, y)`` built from the macro solution."""

    def __init__(self, sol: MacroSolution, cells: CellSolutionSet):
        self.sol = sol
        self.cell = CellEvaluator(cells)

    def __call__(self, x, y):
        """``u1`` and ``grad_y u1`` at paired points ``x`` (macro) and ``y`` (cell)."""
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        u, gu = self.sol.evaluate(x)
        vals, grads = self.cell(np.asarray(y, dtype=float).reshape(-1, 2))
        return _u1_from_parts(u, gu, vals, grads)


def reconstruct_u1(sol: MacroSolution, cells: CellSolutionSet) -> U1Evaluator:
    expected = sol.model.provenance.get("cell_mesh")
    if expected is not None and expected != cells.mesh.uid:
        raise ProvenanceMismatch(
            f"model was built on cell mesh {expected}, cell solutions live on {cells.mesh.uid}"
        )
    return U1Evaluator(sol, cells)


class CorrectedField:
    """``u(x) + eps u1(x, x/eps)`` and the gradient ``grad u + grad_y u1``."""

    def __init__(self, u1: U1Evaluator, N: int):
        self.u1 = u1
        self.N = N
        self.eps = 1.0 / N

    def __call__(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        u, gu = self.u1.sol.evaluate(x)
        vals, grads = self.u1.cell(cell_coords(x, self.N))
        u1, gy = _u1_from_parts(u, gu, vals, grads)
        return u + self.eps * u1, gu + gy

    def write_csv(self, path, points) -> None:
        value, grad = self(points)
        with open(path, "w") as fh:
            fh.write("x1,x2,value,grad1,grad2\n")
            for (x1, x2), v, (g1, g2) in zip(np.asarray(points).reshape(-1, 2), value, grad):
                fh.write(",".join(repr(float(t)) for t in (x1, x2, v, g1, g2)) + "\n")


def corrected_field(sol: MacroSolution, cells: CellSolutionSet, eps: float) -> CorrectedField:
    N = int(round(1.0 / eps))
    if N < 1 or abs(N * eps - 1.0) > 1e-12:
        raise ValueError(f"eps must be 1/N for a positive integer N, got {eps}")
    return CorrectedField(reconstruct_u1(sol, cells), N)
