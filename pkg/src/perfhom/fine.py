"""Robin problem on the perforated domain and its analytical guardrails.

The fine problem at ``eps = 1/N`` reads

    -div(A(x/eps) grad u) + mu(x/eps) u = f(x, x/eps)   in the perforated square,
    A grad u . nu + alpha(x/eps) u = eps g(x, x/eps)    on the hole boundaries,
    u = 0                                               on the outer boundary.

Because ``alpha`` changes sign, the bilinear form is only coercive when the
surface term is dominated through the trace inequality; the gate below makes
that condition executable.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem, quadrature
from .coefficients import CoefficientSet, SourceField
from .errors import CoercivityFailed, EmptySigma, SolverBreakdown
from .geometry import GAMMA, SIGMA, TriMesh, tile_perforated_mesh

log = logging.getLogger(__name__)

REPORT_HEADER = "eps,h,grad_norm,l2_norm,sigma_norm,f_norm,sqrt_eps_g_norm,c0,coercive"


@dataclass(frozen=True)
class CoercivityCheck:
    ok: bool
    c0: float
    C_s: float = float("nan")
    alpha_max: float = float("nan")


def check_coercivity(m: float, mu0: float, C_s: float, alpha_max: float) -> CoercivityCheck:
    """Gate ``sqrt(mu0 m) > C_s alpha_max`` and the coercivity constant ``c0``."""
    root = np.sqrt(mu0 * m)
    c0 = (1.0 - C_s * alpha_max / root) * min(m, mu0)
    return CoercivityCheck(bool(root > C_s * alpha_max), float(c0), float(C_s), float(alpha_max))


def estimate_trace_constant(cell: TriMesh, delta: float, tol: float = 1e-8, max_iter: int = 20000) -> float:
    """Largest eigenvalue of ``M_Sigma v = C (M / delta + delta K) v`` by power iteration.

    The iteration stops once the eigen-residual, measured in the energy norm
    of the right-hand operator, drops below ``tol`` relative to the estimate.
    """
    if not cell.has_edges(SIGMA):
        raise EmptySigma("trace constant needs a hole boundary")
    if not delta > 0:
        raise ValueError("delta must be positive")
    Ms = sp.csc_matrix(fem.surface_mass(cell, SIGMA))
    Bm = sp.csc_matrix(fem.mass_matrix(cell) / delta + delta * fem.stiffness_matrix(cell))
    lu = spla.splu(Bm)
    rng = np.random.default_rng(0)
    x = np.ones(cell.nv) + 0.1 * rng.standard_normal(cell.nv)
    lam = 0.0
    for it in range(max_iter):
        y = lu.solve(Ms @ x)
        lam = float(x @ (Ms @ x)) / float(x @ (Bm @ x))
        r = y - lam * x
        res = np.sqrt(abs(r @ (Bm @ r))) / (lam * np.sqrt(x @ (Bm @ x)))
        if res <= tol:
            log.debug("trace constant %.10g after %d iterations", lam, it)
            return lam
        x = y / np.sqrt(y @ (Bm @ y))
    raise SolverBreakdown(f"power iteration did not converge in {max_iter} steps", residual=res)


def gate_for(cell: TriMesh, coeffs: CoefficientSet, m: float, mu0: float) -> CoercivityCheck:
    """Coercivity check with ``C_s`` taken at the balancing scale ``sqrt(m / mu0)``."""
    if coeffs.alpha.is_zero or not cell.has_edges(SIGMA):
        return check_coercivity(m, mu0, 0.0, 0.0)
    C_s = estimate_trace_constant(cell, np.sqrt(m / mu0))
    return check_coercivity(m, mu0, C_s, coeffs.alpha.sup_norm())


@dataclass(eq=False)
class FineProblem:
    """Data of the perforated problem at ``eps = 1/N``; ``alpha`` is the corrected one."""

    N: int
    mesh: TriMesh
    coeffs: CoefficientSet
    gate: CoercivityCheck | None = None

    @property
    def eps(self) -> float:
        return 1.0 / self.N


def fine_problem(cell: TriMesh, coeffs: CoefficientSet, N: int, gate: CoercivityCheck | None = None) -> FineProblem:
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    return FineProblem(int(N), tile_perforated_mesh(cell, int(N)), coeffs, gate)


def assemble_fine(p: FineProblem) -> fem.SparseSystem:
    mesh, c = p.mesh, p.coeffs
    K = fem.assemble_bilinear(mesh, fem.Diffusion(c.A)) + fem.assemble_bilinear(
        mesh, fem.VolumeReaction(c.mu)
    )
    rhs = fem.assemble_load(mesh, c.f)
    if mesh.has_edges(SIGMA):
        if not c.alpha.is_zero:
            K = K + fem.assemble_bilinear(mesh, fem.SurfaceReaction(c.alpha, SIGMA))
        if not c.g.is_zero:
            rhs = rhs + p.eps * fem.assemble_load(mesh, c.g, SIGMA)
    return fem.SparseSystem(K.tocsr(), rhs)


def solve_robin_fine(p: FineProblem, tol: float = fem.DEFAULT_TOL, force: bool = False) -> fem.FEFunction:
    if p.gate is not None and not p.gate.ok:
        msg = (
            f"coercivity condition fails: C_s*|alpha|_inf = {p.gate.C_s * p.gate.alpha_max:.4g}, "
            f"c0 = {p.gate.c0:.4g}"
        )
        if not force:
            raise CoercivityFailed(msg)
        warnings.warn(msg + "; solving anyway")
    sys = fem.apply_constraints(assemble_fine(p), p.mesh, dirichlet=GAMMA)
    u = fem.solve(sys, p.mesh, tol)
    log.info("fine solve N=%d: %d nodes, residual %.2e", p.N, p.mesh.nv, u.residual)
    return u


@dataclass(frozen=True)
class AprioriReport:
    eps: float
    h: float
    grad_norm: float
    l2_norm: float
    sigma_norm: float
    f_norm: float
    sqrt_eps_g_norm: float
    c0: float
    coercive: bool

    def csv_row(self) -> str:
        vals = [self.eps, self.h, self.grad_norm, self.l2_norm, self.sigma_norm,
                self.f_norm, self.sqrt_eps_g_norm, self.c0]
        return ",".join(f"{v:.12e}" for v in vals) + f",{int(self.coercive)}"


def _volume_l2(mesh: TriMesh, source: SourceField) -> float:
    _, area = fem.element_gradients(mesh)
    pts = quadrature.triangle_points(mesh.vertices, mesh.triangles)
    vals = source.oscillating(pts, mesh.n_tiles)
    return float(np.sqrt((area * ((vals**2) @ quadrature.TRI_WEIGHTS)).sum()))


def _surface_l2(mesh: TriMesh, source: SourceField) -> float:
    if not mesh.has_edges(SIGMA):
        return 0.0
    pts, length = quadrature.edge_points(mesh.vertices, mesh.edges(SIGMA))
    vals = source.oscillating(pts, mesh.n_tiles)
    return float(np.sqrt((length * ((vals**2) @ quadrature.EDGE_WEIGHTS)).sum()))


def apriori_report(u: fem.FEFunction, p: FineProblem) -> AprioriReport:
    has_sigma = p.mesh.has_edges(SIGMA)
    gate = p.gate
    return AprioriReport(
        eps=p.eps,
        h=p.mesh.h_max,
        grad_norm=fem.norm(u, "H1_SEMI"),
        l2_norm=fem.norm(u, "L2_VOLUME"),
        sigma_norm=fem.norm(u, "L2_SURFACE", SIGMA) if has_sigma else 0.0,
        f_norm=_volume_l2(p.mesh, p.coeffs.f),
        sqrt_eps_g_norm=float(np.sqrt(p.eps)) * _surface_l2(p.mesh, p.coeffs.g),
        c0=gate.c0 if gate is not None else float("nan"),
        coercive=gate.ok if gate is not None else True,
    )


def write_report(path, reports) -> None:
    with open(path, "w") as fh:
        fh.write(REPORT_HEADER + "\n")
        for r in reports:
            fh.write(r.csv_row() + "\n")
