"""Periodic cell problems on the perforated unit cell.

All three problems are pure-Neumann on ``Y_s`` with periodic faces, so each is
solved in the quotient by constants: one Lagrange multiplier enforces a zero
volume mean.

* corrector ``zeta_k``:  ``int A (e_k + grad zeta_k) . grad v = 0``
* ``gamma``:             ``int A grad gamma . grad v = -int_Sigma alpha v``
* ``theta``:             ``int grad theta . grad v = int_Sigma alpha v``
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem
from .coefficients import MatrixField, SurfaceResistivity, discrete_sigma_integral
from .errors import Incompatible
from .geometry import SIGMA, TriMesh

COMPAT_TOL = 1e-10


@dataclass(eq=False)
class CellSolutionSet:
    mesh: TriMesh
    zeta: tuple
    gamma: fem.FEFunction
    theta: fem.FEFunction
    residuals: dict = field(default_factory=dict)

    def functions(self):
        return {"zeta1": self.zeta[0], "zeta2": self.zeta[1], "gamma": self.gamma, "theta": self.theta}


def _periodic_mean_zero_solve(cell, K, rhs, tol):
    sys = fem.apply_constraints(fem.SparseSystem(K, rhs), cell, periodic=True, zero_mean=True)
    return fem.solve(sys, cell, tol)


def corrector_load(cell: TriMesh, A, k: int) -> np.ndarray:
    """``-int A e_k . grad phi_i`` for each node ``i``."""
    grads, area = fem.element_gradients(cell)
    Ae = fem.element_matrix_field(cell, A)
    flux = Ae[:, :, k]  # A e_k per triangle
    local = -area[:, None] * np.einsum("tid,td->ti", grads, flux)
    out = np.zeros(cell.nv)
    np.add.at(out, cell.triangles, local)
    return out


def solve_corrector(cell: TriMesh, A: MatrixField, k: int, tol: float = fem.DEFAULT_TOL) -> fem.FEFunction:
    """Corrector for direction ``e_k``; ``k`` is 1 or 2."""
    if k not in (1, 2):
        raise ValueError("corrector direction must be 1 or 2")
    K = fem.assemble_bilinear(cell, fem.Diffusion(A))
    return _periodic_mean_zero_solve(cell, K, corrector_load(cell, A, k - 1), tol)


def _check_compatible(cell, alpha):
    if not cell.has_edges(SIGMA):
        return False
    total = discrete_sigma_integral(alpha, cell)
    if abs(total) > COMPAT_TOL:
        raise Incompatible(
            f"discrete integral of alpha over the hole boundary is {total:.3e}; "
            "apply discrete_zero_mean_correction first"
        )
    return True


def solve_gamma(
    cell: TriMesh, A: MatrixField, alpha: SurfaceResistivity, tol: float = fem.DEFAULT_TOL
) -> fem.FEFunction:
    if not _check_compatible(cell, alpha):
        return fem.FEFunction(cell, np.zeros(cell.nv))
    K = fem.assemble_bilinear(cell, fem.Diffusion(A))
    rhs = -fem.assemble_load(cell, alpha, SIGMA)
    return _periodic_mean_zero_solve(cell, K, rhs, tol)


def solve_theta(cell: TriMesh, alpha: SurfaceResistivity, tol: float = fem.DEFAULT_TOL) -> fem.FEFunction:
    if not _check_compatible(cell, alpha):
        return fem.FEFunction(cell, np.zeros(cell.nv))
    K = fem.stiffness_matrix(cell)
    rhs = fem.assemble_load(cell, alpha, SIGMA)
    return _periodic_mean_zero_solve(cell, K, rhs, tol)


def solve_cell_problems(
    cell: TriMesh, A: MatrixField, alpha: SurfaceResistivity, tol: float = fem.DEFAULT_TOL
) -> CellSolutionSet:
    z1 = solve_corrector(cell, A, 1, tol)
    z2 = solve_corrector(cell, A, 2, tol)
    gamma = solve_gamma(cell, A, alpha, tol)
    theta = solve_theta(cell, alpha, tol)
    return CellSolutionSet(
        mesh=cell,
        zeta=(z1, z2),
        gamma=gamma,
        theta=theta,
        residuals={
            "zeta1": z1.residual,
            "zeta2": z2.residual,
            "gamma": gamma.residual,
            "theta": theta.residual,
        },
    )
