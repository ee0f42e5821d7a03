"""Homogenized coefficients from the cell solutions.

Each coefficient is computed in more than one algebraically equivalent way.
The forms differ only by discrete Galerkin identities (a cell equation tested
with another cell solution), so their gaps measure solver accuracy and must
be at round-off level.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import fem, quadrature
from .cells import CellSolutionSet, solve_cell_problems
from .coefficients import (
    CoefficientSet,
    Factor,
    SourceField,
    SourceTerm,
    SurfaceResistivity,
    discrete_zero_mean_correction,
    sym_eigs,
    validate_ellipticity,
    validate_mu,
)
from .errors import MeshMismatch, NotElliptic
from .geometry import SIGMA, CellGeometry, TriMesh, build_cell_mesh

IDENTITY_TOL = 1e-9


@dataclass(eq=False)
class HomogenizedModel:
    A_hom: np.ndarray
    B: np.ndarray
    lam: float
    mu_tilde: float
    F: SourceField
    provenance: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def validate(self) -> None:
        lo, _ = sym_eigs(np.asarray(self.A_hom))
        if not lo > 0:
            raise NotElliptic(f"symmetric part of A_hom is not positive definite (min eig {lo:.3g})")
        if self.lam > self.mu_tilde * (1 + 1e-12) + 1e-14:
            raise ValueError(f"lambda {self.lam} exceeds mu_tilde {self.mu_tilde}")

    def to_dict(self):
        return {
            "A_hom": np.asarray(self.A_hom).tolist(),
            "B": np.asarray(self.B).tolist(),
            "lambda": float(self.lam),
            "mu_tilde": float(self.mu_tilde),
            "F": self.F.to_dict(),
            "provenance": dict(self.provenance),
            "diagnostics": {k: _jsonable(v) for k, v in self.diagnostics.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def rel_gap(a, b, scale=0.0) -> float:
    """``|a - b|`` relative to the largest of ``|a|``, ``|b|`` and ``scale``."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = max(np.abs(a).max(), np.abs(b).max(), float(scale))
    diff = float(np.abs(a - b).max())
    return diff / denom if denom > 0 else diff


def _check_mesh(cells: CellSolutionSet):
    for name, fn in cells.functions().items():
        if fn.mesh is not cells.mesh:
            raise MeshMismatch(f"cell solution {name} lives on a different mesh")


def _cell_data(cells, A):
    grads, area = fem.element_gradients(cells.mesh)
    Ae = fem.element_matrix_field(cells.mesh, A)
    gz = np.stack([cells.zeta[0].gradients(), cells.zeta[1].gradients()], axis=1)  # (nt, j, d)
    gg = cells.gamma.gradients()
    return area, Ae, gz, gg


def a_hom_forms(cells: CellSolutionSet, A) -> tuple[np.ndarray, np.ndarray]:
    """Definition form ``int (A(e_j + grad zeta_j))_i`` and energy form."""
    _check_mesh(cells)
    area, Ae, gz, _ = _cell_data(cells, A)
    chi = np.eye(2)[None, :, :] + gz  # chi[t, j] = e_j + grad zeta_j
    flux = np.einsum("tik,tjk->tji", Ae, chi)  # flux[t, j] = A (e_j + grad zeta_j)
    definition = np.einsum("t,tji->ij", area, flux)
    energy = np.einsum("t,tjk,tik->ij", area, flux, chi)
    return definition, energy


def compute_A_hom(cells: CellSolutionSet, A) -> np.ndarray:
    return a_hom_forms(cells, A)[0]


def sigma_moments(cells: CellSolutionSet, alpha: SurfaceResistivity) -> dict:
    """``int_Sigma alpha zeta_k``, ``int_Sigma alpha gamma`` with the cell load quadrature."""
    if not cells.mesh.has_edges(SIGMA):
        return {"zeta": np.zeros(2), "gamma": 0.0}
    load = fem.assemble_load(cells.mesh, alpha, SIGMA)
    return {
        "zeta": np.array([load @ cells.zeta[0].values, load @ cells.zeta[1].values]),
        "gamma": float(load @ cells.gamma.values),
    }


def b_forms(cells: CellSolutionSet, A, alpha: SurfaceResistivity) -> dict:
    """The three equivalent forms of the convection vector and their scale."""
    _check_mesh(cells)
    area, Ae, gz, gg = _cell_data(cells, A)
    s_zeta = sigma_moments(cells, alpha)["zeta"]
    a_grad_gamma = np.einsum("t,tik,tk->i", area, Ae, gg)  # int (A grad gamma)_i
    definition = s_zeta - a_grad_gamma
    chi = np.eye(2)[None, :, :] + gz
    Ag = np.einsum("tik,tk->ti", Ae, gg)
    substituted = -np.einsum("t,ti,tji->j", area, Ag, chi)
    skew = Ae - np.transpose(Ae, (0, 2, 1))
    antisymmetric = np.einsum("t,tk,tki,tji->j", area, gg, skew, chi)
    scale = float(np.abs(s_zeta).max() + np.abs(a_grad_gamma).max())
    return {"definition": definition, "substituted": substituted, "antisymmetric": antisymmetric, "scale": scale}


def compute_B(cells: CellSolutionSet, A, alpha: SurfaceResistivity) -> np.ndarray:
    return b_forms(cells, A, alpha)["definition"]


def mu_tilde(cell: TriMesh, mu) -> float:
    return float(fem.mass_matrix(cell, mu).sum())


def lambda_forms(cells: CellSolutionSet, A, alpha, mu) -> dict:
    _check_mesh(cells)
    area, Ae, _, gg = _cell_data(cells, A)
    mt = mu_tilde(cells.mesh, mu)
    definition = sigma_moments(cells, alpha)["gamma"] + mt
    energy = -float(np.einsum("t,tik,tk,ti->", area, Ae, gg, gg)) + mt
    return {"definition": definition, "energy": energy, "mu_tilde": mt}


def compute_lambda(cells: CellSolutionSet, A, alpha, mu) -> tuple[float, float]:
    forms = lambda_forms(cells, A, alpha, mu)
    return forms["energy"], forms["mu_tilde"]


def _volume_factor_integral(cell: TriMesh, factor: Factor) -> float:
    _, area = fem.element_gradients(cell)
    pts = quadrature.triangle_points(cell.vertices, cell.triangles)
    return float((area * (factor(pts) @ quadrature.TRI_WEIGHTS)).sum())


def _surface_factor_integral(cell: TriMesh, factor: Factor) -> float:
    if not cell.has_edges(SIGMA):
        return 0.0
    pts, length = quadrature.edge_points(cell.vertices, cell.edges(SIGMA))
    return float((length * (factor(pts) @ quadrature.EDGE_WEIGHTS)).sum())


def compute_F(f: SourceField, g: SourceField, cell: TriMesh) -> SourceField:
    """Macro source: y-factors of ``f`` integrated over ``Y_s``, of ``g`` over ``Sigma``."""
    terms = []
    for t in f.terms:
        terms.append(SourceTerm(t.coef * _volume_factor_integral(cell, t.y), t.x, Factor("const", 1.0)))
    for t in g.terms:
        terms.append(SourceTerm(t.coef * _surface_factor_integral(cell, t.y), t.x, Factor("const", 1.0)))
    return SourceField(tuple(terms))


def build_model(cells: CellSolutionSet, coeffs: CoefficientSet) -> HomogenizedModel:
    A, alpha, mu = coeffs.A, coeffs.alpha, coeffs.mu
    a_def, a_energy = a_hom_forms(cells, A)
    bf = b_forms(cells, A, alpha)
    lf = lambda_forms(cells, A, alpha, mu)
    model = HomogenizedModel(
        A_hom=a_def,
        B=bf["definition"],
        lam=lf["energy"],
        mu_tilde=lf["mu_tilde"],
        F=compute_F(coeffs.f, coeffs.g, cells.mesh),
        provenance={
            "cell_mesh": cells.mesh.uid,
            "coefficients": coeffs.digest(),
            "refinement": cells.mesh.geometry.refinement if cells.mesh.geometry else None,
        },
        diagnostics={
            "A_hom_energy": a_energy,
            "A_hom_gap": rel_gap(a_def, a_energy),
            "B_substituted": bf["substituted"],
            "B_antisymmetric": bf["antisymmetric"],
            "B_gap": max(
                rel_gap(bf["definition"], bf["substituted"], bf["scale"]),
                rel_gap(bf["definition"], bf["antisymmetric"], bf["scale"]),
            ),
            "lambda_definition": lf["definition"],
            "lambda_gap": rel_gap(lf["definition"], lf["energy"]),
            "cell_residuals": dict(cells.residuals),
        },
    )
    model.validate()
    return model


@dataclass(eq=False)
class CellStage:
    """Everything produced on the cell: mesh, corrected data, solutions, model."""

    mesh: TriMesh
    coeffs: CoefficientSet
    cells: CellSolutionSet
    model: HomogenizedModel
    m: float
    M: float
    mu0: float


def prepare_coefficients(cell: TriMesh, coeffs: CoefficientSet) -> tuple[CoefficientSet, float, float, float]:
    """Validate the data and apply the discrete zero-mean correction to alpha."""
    m, M = validate_ellipticity(coeffs.A)
    mu0 = validate_mu(coeffs.mu)
    alpha = coeffs.alpha
    if cell.has_edges(SIGMA):
        alpha = discrete_zero_mean_correction(alpha, cell)
    return CoefficientSet(coeffs.A, coeffs.mu, alpha, coeffs.f, coeffs.g), m, M, mu0


def homogenize(geom: CellGeometry, coeffs: CoefficientSet, tol: float = fem.DEFAULT_TOL) -> CellStage:
    cell = build_cell_mesh(geom)
    corrected, m, M, mu0 = prepare_coefficients(cell, coeffs)
    cells = solve_cell_problems(cell, corrected.A, corrected.alpha, tol)
    return CellStage(cell, corrected, cells, build_model(cells, corrected), m, M, mu0)

