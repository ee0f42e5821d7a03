"""Periodic homogenization of Robin problems on perforated domains.

Pipeline: cell mesh -> periodic cell problems -> effective coefficients ->
homogenized macro problem, checked against fine-scale solutions on the
perforated square.
"""
from .cells import CellSolutionSet, solve_cell_problems, solve_corrector, solve_gamma, solve_theta
from .coefficients import (
    CoefficientSet,
    MatrixField,
    ScalarVolumeField,
    SourceField,
    SurfaceResistivity,
    discrete_zero_mean_correction,
    validate_ellipticity,
    validate_mu,
)
from .effective import HomogenizedModel, build_model, homogenize
from .fine import check_coercivity, estimate_trace_constant, fine_problem, solve_robin_fine
from .geometry import CellGeometry, TriMesh, build_cell_mesh, macro_mesh, tile_perforated_mesh
from .macro import corrected_field, reconstruct_u1, solve_homogenized
from .study import StudyConfig, run_convergence_study, run_surface_identity_checks

__version__ = "0.1.0"
