"""Convergence study: fine perforated solutions against the homogenized limit.

For each ``eps = 1/N`` the study measures

* ``e0``: ``||u_eps - u||`` in L2 over the perforated domain,
* ``e1``: ``||grad u_eps - (grad u + grad_y u1(x, x/eps))||`` in L2,
* ``s1``: gap in the surface identity ``eps int_{Sigma_eps} u_eps phi -> |Sigma| int u phi``,
* ``s2``: gap in ``int_{Sigma_eps} alpha(x/eps) u_eps phi -> int int_Sigma u1 alpha phi``,

with ``phi(x) = sin(pi x1) sin(pi x2)``. All volume quantities are integrated
with the quadrature of the fine mesh, so holes never contribute.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import fem, quadrature
from .coefficients import CoefficientSet, coefficients_from_dict
from .effective import CellStage, homogenize, sigma_moments
from .errors import CoercivityFailed, PerfhomError, ValidationError
from .fine import CoercivityCheck, apriori_report, fine_problem, gate_for, solve_robin_fine
from .geometry import SIGMA, CellGeometry, macro_mesh, sigma_length
from .macro import CellEvaluator, MacroSolution, solve_homogenized

log = logging.getLogger(__name__)

CSV_HEADER = "eps,h,e0,e1,rate0,rate1,s1,s2,grad_norm,l2_norm,sigma_norm,c0"


def weight_phi(x):
    """``phi(x) = sin(pi x1) sin(pi x2)``."""
    x = np.asarray(x, dtype=float)
    return np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])


@dataclass(frozen=True)
class StudyConfig:
    geometry: CellGeometry = field(default_factory=CellGeometry)
    coeffs: CoefficientSet = field(default_factory=CoefficientSet)
    epsilons: tuple = (2, 4, 8, 16)  # as N, eps = 1/N
    macro_refinement: int = 6
    tol: float = fem.DEFAULT_TOL
    floor: bool = False
    force: bool = False

    def validate(self) -> None:
        self.geometry.validate()
        if not self.epsilons:
            raise ValidationError("epsilons must not be empty")
        for N in self.epsilons:
            if not isinstance(N, int) or N < 2:
                raise ValidationError(f"each epsilon is given as an integer N >= 2, got {N!r}")
        if len(set(self.epsilons)) != len(self.epsilons):
            raise ValidationError("duplicate epsilon in the ladder")
        if not isinstance(self.macro_refinement, int) or self.macro_refinement < 2:
            raise ValidationError("macro_refinement must be an integer >= 2")
        if not self.tol > 0:
            raise ValidationError("tol must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> StudyConfig:
        try:
            cell = d.get("cell", {})
            geom = CellGeometry(
                hole_center=tuple(float(v) for v in cell.get("center", (0.5, 0.5))),
                hole_radius=float(cell.get("radius", 0.25)),
                refinement=int(cell.get("refinement", 4)),
            )
            eps = d.get("epsilons", [2, 4, 8, 16])
            if any(float(N) != int(N) for N in eps):
                raise ValidationError(f"epsilons must be integers N (eps = 1/N), got {eps}")
            cfg = cls(
                geometry=geom,
                coeffs=coefficients_from_dict(d),
                epsilons=tuple(int(N) for N in eps),
                macro_refinement=int(d.get("macro_refinement", 6)),
                tol=float(d.get("tol", fem.DEFAULT_TOL)),
                floor=bool(d.get("floor", False)),
            )
        except (TypeError, KeyError, AttributeError, ValueError) as exc:
            raise ValidationError(f"malformed config: {exc}") from exc
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> StudyConfig:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)


@dataclass
class ConvergenceRow:
    N: int
    h: float = math.nan
    e0: float = math.nan
    e1: float = math.nan
    rate0: float = math.nan
    rate1: float = math.nan
    s1: float = math.nan
    s2: float = math.nan
    grad_norm: float = math.nan
    l2_norm: float = math.nan
    sigma_norm: float = math.nan
    c0: float = math.nan
    error: str | None = None

    @property
    def eps(self) -> float:
        return 1.0 / self.N

    def csv_row(self) -> str:
        vals = [self.eps, self.h, self.e0, self.e1, self.rate0, self.rate1, self.s1, self.s2,
                self.grad_norm, self.l2_norm, self.sigma_norm, self.c0]
        return ",".join(f"{v:.12e}" for v in vals)


@dataclass(eq=False)
class ConvergenceReport:
    rows: list
    stage: CellStage
    macro: MacroSolution
    gate: CoercivityCheck
    floor: dict | None = None

    @property
    def errors(self) -> dict:
        return {r.N: r.error for r in self.rows if r.error}

    def to_csv(self) -> str:
        return CSV_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in self.rows)

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


@dataclass(eq=False)
class StudyContext:
    """Everything shared by the fine runs: cell stage, gate, macro solution."""

    cfg: StudyConfig
    stage: CellStage
    gate: CoercivityCheck
    macro: MacroSolution
    cell_eval: CellEvaluator
    sigma_len: float
    moments: dict


def prepare(cfg: StudyConfig) -> StudyContext:
    cfg.validate()
    stage = homogenize(cfg.geometry, cfg.coeffs, cfg.tol)
    gate = gate_for(stage.mesh, stage.coeffs, stage.m, stage.mu0)
    if not gate.ok and not cfg.force:
        raise CoercivityFailed(
            f"coercivity condition fails: sqrt(mu0 m) = {math.sqrt(stage.m * stage.mu0):.4g} "
            f"<= C_s*|alpha|_inf = {gate.C_s * gate.alpha_max:.4g}"
        )
    macro = solve_homogenized(stage.model, macro_mesh(cfg.macro_refinement), cfg.tol)
    has_sigma = stage.mesh.has_edges(SIGMA)
    return StudyContext(
        cfg=cfg,
        stage=stage,
        gate=gate,
        macro=macro,
        cell_eval=CellEvaluator(stage.cells),
        sigma_len=sigma_length(stage.mesh) if has_sigma else 0.0,
        moments=sigma_moments(stage.cells, stage.coeffs.alpha),
    )


def _macro_limits(ctx: StudyContext) -> tuple[float, float]:
    """``|Sigma| int u phi`` and ``int (S_zeta . grad u + S_gamma u) phi`` on the macro mesh."""
    mesh, u = ctx.macro.mesh, ctx.macro.u
    _, area = fem.element_gradients(mesh)
    pts = quadrature.triangle_points(mesh.vertices, mesh.triangles)
    phi = weight_phi(pts)
    uq = u.at_quadrature()
    w = area[:, None] * quadrature.TRI_WEIGHTS[None, :]
    u_phi = float((w * uq * phi).sum())
    grad = u.gradients() @ ctx.moments["zeta"]
    u1_alpha = float((w * (grad[:, None] + ctx.moments["gamma"] * uq) * phi).sum())
    return ctx.sigma_len * u_phi, u1_alpha


def _surface_terms(ctx: StudyContext, ueps: fem.FEFunction, N: int) -> tuple[float, float]:
    mesh = ueps.mesh
    if not mesh.has_edges(SIGMA):
        return 0.0, 0.0
    edges = mesh.edges(SIGMA)
    pts, length = quadrature.edge_points(mesh.vertices, edges)
    uq = ueps.values[edges] @ quadrature.edge_shape_values().T
    w = length[:, None] * quadrature.EDGE_WEIGHTS[None, :] * weight_phi(pts)
    first = float((w * uq).sum()) / N
    alpha = fem._surface_density(mesh, ctx.stage.coeffs.alpha, pts)
    second = float((w * alpha * uq).sum())
    return first, second


def _errors(ctx: StudyContext, ueps: fem.FEFunction) -> tuple[float, float]:
    mesh = ueps.mesh
    _, area = fem.element_gradients(mesh)
    pts = quadrature.triangle_points(mesh.vertices, mesh.triangles)
    u, gu = ctx.macro.evaluate(pts.reshape(-1, 2))
    u = u.reshape(mesh.nt, 3)
    gu = gu.reshape(mesh.nt, 3, 2)
    ct = np.repeat(mesh.cell_triangle, 3)
    lam = np.tile(quadrature.TRI_BARY, (mesh.nt, 1))
    vals, grads = ctx.cell_eval.at_triangles(ct, lam)
    gu_flat = gu.reshape(-1, 2)
    u_flat = u.ravel()
    gy = grads[:, 0] * gu_flat[:, 0:1] + grads[:, 1] * gu_flat[:, 1:2] + grads[:, 2] * u_flat[:, None]
    target = (gu_flat + gy).reshape(mesh.nt, 3, 2)
    w = area[:, None] * quadrature.TRI_WEIGHTS[None, :]
    d0 = ueps.at_quadrature() - u
    d1 = ueps.gradients()[:, None, :] - target
    e0 = math.sqrt(float((w * d0**2).sum()))
    e1 = math.sqrt(float((w * (d1**2).sum(-1)).sum()))
    return e0, e1


def fine_row(ctx: StudyContext, N: int, limits=None) -> ConvergenceRow:
    stage = ctx.stage
    p = fine_problem(stage.mesh, stage.coeffs, N, ctx.gate)
    ueps = solve_robin_fine(p, ctx.cfg.tol, force=ctx.cfg.force)
    rep = apriori_report(ueps, p)
    e0, e1 = _errors(ctx, ueps)
    sigma_limit, l3_limit = limits if limits is not None else _macro_limits(ctx)
    first, second = _surface_terms(ctx, ueps, N)
    return ConvergenceRow(
        N=N,
        h=rep.h,
        e0=e0,
        e1=e1,
        s1=abs(first - sigma_limit),
        s2=abs(second - l3_limit),
        grad_norm=rep.grad_norm,
        l2_norm=rep.l2_norm,
        sigma_norm=rep.sigma_norm,
        c0=rep.c0,
    )


def _fill_rates(rows) -> None:
    prev = None
    for r in rows:
        if prev is not None and r.error is None and prev.error is None:
            step = math.log(r.N / prev.N)
            for name in ("e0", "e1"):
                a, b = getattr(prev, name), getattr(r, name)
                if a > 0 and b > 0:
                    setattr(r, "rate" + name[1], math.log(a / b) / step)
        prev = r


def run_rows(ctx: StudyContext, Ns) -> list:
    limits = _macro_limits(ctx)
    rows = []
    for N in sorted(Ns):
        try:
            rows.append(fine_row(ctx, N, limits))
        except PerfhomError as exc:
            log.error("eps = 1/%d failed: %s", N, exc)
            rows.append(ConvergenceRow(N=N, error=f"{type(exc).__name__}: {exc}"))
    _fill_rates(rows)
    return rows


def run_convergence_study(cfg: StudyConfig) -> ConvergenceReport:
    """Cell solves, effective model, macro solve, then one fine solve per ``eps``.

    Rows are ordered by decreasing ``eps``. A failing ``eps`` yields a row of
    NaNs carrying the error message instead of aborting the study.
    """
    ctx = prepare(cfg)
    rows = run_rows(ctx, cfg.epsilons)
    floor = None
    if cfg.floor:
        finer = replace(cfg, geometry=replace(cfg.geometry, refinement=cfg.geometry.refinement + 1),
                        macro_refinement=cfg.macro_refinement + 1, floor=False)
        N = max(cfg.epsilons)
        fine = fine_row(prepare(finer), N)
        base = next(r for r in rows if r.N == N)
        floor = {
            "eps": 1.0 / N,
            "refinement": finer.geometry.refinement,
            "e0": fine.e0,
            "e1": fine.e1,
            "e0_change": abs(base.e0 - fine.e0),
            "e1_change": abs(base.e1 - fine.e1),
        }
    return ConvergenceReport(rows, ctx.stage, ctx.macro, ctx.gate, floor)


def run_surface_identity_checks(cfg: StudyConfig) -> list:
    """``(eps, s1, s2)`` along the ladder."""
    ctx = prepare(cfg)
    return [(r.eps, r.s1, r.s2) for r in run_rows(ctx, cfg.epsilons)]
