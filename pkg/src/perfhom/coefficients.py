"""Catalog of periodic coefficient fields and their validators.

All fields are closed-form and Y-periodic: matrix fields ``c + d*sin(2*pi*p.y)``,
scalar volume fields ``base + amplitude*sin(2*pi*p.y)``, a hole-boundary
resistivity given by a zero-mean Fourier series in the polar angle, and
separable sources ``sum_j coef_j * u_j(x) * v_j(y)``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import quadrature
from .errors import EmptySigma, NotElliptic, NotPositive, ValidationError
from .geometry import SIGMA, TriMesh

TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class MatrixField:
    kind: str = "constant"
    c: tuple = ((1.0, 0.0), (0.0, 1.0))
    d: tuple = ((0.0, 0.0), (0.0, 0.0))
    wave: tuple = (0, 0)

    def __post_init__(self):
        if self.kind not in ("constant", "trig"):
            raise ValidationError(f"unknown matrix field kind {self.kind!r}")
        object.__setattr__(self, "c", _tuple2x2(self.c))
        object.__setattr__(self, "d", _tuple2x2(self.d))
        object.__setattr__(self, "wave", tuple(int(w) for w in self.wave))

    @property
    def is_symmetric(self) -> bool:
        c, d = np.array(self.c), np.array(self.d)
        return c[0, 1] == c[1, 0] and (self.kind == "constant" or d[0, 1] == d[1, 0])

    def scaled(self, s: float) -> MatrixField:
        return replace(self, c=(np.array(self.c) * s).tolist(), d=(np.array(self.d) * s).tolist())

    def to_dict(self):
        out = {"kind": self.kind, "c": [list(r) for r in self.c]}
        if self.kind == "trig":
            out["d"] = [list(r) for r in self.d]
            out["wave"] = list(self.wave)
        return out


@dataclass(frozen=True)
class ScalarVolumeField:
    kind: str = "constant"
    base: float = 1.0
    amplitude: float = 0.0
    wave: tuple = (0, 0)

    def __post_init__(self):
        if self.kind not in ("constant", "trig"):
            raise ValidationError(f"unknown scalar field kind {self.kind!r}")
        object.__setattr__(self, "wave", tuple(int(w) for w in self.wave))

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.full(y.shape[:-1], float(self.base))
        if self.kind == "trig":
            out = out + self.amplitude * np.sin(TWO_PI * (y @ np.array(self.wave, dtype=float)))
        return out

    def to_dict(self):
        out = {"kind": self.kind, "base": self.base}
        if self.kind == "trig":
            out.update(amplitude=self.amplitude, wave=list(self.wave))
        return out


@dataclass(frozen=True)
class SurfaceResistivity:
    """``alpha(theta) = sum_k a_k cos(k theta) + b_k sin(k theta) - discrete_mean_shift``."""

    fourier: tuple = ()
    discrete_mean_shift: float = 0.0

    def __post_init__(self):
        coeffs = tuple((float(a), float(b)) for a, b in self.fourier)
        if len(coeffs) > 4:
            raise ValidationError("at most 4 Fourier modes are supported")
        object.__setattr__(self, "fourier", coeffs)

    @property
    def is_zero(self) -> bool:
        return all(a == 0 and b == 0 for a, b in self.fourier) and self.discrete_mean_shift == 0

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.full(theta.shape, -self.discrete_mean_shift)
        for k, (a, b) in enumerate(self.fourier, start=1):
            out = out + a * np.cos(k * theta) + b * np.sin(k * theta)
        return out

    def at_points(self, points, center=(0.5, 0.5)):
        """Evaluate at cell-coordinate points on the hole boundary."""
        points = np.asarray(points, dtype=float)
        return self(np.arctan2(points[..., 1] - center[1], points[..., 0] - center[0]))

    def sup_norm(self, samples: int = 4096) -> float:
        theta = np.linspace(0, TWO_PI, samples, endpoint=False)
        return float(np.abs(self(theta)).max())

    def to_dict(self):
        return {"fourier": [list(ab) for ab in self.fourier]}


@dataclass(frozen=True)
class Factor:
    """One factor of a separable term: a constant or ``sin(2*pi*k*z[axis])``."""

    kind: str = "const"
    value: float = 1.0
    k: float = 1.0
    axis: int = 0

    def __post_init__(self):
        if self.kind not in ("const", "sin"):
            raise ValidationError(f"unknown factor kind {self.kind!r}")
        if self.axis not in (0, 1):
            raise ValidationError("factor axis must be 0 or 1")

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "const":
            return np.full(z.shape[:-1], float(self.value))
        return np.sin(TWO_PI * self.k * z[..., self.axis])

    def to_dict(self):
        if self.kind == "const":
            return {"kind": "const", "value": self.value}
        return {"kind": "sin", "k": self.k, "axis": self.axis}


@dataclass(frozen=True)
class SourceTerm:
    coef: float = 1.0
    x: Factor = field(default_factory=Factor)
    y: Factor = field(default_factory=Factor)


@dataclass(frozen=True)
class SourceField:
    terms: tuple = ()

    @classmethod
    def constant(cls, value: float) -> SourceField:
        return cls((SourceTerm(coef=float(value)),)) if value else cls(())

    @property
    def is_zero(self) -> bool:
        return all(t.coef == 0 for t in self.terms)

    def __call__(self, x, y=None):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for t in self.terms:
            yv = t.y(y) if y is not None else t.y(np.zeros_like(x))
            out = out + t.coef * t.x(x) * yv
        return out

    def oscillating(self, x, N: int):
        """``f(x, x/eps)`` with ``eps = 1/N``."""
        return self(x, cell_coords(x, N))

    def to_dict(self):
        return {
            "terms": [
                {"coef": t.coef, "x": t.x.to_dict(), "y": t.y.to_dict()} for t in self.terms
            ]
        }


@dataclass(frozen=True)
class CoefficientSet:
    A: MatrixField = field(default_factory=MatrixField)
    mu: ScalarVolumeField = field(default_factory=ScalarVolumeField)
    alpha: SurfaceResistivity = field(default_factory=SurfaceResistivity)
    f: SourceField = field(default_factory=lambda: SourceField.constant(1.0))
    g: SourceField = field(default_factory=SourceField)

    def to_dict(self):
        return {
            "A": self.A.to_dict(),
            "mu": self.mu.to_dict(),
            "alpha": self.alpha.to_dict(),
            "f": self.f.to_dict(),
            "g": self.g.to_dict(),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:16]


def _tuple2x2(m):
    a = np.asarray(m, dtype=float)
    if a.shape != (2, 2):
        raise ValidationError(f"expected a 2x2 matrix, got shape {a.shape}")
    return tuple(tuple(float(v) for v in row) for row in a)


def cell_coords(x, N: int):
    """Fractional part of ``x * N``: the cell coordinate of a macro point."""
    z = np.asarray(x, dtype=float) * N
    return z - np.floor(z)


def eval_matrix(A: MatrixField, y):
    """Matrix values at points ``y`` of shape ``(..., 2)``; returns ``(..., 2, 2)``."""
    y = np.asarray(y, dtype=float)
    c = np.array(A.c)
    out = np.broadcast_to(c, y.shape[:-1] + (2, 2)).copy()
    if A.kind == "trig":
        s = np.sin(TWO_PI * (y @ np.array(A.wave, dtype=float)))
        out = out + s[..., None, None] * np.array(A.d)
    return out


def sym_eigs(M):
    """Eigenvalues (min, max) of the symmetric part of 2x2 matrices, closed form."""
    a = M[..., 0, 0]
    d = M[..., 1, 1]
    b = 0.5 * (M[..., 0, 1] + M[..., 1, 0])
    mid = 0.5 * (a + d)
    rad = np.hypot(0.5 * (a - d), b)
    return mid - rad, mid + rad


def _sample_grid(grid):
    t = np.arange(grid) / grid
    Y1, Y2 = np.meshgrid(t, t, indexing="ij")
    return np.stack([Y1, Y2], axis=-1).reshape(-1, 2)


def validate_ellipticity(A: MatrixField, grid: int = 64) -> tuple[float, float]:
    if grid < 64:
        raise ValueError("ellipticity sampling grid must be at least 64")
    lo, hi = sym_eigs(eval_matrix(A, _sample_grid(grid)))
    m, M = float(lo.min()), float(hi.max())
    if m <= 0:
        raise NotElliptic(f"symmetric part of A has minimum eigenvalue {m:.3g} <= 0")
    return m, M


def validate_mu(mu: ScalarVolumeField, grid: int = 64) -> float:
    mu0 = float(mu(_sample_grid(grid)).min())
    if mu0 <= 0:
        raise NotPositive(f"mu has minimum sampled value {mu0:.3g} <= 0")
    return mu0


def eval_alpha(alpha: SurfaceResistivity, theta=None, *, points=None, center=(0.5, 0.5)):
    """Evaluate the resistivity at polar angles or at hole-boundary points."""
    if (theta is None) == (points is None):
        raise TypeError("pass exactly one of theta or points")
    if theta is not None:
        return alpha(theta)
    return alpha.at_points(points, center)


def sigma_alpha_values(alpha: SurfaceResistivity, mesh: TriMesh):
    """Resistivity at the Gauss points of the mesh's SIGMA edges.

    Returns values ``(ne, 2)``, edge lengths ``(ne,)`` and the Gauss points.
    """
    edges = mesh.edges(SIGMA)
    pts, lengths = quadrature.edge_points(mesh.vertices, edges)
    y = cell_coords(pts, mesh.n_tiles) if mesh.n_tiles > 1 else pts
    return alpha.at_points(y, mesh.geometry.hole_center), lengths, pts


def discrete_sigma_integral(alpha: SurfaceResistivity, mesh: TriMesh) -> float:
    values, lengths, _ = sigma_alpha_values(alpha, mesh)
    return float(((values * quadrature.EDGE_WEIGHTS).sum(axis=1) * lengths).sum())


def discrete_zero_mean_correction(alpha: SurfaceResistivity, mesh: TriMesh) -> SurfaceResistivity:
    if not mesh.has_edges(SIGMA):
        raise EmptySigma("mesh has no hole boundary")
    base = replace(alpha, discrete_mean_shift=0.0)
    _, lengths, _ = sigma_alpha_values(base, mesh)
    shift = discrete_sigma_integral(base, mesh) / lengths.sum()
    return replace(alpha, discrete_mean_shift=shift)


# -- JSON (config) parsing ---------------------------------------------------

def matrix_field_from_dict(d) -> MatrixField:
    kind = d.get("kind", "constant").lower()
    if kind == "constant":
        return MatrixField("constant", d["c"])
    return MatrixField("trig", d["c"], d.get("d", [[0, 0], [0, 0]]), d.get("wave", [1, 0]))


def scalar_field_from_dict(d) -> ScalarVolumeField:
    if isinstance(d, (int, float)):
        return ScalarVolumeField("constant", float(d))
    kind = d.get("kind", "constant").lower()
    if kind == "constant":
        return ScalarVolumeField("constant", float(d.get("base", d.get("value", 1.0))))
    return ScalarVolumeField(
        "trig", float(d["base"]), float(d.get("amplitude", 0.0)), d.get("wave", [1, 0])
    )


def alpha_from_dict(d) -> SurfaceResistivity:
    return SurfaceResistivity(tuple(tuple(ab) for ab in d.get("fourier", [])))


def _factor_from_dict(d) -> Factor:
    if isinstance(d, (int, float)):
        return Factor("const", float(d))
    if d.get("kind", "const") == "const":
        return Factor("const", float(d.get("value", 1.0)))
    return Factor("sin", k=float(d.get("k", 1)), axis=int(d.get("axis", 0)))


def source_from_dict(d) -> SourceField:
    """Accepts ``{"const": c}``, a bare number, or ``{"terms": [...]}``."""
    if d is None:
        return SourceField()
    if isinstance(d, (int, float)):
        return SourceField.constant(float(d))
    if "const" in d:
        return SourceField.constant(float(d["const"]))
    terms = []
    for t in d.get("terms", []):
        terms.append(
            SourceTerm(
                coef=float(t.get("coef", 1.0)),
                x=_factor_from_dict(t.get("x", 1.0)),
                y=_factor_from_dict(t.get("y", 1.0)),
            )
        )
    return SourceField(tuple(terms))


def coefficients_from_dict(cfg) -> CoefficientSet:
    return CoefficientSet(
        A=matrix_field_from_dict(cfg.get("A", {"kind": "constant", "c": [[1, 0], [0, 1]]})),
        mu=scalar_field_from_dict(cfg.get("mu", {"kind": "constant", "base": 1.0})),
        alpha=alpha_from_dict(cfg.get("alpha", {"fourier": []})),
        f=source_from_dict(cfg.get("f", {"const": 1.0})),
        g=source_from_dict(cfg.get("g", None)),
    )

