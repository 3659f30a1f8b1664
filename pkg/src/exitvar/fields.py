"""Coefficient fields a(x), b(x), V(x) and sampled checks of the standing assumptions."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, EllipticityError, PecletError
from .expressions import Expression, parse_expression


@dataclass(frozen=True)
class ScalarField:
    """A scalar function of position, from an expression or a vectorized callable."""

    rule: Union[Expression, Callable]
    dimension: int
    constant: Optional[float] = None

    @classmethod
    def from_value(cls, value, dimension):
        if isinstance(value, ScalarField):
            return value
        if isinstance(value, (int, float, np.floating)):
            return cls(parse_expression(repr(float(value)), dimension), dimension, float(value))
        if isinstance(value, str):
            expr = parse_expression(value, dimension)
            const = float(expr(np.zeros((1, dimension)))[0]) if expr.is_constant else None
            return cls(expr, dimension, const)
        if callable(value):
            return cls(value, dimension)
        raise ConfigError(f"cannot build a scalar field from {value!r}")

    @property
    def is_constant(self):
        return self.constant is not None

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.constant is not None:
            return np.full(pts.shape[0], self.constant)
        return np.broadcast_to(np.asarray(self.rule(pts), dtype=float), (pts.shape[0],)).copy()

    def __str__(self):
        return str(self.rule) if isinstance(self.rule, Expression) else repr(self.rule)


@dataclass(frozen=True)
class VectorField:
    components: tuple

    @property
    def dimension(self):
        return len(self.components)

    @property
    def is_zero(self):
        return all(c.constant == 0.0 for c in self.components)

    def __call__(self, points):
        return np.stack([c(points) for c in self.components], axis=1)

    def scaled(self, factor):
        d = self.dimension
        return VectorField(
            tuple(
                ScalarField.from_value(c.constant * factor, d)
                if c.is_constant
                else ScalarField(_Scaled(c, factor), d)
                for c in self.components
            )
        )


@dataclass(frozen=True)
class _Scaled:
    inner: ScalarField
    factor: float

    def __call__(self, points):
        return self.factor * self.inner(points)


@dataclass(frozen=True)
class MatrixField:
    """d x d matrix of scalar fields; evaluates to shape ``(n, d, d)``."""

    entries: tuple  # row-major tuple of tuples of ScalarField

    @property
    def dimension(self):
        return len(self.entries)

    def entry(self, i, j):
        return self.entries[i][j]

    def __call__(self, points):
        d = self.dimension
        pts = np.atleast_2d(points)
        out = np.empty((pts.shape[0], d, d))
        for i in range(d):
            for j in range(d):
                out[:, i, j] = self.entries[i][j](pts)
        return out

    @property
    def off_diagonal_constant(self):
        d = self.dimension
        return all(self.entries[i][j].is_constant for i in range(d) for j in range(d) if i != j)

    @property
    def is_diagonal(self):
        d = self.dimension
        return all(self.entries[i][j].constant == 0.0 for i in range(d) for j in range(d) if i != j)

    def scaled(self, factor):
        d = self.dimension
        return MatrixField(
            tuple(
                tuple(
                    ScalarField.from_value(e.constant * factor, d) if e.is_constant else ScalarField(_Scaled(e, factor), d)
                    for e in row
                )
                for row in self.entries
            )
        )

    def plus(self, other):
        d = self.dimension
        rows = []
        for i in range(d):
            row = []
            for j in range(d):
                a, b = self.entries[i][j], other.entries[i][j]
                if a.is_constant and b.is_constant:
                    row.append(ScalarField.from_value(a.constant + b.constant, d))
                else:
                    row.append(ScalarField(_Sum(a, b), d))
            rows.append(tuple(row))
        return MatrixField(tuple(rows))


@dataclass(frozen=True)
class _Sum:
    a: ScalarField
    b: ScalarField

    def __call__(self, points):
        return self.a(points) + self.b(points)


_PRESET = re.compile(r"^\s*([a-z-]+)\s*(?:\((.*)\))?\s*$")


def _split_args(text):
    args, depth, cur = [], 0, ""
    for ch in text:
        if ch == "," and depth == 0:
            args.append(cur.strip())
            cur = ""
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur += ch
    if cur.strip():
        args.append(cur.strip())
    return args


def matrix_field(value, dimension) -> MatrixField:
    """Build a diffusion matrix from a preset name, a scalar, or nested entries.

    Presets: ``identity``, ``scaled-identity(eps)``, ``diag(e1, ...)``.
    """
    if isinstance(value, MatrixField):
        return value
    d = dimension
    if isinstance(value, str):
        m = _PRESET.match(value)
        name, args = (m.group(1), _split_args(m.group(2) or "")) if m else (None, [])
        if name == "identity" and not args:
            value = [[1.0 if i == j else 0.0 for j in range(d)] for i in range(d)]
        elif name == "scaled-identity" and len(args) == 1:
            value = [[args[0] if i == j else 0.0 for j in range(d)] for i in range(d)]
        elif name == "diag" and len(args) == d:
            value = [[args[i] if i == j else 0.0 for j in range(d)] for i in range(d)]
        elif d == 1:
            value = [[value]]
        else:
            raise ConfigError(f"unknown matrix preset {value!r}")
    elif isinstance(value, (int, float)):
        value = [[value if i == j else 0.0 for j in range(d)] for i in range(d)]
    rows = [list(r) for r in value]
    if len(rows) != d or any(len(r) != d for r in rows):
        raise ConfigError(f"diffusion matrix must be {d}x{d}")
    return MatrixField(tuple(tuple(ScalarField.from_value(e, d) for e in r) for r in rows))


def vector_field(value, dimension) -> VectorField:
    """Build a drift from a preset, a constant, or per-component entries.

    Presets: ``zero``, ``constant-drift(c1, ...)``, ``rotation`` (2D, ``(-y, x)``).
    """
    if isinstance(value, VectorField):
        return value
    d = dimension
    if value is None:
        value = [0.0] * d
    elif isinstance(value, str):
        m = _PRESET.match(value)
        name, args = (m.group(1), _split_args(m.group(2) or "")) if m else (None, [])
        if name == "zero" and not args:
            value = [0.0] * d
        elif name == "constant-drift" and len(args) == d:
            value = args
        elif name == "rotation" and not args:
            if d != 2:
                raise ConfigError("rotation drift is two-dimensional")
            value = ["-y", "x"]
        elif d == 1:
            value = [value]
        else:
            raise ConfigError(f"unknown drift preset {value!r}")
    elif isinstance(value, (int, float)):
        value = [value] * d
    comps = list(value)
    if len(comps) != d:
        raise ConfigError(f"drift must have {d} components")
    return VectorField(tuple(ScalarField.from_value(c, d) for c in comps))


def scalar_field(value, dimension) -> Optional[ScalarField]:
    """Potential V from an expression or the ``quadratic-potential`` preset (``|x|^2``)."""
    if value is None:
        return None
    if isinstance(value, str) and value.strip() == "quadratic-potential":
        value = "x^2" if dimension == 1 else "x^2 + y^2"
    return ScalarField.from_value(value, dimension)


@dataclass(frozen=True)
class CoefficientSet:
    """Diffusion matrix ``a``, drift ``b`` and optional potential ``V``."""

    a: MatrixField
    b: VectorField
    V: Optional[ScalarField] = None
    symmetric: bool = True

    @classmethod
    def build(cls, a="identity", b=None, V=None, dimension=1, symmetric=None):
        a_field = matrix_field(a, dimension)
        if symmetric is None:
            symmetric = all(
                a_field.entry(i, j).is_constant
                and a_field.entry(j, i).is_constant
                and a_field.entry(i, j).constant == a_field.entry(j, i).constant
                for i in range(dimension)
                for j in range(i + 1, dimension)
            )
        return cls(a_field, vector_field(b, dimension), scalar_field(V, dimension), bool(symmetric))

    @property
    def dimension(self):
        return self.a.dimension

    def with_drift(self, b):
        return CoefficientSet(self.a, vector_field(b, self.dimension), self.V, self.symmetric)


def numeric_divergence(b: VectorField, points, step):
    """Centered-difference divergence of ``b`` at ``points`` with per-axis ``step``."""
    pts = np.atleast_2d(points)
    div = np.zeros(pts.shape[0])
    for i, comp in enumerate(b.components):
        if comp.is_constant:
            continue
        e = np.zeros(pts.shape[1])
        e[i] = step[i]
        div += (comp(pts + e) - comp(pts - e)) / (2 * step[i])
    return div


def ergodic_generator_of_potential(c: CoefficientSet, points, step):
    """Finite-difference value of ``e^V div(e^{-V} a grad V)`` at ``points``."""
    pts = np.atleast_2d(points)
    d = pts.shape[1]
    V = c.V

    def flux(y, i):
        grad = np.zeros((y.shape[0], d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = step[j]
            grad[:, j] = (V(y + e) - V(y - e)) / (2 * step[j])
        a = c.a(y)
        return np.exp(-(V(y) - V(pts))) * np.einsum("nj,nj->n", a[:, i, :], grad)

    out = np.zeros(pts.shape[0])
    for i in range(d):
        e = np.zeros(d)
        e[i] = step[i] / 2
        out += (flux(pts + e, i) - flux(pts - e, i)) / step[i]
    return out


@dataclass
class ValidationReport:
    """Sampled checks of ellipticity, boundedness, divergence, Lyapunov and Peclet conditions.

    Global conditions are only checked on the grid nodes of the
    computational box; ``proxy_note`` says so explicitly.
    """

    ellipticity_min: float
    ellipticity_argmin: int
    max_eigenvalue: float
    max_frobenius_sq: float
    div_b: np.ndarray
    max_abs_div_b: float
    peclet: float
    peclet_argmax: int
    lyapunov_r: Optional[float] = None
    lyapunov_c: Optional[float] = None
    proxy_note: str = "bounds sampled on grid nodes of the computational box only"
    symmetric_ok: bool = True

    @property
    def ok(self):
        return self.ellipticity_min > 0 and self.peclet < 1 and self.symmetric_ok


def validate_coefficients(c: CoefficientSet, grid, *, raise_on_error=True, check_peclet=True) -> ValidationReport:
    """Evaluate the coefficient assumptions on all grid nodes.

    Raises ``EllipticityError`` or ``PecletError`` (naming the offending
    node) unless ``raise_on_error`` is false.
    """
    pts = grid.all_coords
    a = c.a(pts)
    sym = 0.5 * (a + np.swapaxes(a, 1, 2))
    eig = np.linalg.eigvalsh(sym)
    lam_min = eig[:, 0]
    k_min = int(np.argmin(lam_min))
    symmetric_ok = True
    if c.symmetric:
        symmetric_ok = bool(np.allclose(a, np.swapaxes(a, 1, 2), rtol=0, atol=1e-14))
    if raise_on_error and lam_min[k_min] <= 0:
        raise EllipticityError(
            f"diffusion matrix not positive definite at node {k_min} "
            f"(x={pts[k_min].tolist()}): smallest eigenvalue {lam_min[k_min]:.3g}"
        )
    if raise_on_error and not symmetric_ok:
        raise ConfigError("diffusion matrix declared symmetric but is not")
    inner = grid.coords
    div = numeric_divergence(c.b, inner, grid.h)
    bvals = c.b(pts)
    with np.errstate(divide="ignore", invalid="ignore"):
        pe = float(np.max(grid.h)) * np.linalg.norm(bvals, axis=1) / (2 * lam_min)
    pe = np.where(lam_min > 0, pe, np.inf)
    k_pe = int(np.argmax(pe))
    report = ValidationReport(
        ellipticity_min=float(lam_min[k_min]),
        ellipticity_argmin=k_min,
        max_eigenvalue=float(eig[:, -1].max()),
        max_frobenius_sq=float(np.max(np.sum(a * a, axis=(1, 2)))),
        div_b=div,
        max_abs_div_b=float(np.max(np.abs(div))) if div.size else 0.0,
        peclet=float(pe[k_pe]),
        peclet_argmax=k_pe,
        symmetric_ok=symmetric_ok,
    )
    if raise_on_error and check_peclet and report.peclet >= 1:
        raise PecletError(
            f"grid Peclet number {report.peclet:.3g} >= 1 at node {k_pe} "
            f"(x={pts[k_pe].tolist()}); refine the grid"
        )
    if c.V is not None:
        lv = ergodic_generator_of_potential(c, pts, grid.h)
        radius = np.linalg.norm(pts, axis=1)
        order = np.argsort(radius)
        # best (r, c): smallest r such that sup_{|x| >= r} LV < 0
        tail_max = np.maximum.accumulate(lv[order][::-1])[::-1]
        ok = np.flatnonzero(tail_max < 0)
        if ok.size:
            j = ok[0]
            report.lyapunov_r = float(radius[order][j])
            report.lyapunov_c = float(-tail_max[j])
    return report
