"""Sparse discretizations of the divergence-form generator and its adjoints.

Every operator stores ``Q``, the interior-node matrix of ``-L``, so the
shifted operator ``beta - L`` is ``beta * I + Q``.  Boundary nodes are
eliminated: their couplings are kept in ``boundary_coupling`` for
inhomogeneous Dirichlet data.

Schemes
-------
flux-centered
    ``div(a grad)`` by face fluxes with arithmetically averaged ``a``,
    ``b . grad`` by centered differences.
adjoint-direct
    Direct discretization of ``div(a grad f) - b . grad f - div(b) f``
    with numerically differentiated ``div(b)``.  Only a cross-check.
transpose-adjoint
    ``Q.T`` of a flux-centered operator; the canonical discrete adjoint.
ergodic
    ``e^V div(e^{-V} a grad f)`` with face-averaged ``e^{-V}``, weighted by
    the Gibbs measure.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, GridMismatchError
from .fields import CoefficientSet, numeric_divergence, validate_coefficients
from .geometry import StructuredGrid, grid_values

SCHEMES = ("flux-centered", "adjoint-direct", "transpose-adjoint", "ergodic")


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    Q: sp.csr_matrix
    boundary_coupling: sp.csr_matrix
    grid: StructuredGrid
    coefficients: CoefficientSet
    scheme: str
    weights: np.ndarray
    has_drift: bool
    self_adjoint: bool
    gibbs: Optional[object] = None
    source: Optional["DiscreteOperator"] = None

    @property
    def n(self):
        return self.Q.shape[0]

    @property
    def uniform_weights(self):
        return bool(np.all(self.weights == self.weights[0]))

    def shifted(self, beta):
        """Sparse matrix ``beta * I + Q``."""
        return (self.Q + beta * sp.identity(self.n, format="csr")).tocsr()

    def apply_generator(self, f):
        """Discrete ``L f`` on interior nodes (zero boundary data)."""
        return -(self.Q @ grid_values(f, self.grid))

    def scaled(self, factor):
        bc = None if self.boundary_coupling is None else (factor * self.boundary_coupling).tocsr()
        return replace(self, Q=(factor * self.Q).tocsr(), boundary_coupling=bc, source=None)


def _face_average(values_p, values_q):
    return 0.5 * (values_p + values_q)


def assemble_generator(
    c: CoefficientSet, grid: StructuredGrid, scheme: str = "flux-centered", *, validate: bool = True
) -> DiscreteOperator:
    """Assemble ``-L`` (or ``-L~`` / ``-ergodic L``) on the interior nodes of ``grid``."""
    if scheme not in ("flux-centered", "adjoint-direct", "ergodic"):
        if scheme == "transpose-adjoint":
            return adjoint_of(assemble_generator(c, grid, "flux-centered", validate=validate))
        raise ConfigError(f"unknown scheme {scheme!r}")
    d = grid.dimension
    if c.dimension != d:
        raise GridMismatchError("coefficient dimension does not match grid")
    if validate:
        validate_coefficients(c, grid, check_peclet=scheme != "ergodic")
    if scheme == "ergodic":
        if c.V is None:
            raise ConfigError("ergodic scheme needs a potential V")
        if not c.b.is_zero:
            raise ConfigError("ergodic generator has no separate drift; set b = 0")
    a_sym_off = None
    if d == 2:
        if not c.a.off_diagonal_constant:
            raise ConfigError("2D off-diagonal diffusion entries must be constant")
        a01, a10 = c.a.entry(0, 1).constant, c.a.entry(1, 0).constant
        a_sym_off = 0.5 * (a01 + a10)
        a_anti = 0.5 * (a01 - a10)
        if scheme == "ergodic" and a_sym_off != 0.0:
            raise ConfigError("ergodic scheme supports diagonal a plus a constant antisymmetric part only")

    shape = grid.shape
    strides = np.array([int(np.prod(shape[k + 1 :])) for k in range(d)])
    rows_full = grid.interior_index
    x = grid.coords
    n = grid.n_interior
    rows, cols, vals = [], [], []
    diag = np.zeros(n)

    if scheme == "ergodic":
        Vp = c.V(x)
        row_scale = np.ones(n)
    for i in range(d):
        h = grid.h[i]
        e = np.zeros(d)
        e[i] = h
        a_p = c.a.entry(i, i)(x)
        for sign in (+1, -1):
            xq = x + sign * e
            face = _face_average(a_p, c.a.entry(i, i)(xq))
            if scheme == "ergodic":
                # e^{V_p} * avg(e^{-V_p}, e^{-V_q}) written relative to V_p
                face = face * _face_average(1.0, np.exp(-(c.V(xq) - Vp)))
            coef = face / h**2
            diag += coef
            rows.append(np.arange(n))
            cols.append(rows_full + sign * strides[i])
            vals.append(-coef)

    bx = None
    drift_sign = 1.0
    if scheme in ("flux-centered", "adjoint-direct"):
        if not c.b.is_zero:
            bx = c.b(x)
            drift_sign = 1.0 if scheme == "flux-centered" else -1.0
    elif d == 2 and a_anti != 0.0:
        # constant antisymmetric part of a acts as the drift -A^T grad V
        eye = np.eye(d)
        gV = np.stack(
            [(c.V(x + eye[j] * grid.h[j]) - c.V(x - eye[j] * grid.h[j])) / (2 * grid.h[j]) for j in range(d)],
            axis=1,
        )
        A = np.array([[0.0, a_anti], [-a_anti, 0.0]])
        bx = -(gV @ A)
    if bx is not None:
        for i in range(d):
            coef = drift_sign * bx[:, i] / (2 * grid.h[i])
            rows += [np.arange(n), np.arange(n)]
            cols += [rows_full + strides[i], rows_full - strides[i]]
            vals += [-coef, coef]
    if scheme == "adjoint-direct" and not c.b.is_zero:
        diag += numeric_divergence(c.b, x, grid.h)

    if a_sym_off:
        coef = 2 * a_sym_off / (4 * grid.h[0] * grid.h[1])
        for s0, s1, s in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
            rows.append(np.arange(n))
            cols.append(rows_full + s0 * strides[0] + s1 * strides[1])
            vals.append(np.full(n, -s * coef))

    rows.append(np.arange(n))
    cols.append(rows_full)
    vals.append(diag)
    rows = np.concatenate(rows)
    cols_full = np.concatenate(cols)
    vals = np.concatenate(vals)
    col_int = grid.index_map.ravel()[cols_full]
    inner = col_int >= 0
    Q = sp.csr_matrix((vals[inner], (rows[inner], col_int[inner])), shape=(n, n))
    Qb = sp.csr_matrix((vals[~inner], (rows[~inner], cols_full[~inner])), shape=(n, int(np.prod(shape))))
    Q.sum_duplicates()
    Q.eliminate_zeros()

    has_drift = bx is not None and bool(np.any(bx != 0))
    if scheme == "ergodic":
        from .ergodic import gibbs_weights

        gw = gibbs_weights(c.V, grid)
        weights = gw.interior
        self_adjoint = not has_drift
    else:
        gw = None
        weights = grid.weights.copy()
        self_adjoint = (not has_drift) and c.symmetric
    return DiscreteOperator(Q, Qb, grid, c, scheme, weights, has_drift, self_adjoint, gw)


def adjoint_of(op: DiscreteOperator) -> DiscreteOperator:
    """Transpose adjoint ``Q.T``; requires uniform Lebesgue weights."""
    if not op.uniform_weights or op.scheme == "ergodic":
        raise ConfigError("adjoint_of needs uniform Lebesgue weights; use weighted_adjoint")
    if op.scheme == "transpose-adjoint":
        base = op.source
        return replace(
            op,
            Q=op.Q.T.tocsr(),
            scheme=base.scheme if base is not None else "flux-centered",
            boundary_coupling=base.boundary_coupling if base is not None else None,
            source=None,
        )
    # the transpose carries no boundary coupling: only homogeneous data is supported
    return replace(op, Q=op.Q.T.tocsr(), boundary_coupling=None, scheme="transpose-adjoint", source=op)


def weighted_adjoint(op: DiscreteOperator) -> DiscreteOperator:
    """Adjoint in the weighted inner product: ``W^{-1} Q^T W``."""
    if op.uniform_weights and op.scheme != "ergodic":
        return adjoint_of(op)
    w = op.weights
    Qt = (sp.diags(1.0 / w) @ op.Q.T @ sp.diags(w)).tocsr()
    return replace(op, Q=Qt, boundary_coupling=None, scheme=op.scheme + "-adjoint", source=op)


def _form(f, g, op, beta):
    fv = grid_values(f, op.grid)
    gv = grid_values(g, op.grid)
    return float(np.dot(op.weights * fv, op.Q @ gv + beta * gv))


def bilinear_form(f, g, op: DiscreteOperator, beta: float) -> float:
    """Discrete ``E_beta(f, g) = sum_i w_i f_i ((beta I + Q) g)_i`` for ``beta >= 0``."""
    if beta < 0:
        raise ValueError("bilinear_form needs beta >= 0; negative shifts belong to exp-moment routines")
    return _form(f, g, op, beta)
