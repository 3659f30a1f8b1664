"""Saddle-point characterizations of exit-time functionals.

The functional ``F(f, g) = E_beta(f - g, f + g)`` is minimized over
``f`` with ``sum w f xi = delta`` and maximized over ``g`` with
``sum w g xi = 0``.  Two routes compute the saddle value: normalized
Poisson solutions for the operator and its adjoint
(``saddle_from_poisson``), and the linear stationarity system of the
constrained quadratic problem (``saddle_direct``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ._linalg import solve_sparse, symmetric_inertia
from .errors import ConfigError, DegenerateSourceError, NumericalError, SingularSystemError
from .geometry import GridFunction, grid_values
from .operators import DiscreteOperator, _form, bilinear_form, weighted_adjoint
from .poisson import solve_dirichlet

VALUE_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class TrialSpaceSpec:
    """Affine constraint ``constraint . h = target`` on functions supported in ``support``."""

    constraint: np.ndarray
    target: float = 1.0
    support: Optional[np.ndarray] = None

    def __post_init__(self):
        c = np.asarray(self.constraint, dtype=float)
        object.__setattr__(self, "constraint", c)
        sup = np.ones(c.size, dtype=bool) if self.support is None else np.asarray(self.support, dtype=bool)
        if sup.shape != c.shape:
            raise ConfigError("support mask does not match the constraint vector")
        object.__setattr__(self, "support", sup)
        if not np.any(c[sup] != 0):
            raise ConfigError("constraint vanishes on the allowed support")

    @classmethod
    def for_source(cls, op: DiscreteOperator, xi=1.0, support=None, target=1.0):
        """Pairing ``sum_i w_i h_i xi_i`` with the operator's weights."""
        if callable(xi) and not isinstance(xi, GridFunction):
            xi = GridFunction.sample(xi, op.grid)
        return cls(op.weights * grid_values(xi, op.grid), target, support)

    def project(self, v):
        """Project ``v`` (restricted to the support) onto ``constraint . v = 0``."""
        out = np.where(self.support, v, 0.0)
        c = np.where(self.support, self.constraint, 0.0)
        return out - c * (c @ out) / (c @ c)


@dataclass
class SaddleSolution:
    f: GridFunction
    g: GridFunction
    value: float
    multipliers: tuple
    method: str
    residuals: dict = field(default_factory=dict)


def evaluate_minimax_functional(f, g, op: DiscreteOperator, beta: float) -> float:
    """``E_beta(f - g, f + g)``."""
    fv = grid_values(f, op.grid)
    gv = grid_values(g, op.grid)
    return bilinear_form(fv - gv, fv + gv, op, beta)


def _check_beta(beta):
    if beta < 0:
        raise ValueError("beta must be >= 0")


def saddle_from_poisson(op: DiscreteOperator, beta: float, xi=1.0) -> SaddleSolution:
    """Saddle point built from the Poisson solutions of the operator and its adjoint.

    With ``u`` and ``u~`` solving ``(beta - L) u = xi`` and the adjoint
    problem, ``w = u / <u, xi>``, ``w~ = u~ / <u~, xi>`` and the optimizers
    are ``f* = (w + w~)/2``, ``g* = (w - w~)/2`` with value ``1 / <u, xi>``.
    """
    _check_beta(beta)
    grid = op.grid
    if callable(xi) and not isinstance(xi, GridFunction):
        xi = GridFunction.sample(xi, grid)
    xv = grid_values(xi, grid)
    w8 = op.weights
    u = solve_dirichlet(op, beta, xv).values
    ut = solve_dirichlet(weighted_adjoint(op), beta, xv).values
    s = float(np.dot(w8 * u, xv))
    st = float(np.dot(w8 * ut, xv))
    norm_u = np.sqrt(np.dot(w8, u * u))
    norm_xi = np.sqrt(np.dot(w8, xv * xv))
    if abs(s) < 1e-12 * norm_u * norm_xi or s == 0:
        raise DegenerateSourceError(f"normalizer sum w u xi = {s:.3g} is numerically zero")
    w = u / s
    wt = ut / st
    f = 0.5 * (w + wt)
    g = 0.5 * (w - wt)
    value = 1.0 / s
    check = evaluate_minimax_functional(f, g, op, beta)
    if abs(check - value) > VALUE_RTOL * abs(value):
        raise NumericalError(f"saddle functional {check!r} disagrees with 1/<u,xi> = {value!r}")
    residuals = {
        "f_constraint": float(np.dot(w8 * f, xv) - 1.0),
        "g_constraint": float(np.dot(w8 * g, xv)),
        "duality_gap": abs(s - st) / abs(s),
    }
    return SaddleSolution(
        GridFunction(f, grid), GridFunction(g, grid), value, (2.0 * value, 0.0), "from-poisson", residuals
    )


def _weighted_matrix(op, shift):
    return (sp.diags(op.weights) @ op.shifted(shift)).tocsr()


def saddle_direct(op: DiscreteOperator, beta: float, space: TrialSpaceSpec) -> SaddleSolution:
    """Solve the stationarity (KKT) system of the constrained min-max problem.

    Unknowns outside ``space.support`` are fixed to zero, which realizes
    the inf-sup over compactly supported trial functions.
    """
    _check_beta(beta)
    grid = op.grid
    S = np.flatnonzero(space.support)
    M = _weighted_matrix(op, beta)[S][:, S]
    Ms = (M + M.T).tocsr()
    K = (M - M.T).tocsr()
    c = sp.csr_matrix(space.constraint[S].reshape(-1, 1))
    KKT = sp.bmat(
        [
            [Ms, K, -c, None],
            [-K, -Ms, None, -c],
            [c.T, None, None, None],
            [None, c.T, None, None],
        ],
        format="csc",
    )
    m = S.size
    rhs = np.zeros(2 * m + 2)
    rhs[2 * m] = space.target
    try:
        sol = solve_sparse(KKT, rhs)
    except RuntimeError as exc:
        raise SingularSystemError(f"singular KKT system: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError("KKT solve produced non-finite values")
    f = np.zeros(grid.n_interior)
    g = np.zeros(grid.n_interior)
    f[S] = sol[:m]
    g[S] = sol[m : 2 * m]
    value = evaluate_minimax_functional(f, g, op, beta)
    residuals = {
        "f_constraint": float(space.constraint @ f - space.target),
        "g_constraint": float(space.constraint @ g),
        "kkt": float(np.max(np.abs(KKT @ sol - rhs))),
    }
    return SaddleSolution(
        GridFunction(f, grid), GridFunction(g, grid), value, (float(sol[2 * m]), float(sol[2 * m + 1])), "direct-kkt", residuals
    )


def _constrained_min(M, c, target):
    """Minimize ``f^T M f`` subject to ``c . f = target`` (``M`` symmetric); returns ``(f, mu)``."""
    m = M.shape[0]
    KKT = sp.bmat([[2 * M, -sp.csr_matrix(c.reshape(-1, 1))], [sp.csr_matrix(c.reshape(1, -1)), None]], format="csc")
    rhs = np.zeros(m + 1)
    rhs[m] = target
    try:
        sol = solve_sparse(KKT, rhs)
    except RuntimeError as exc:
        raise SingularSystemError(f"singular KKT system: {exc}") from exc
    return sol[:m], float(sol[m])


def minimum_direct(op: DiscreteOperator, beta: float, space: TrialSpaceSpec) -> SaddleSolution:
    """Constrained minimum of ``E_beta(f, f)`` (only the symmetric part of the form matters)."""
    _check_beta(beta)
    S = np.flatnonzero(space.support)
    M = _weighted_matrix(op, beta)[S][:, S]
    Msym = (0.5 * (M + M.T)).tocsr()
    fS, mu = _constrained_min(Msym, space.constraint[S], space.target)
    f = np.zeros(op.grid.n_interior)
    f[S] = fS
    value = bilinear_form(f, f, op, beta)
    zero = GridFunction(np.zeros_like(f), op.grid)
    return SaddleSolution(
        GridFunction(f, op.grid), zero, value, (mu, 0.0), "direct-min",
        {"f_constraint": float(space.constraint @ f - space.target)},
    )


@dataclass
class AuditReport:
    trials: int
    value: float
    max_upper_excess: float
    min_lower_excess: float
    tolerance: float

    @property
    def passed(self):
        return self.max_upper_excess <= self.tolerance and self.min_lower_excess >= -self.tolerance


def _direction(space, weights, seed, side, trial):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(side, trial)))
    z = space.project(rng.standard_normal(space.constraint.size))
    norm = np.sqrt(np.dot(weights, z * z))
    return z / norm if norm > 0 else z


def perturbation_audit(
    s: SaddleSolution, op: DiscreteOperator, beta: float, space: TrialSpaceSpec, trials: int = 100, seed: int = 0,
    tolerance: float = 1e-10,
) -> AuditReport:
    """Probe the saddle inequalities with random admissible perturbations.

    For each trial ``F(f*, g* + dg) <= value`` and ``F(f* + df, g*) >= value``
    where ``dg``, ``df`` have standard normal entries projected onto the
    constraint null space and unit weighted norm.  Direction ``k`` of each
    side depends only on ``(seed, side, k)``.
    """
    f = s.f.values
    g = s.g.values
    upper = -np.inf
    lower = np.inf
    for k in range(trials):
        dg = _direction(space, op.weights, seed, 0, k)
        upper = max(upper, evaluate_minimax_functional(f, g + dg, op, beta) - s.value)
        df = _direction(space, op.weights, seed, 1, k)
        lower = min(lower, evaluate_minimax_functional(f + df, g, op, beta) - s.value)
    if trials == 0:
        upper = lower = evaluate_minimax_functional(f, g, op, beta) - s.value
    return AuditReport(trials, s.value, float(upper), float(lower), tolerance)


def _require_symmetric(op):
    if not op.self_adjoint:
        raise ConfigError("exponential moments need a self-adjoint operator (b = 0, symmetric a)")


def exp_moment_variational(op: DiscreteOperator, beta: float, space: Optional[TrialSpaceSpec] = None) -> float:
    """``(inf E_{-beta}(f, f)) v 0`` over the constrained space.

    The reduced quadratic form is tested for positive definiteness by the
    inertia of the bordered system; if it is not definite the infimum is
    non-positive and the result is exactly ``0.0``.
    """
    _require_symmetric(op)
    if not beta > 0:
        raise ValueError("beta must be positive")
    space = TrialSpaceSpec.for_source(op) if space is None else space
    S = np.flatnonzero(space.support)
    M = _weighted_matrix(op, -beta)[S][:, S]
    M = (0.5 * (M + M.T)).tocsr()
    c = space.constraint[S]
    bordered = sp.bmat([[M, sp.csr_matrix(c.reshape(-1, 1))], [sp.csr_matrix(c.reshape(1, -1)), None]], format="csc")
    _, n_neg, n_zero = symmetric_inertia(bordered)
    if n_neg != 1 or n_zero != 0:
        return 0.0
    fS, _ = _constrained_min(M, c, space.target)
    f = np.zeros(op.grid.n_interior)
    f[S] = fS
    return max(_form(f, f, op, -beta), 0.0)
