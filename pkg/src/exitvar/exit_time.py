"""Exit-time functionals from Poisson problems, and the principal eigenvalue."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigs

from ._linalg import symmetric_inertia
from .errors import ConfigError, ConvergenceError
from .geometry import GridFunction
from .operators import DiscreteOperator
from .poisson import solve_dirichlet

DENSE_EIG_LIMIT = 2000


@dataclass
class ExitFunctionalProfile:
    """Nodewise exit-time functional and its weighted integral.

    ``integral`` is ``sum w E_x tau`` (mean), ``sum w (1 - E_x e^{-beta tau})``
    (laplace) or ``sum w (E_x e^{beta tau} - 1)`` (expmoment).
    """

    kind: str
    beta: float
    values: Optional[GridFunction]
    integral: float
    diverged: bool = False
    solution: Optional[GridFunction] = None

    def at(self, points, boundary=None):
        if self.values is None:
            raise ValueError("profile diverged; no values")
        if boundary is None:
            boundary = {"mean": 0.0, "laplace": 1.0, "expmoment": 1.0}[self.kind]
        return self.values.at(points, boundary)


def mean_exit_profile(op: DiscreteOperator) -> ExitFunctionalProfile:
    """``E_x tau`` from ``-L u = 1``, ``u = 0`` on the boundary."""
    u = solve_dirichlet(op, 0.0, 1.0)
    return ExitFunctionalProfile("mean", 0.0, u, float(np.dot(op.weights, u.values)), solution=u)


def laplace_profile(op: DiscreteOperator, beta: float) -> ExitFunctionalProfile:
    """``E_x exp(-beta tau) = 1 - beta u_beta`` with ``(beta - L) u_beta = 1``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    u = solve_dirichlet(op, beta, 1.0)
    values = GridFunction(1.0 - beta * u.values, op.grid)
    return ExitFunctionalProfile("laplace", beta, values, float(beta * np.dot(op.weights, u.values)), solution=u)


def exp_moment_finite(op: DiscreteOperator, beta: float) -> bool:
    """Inertia test: is ``W(Q - beta I)`` positive definite (``beta < |lambda_0|``)?"""
    M = (sp.diags(op.weights) @ op.shifted(-beta)).tocsr()
    M = 0.5 * (M + M.T)
    _, n_neg, n_zero = symmetric_inertia(M)
    return n_neg == 0 and n_zero == 0


def exp_moment_profile(op: DiscreteOperator, beta: float) -> ExitFunctionalProfile:
    """``E_x exp(beta tau)`` from ``(beta + L) v = 0``, ``v = 1`` on the boundary.

    Returns a profile with ``diverged=True`` and no values when
    ``beta >= |lambda_0|``.
    """
    if not op.self_adjoint:
        raise ConfigError("exponential moments need a self-adjoint operator (b = 0, symmetric a)")
    if not beta > 0:
        raise ValueError("beta must be positive")
    if not exp_moment_finite(op, beta):
        return ExitFunctionalProfile("expmoment", beta, None, np.inf, diverged=True)
    v = solve_dirichlet(op, -beta, 0.0, boundary_values=1.0)
    return ExitFunctionalProfile("expmoment", beta, v, float(np.dot(op.weights, v.values - 1.0)))


@dataclass
class SpectralResult:
    lambda0: float
    method: str
    residual: float
    eigenvector: Optional[GridFunction]


def principal_eigenvalue(op: DiscreteOperator, method: str = "auto", shift: float = 0.0) -> SpectralResult:
    """Largest real part of the spectrum of the discrete ``L = -Q``.

    ``method="tridiagonal"`` (default for 1D stencils whose off-diagonal
    products are positive) symmetrizes ``Q`` by a diagonal similarity and
    calls a symmetric tridiagonal eigensolver; ``Q`` and its transpose map
    to the same symmetric matrix, so both give bit-identical values.
    ``method="dense"`` uses a full eigendecomposition (default up to
    2000 unknowns).  ``"shift-invert"`` runs ARPACK on ``Q`` around
    ``shift``; with the default ``shift = 0`` this returns the smallest
    magnitude eigenvalue, which is the principal one whenever ``Q`` is an
    M-matrix (diffusion-dominated stencils).
    """
    n = op.n
    if method == "auto":
        if _tridiagonal_parts(op) is not None:
            method = "tridiagonal"
        else:
            method = "dense" if n <= DENSE_EIG_LIMIT else "shift-invert"
    if method == "tridiagonal":
        parts = _tridiagonal_parts(op)
        if parts is None:
            raise ConfigError("tridiagonal method needs a 1D stencil with positive off-diagonal products")
        diag, upper, lower = parts
        off = np.sign(upper) * np.sqrt(upper * lower)
        vals, vecs = sla.eigh_tridiagonal(diag, off, select="i", select_range=(0, 0))
        # undo the similarity D^{-1} Q D with D_{k+1}/D_k = sqrt(lower/upper)
        logd = np.concatenate([[0.0], np.cumsum(0.5 * (np.log(np.abs(lower)) - np.log(np.abs(upper))))])
        scale = np.exp(logd - logd.max())
        vals, vecs = -vals, (vecs[:, 0] * scale)[:, None]
        k = 0
    elif method == "dense":
        vals, vecs = sla.eig(-op.Q.toarray())
        k = int(np.argmax(vals.real))
    elif method == "shift-invert":
        try:
            vals, vecs = eigs(op.Q.tocsc(), k=1, sigma=shift, which="LM", tol=1e-12, maxiter=5000)
        except ArpackNoConvergence as exc:
            raise ConvergenceError(f"shift-invert iteration did not converge: {exc}") from exc
        vals = -vals
        k = 0
    else:
        raise ConfigError(f"unknown eigen method {method!r}")
    vals = np.asarray(vals, dtype=complex)
    lam = vals[k]
    vec = vecs[:, k]
    eigvec = None
    if abs(lam.imag) <= 1e-10 * max(1.0, abs(lam.real)):
        # rotate the (possibly complex-phased) vector to real
        vec = vec * np.exp(-1j * np.angle(vec[np.argmax(np.abs(vec))]))
        vec = vec.real
        mass = float(np.dot(op.weights, vec))
        if mass != 0:
            vec = vec / mass
        eigvec = GridFunction(vec, op.grid)
        resid = np.linalg.norm(-(op.Q @ vec) - lam.real * vec) / np.linalg.norm(vec)
    else:
        resid = np.linalg.norm(-(op.Q @ vec) - lam * vec) / np.linalg.norm(vec)
    return SpectralResult(float(lam.real), method, float(resid), eigvec)


def _tridiagonal_parts(op):
    """Diagonal, upper and lower bands of a 1D ``Q`` if it is symmetrizable, else ``None``."""
    if op.grid.dimension != 1 or op.n < 2:
        return None
    Q = op.Q.todia() if sp.issparse(op.Q) else sp.dia_matrix(op.Q)
    if set(Q.offsets.tolist()) - {-1, 0, 1}:
        return None
    Q = op.Q.tocsr()
    upper, lower = Q.diagonal(1), Q.diagonal(-1)
    prod = upper * lower
    if not np.all(prod > 0):
        return None
    return Q.diagonal(0).copy(), upper, lower
