"""Gibbs-weighted generators and the stationary-start exit-time identities."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, NumericalError
from .fields import CoefficientSet, validate_coefficients
from .geometry import DomainSpec, build_grid


@dataclass(frozen=True, eq=False)
class GibbsWeights:
    """Node weights ``pi_i = exp(-V(x_i)) h^d / Z`` over the computational box.

    ``Z`` is truncated to the box; ``interior`` holds the weights of the
    domain's interior nodes and ``outside_mass`` the mass of every other
    box node (where the exit time is zero).
    """

    full: np.ndarray
    interior: np.ndarray
    Z: float
    truncation_change: float | None = None

    @property
    def outside_mass(self):
        return float(self.full.sum() - self.interior.sum())

    @property
    def total(self):
        return float(self.full.sum())


def _box_weights(V, axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    v = V(pts)
    if not np.all(np.isfinite(v)):
        raise NumericalError("potential V is not finite on the computational box")
    if v.min() < -700:
        raise NumericalError(f"exp(-V) overflows (min V = {v.min():.3g})")
    cell = float(np.prod([ax[1] - ax[0] for ax in axes]))
    raw = np.exp(-v) * cell
    return raw.reshape(mesh[0].shape), float(raw.sum())


def gibbs_weights(V, grid, *, check_truncation=False) -> GibbsWeights:
    """Normalized Gibbs weights on all nodes of ``grid``'s bounding box.

    With ``check_truncation`` the normalizer is recomputed on the box
    doubled about its centre (same spacing); the relative change is
    stored in ``truncation_change``.
    """
    raw, Z = _box_weights(V, grid.axes)
    change = None
    if check_truncation:
        axes2 = []
        for ax in grid.axes:
            h = ax[1] - ax[0]
            width = ax[-1] - ax[0]
            axes2.append(ax[0] - width / 2 + h * np.arange(2 * (len(ax) - 1) + 1))
        _, Z2 = _box_weights(V, axes2)
        change = abs(Z2 - Z) / Z
    full = raw / Z
    interior = full.ravel()[grid.interior_index]
    return GibbsWeights(full, interior, Z, change)


@dataclass(frozen=True)
class IdentityCheck:
    """Two independently computed sides of one identity and their relative gap."""

    name: str
    beta: float
    lhs: float
    rhs: float

    @property
    def gap(self):
        if self.lhs == self.rhs:
            return 0.0
        scale = max(abs(self.lhs), abs(self.rhs))
        return abs(self.lhs - self.rhs) / scale if np.isfinite(scale) else np.inf


@dataclass
class ErgodicReport:
    """Stationary-start exit-time quantities on a subdomain of a Gibbs-weighted box.

    ``checks`` lists the identity checks.  ``mean_exit`` is
    ``E_pi tau_D``; ``Z`` is truncated to the computational box and
    ``truncation_change`` is the relative change of ``Z`` when the box is
    doubled.
    """

    Z: float
    truncation_change: Optional[float]
    outside_mass: float
    mean_exit: float
    lambda0: float
    detailed_balance: Optional[float]
    validation: object
    checks: list = field(default_factory=list)
    expmoment_finite: dict = field(default_factory=dict)

    def check(self, name, beta=None):
        for row in self.checks:
            if row.name == name and (beta is None or row.beta == beta):
                return row
        raise KeyError((name, beta))

    @property
    def max_gap(self):
        gaps = [r.gap for r in self.checks]
        return max(gaps) if gaps else 0.0


def detailed_balance_defect(op) -> float:
    """Relative asymmetry of ``diag(pi) Q``: ``max|P - P^T| / max|P|``."""
    P = (sp.diags(op.weights) @ op.Q).tocsr()
    diff = abs(P - P.T).max()
    return float(diff / abs(P).max())


def ergodic_report(c: CoefficientSet, domain: DomainSpec, betas: Sequence[float] = (1.0,)) -> ErgodicReport:
    """Evaluate the stationary-start identities for the ergodic generator.

    ``domain`` describes the computational box (its extent) and the exit
    domain ``D`` (its mask).  Gibbs weights are normalized over every box
    node; starts outside ``D`` exit immediately.

    For each ``beta > 0`` the report compares

    * ``laplace-closure``: ``beta / (1 - E_pi exp(-beta tau_D))`` against the
      weighted saddle value from the KKT system,
    * ``laplace-poisson``: the same left side against the weighted saddle
      built from Poisson solutions,
    * ``laplace-min`` (symmetric ``a``): against the weighted constrained
      minimum of ``E_{pi,beta}(f, f)``,
    * ``expmoment`` (symmetric ``a``): ``(inf E_{pi,-beta}(f, f)) v 0``
      against ``beta / (E_pi exp(beta tau_D) - 1)`` (zero when infinite).

    The ``beta = 0`` versions compare ``1 / E_pi tau_D`` in the same way.
    """
    if c.V is None:
        raise ConfigError("ergodic report needs a potential V")
    from .operators import assemble_generator
    from .exit_time import exp_moment_profile, laplace_profile, mean_exit_profile, principal_eigenvalue
    from .variational import (
        TrialSpaceSpec,
        exp_moment_variational,
        minimum_direct,
        saddle_direct,
        saddle_from_poisson,
    )

    grid = build_grid(domain)
    op = assemble_generator(c, grid, "ergodic")
    gw = gibbs_weights(c.V, grid, check_truncation=True)
    validation = validate_coefficients(c, grid, check_peclet=False)
    space = TrialSpaceSpec.for_source(op)
    symmetric = op.self_adjoint

    mean = mean_exit_profile(op)
    lam = principal_eigenvalue(op).lambda0
    report = ErgodicReport(
        Z=gw.Z,
        truncation_change=gw.truncation_change,
        outside_mass=gw.outside_mass,
        mean_exit=mean.integral,
        lambda0=lam,
        detailed_balance=detailed_balance_defect(op) if symmetric else None,
        validation=validation,
    )
    checks = report.checks
    inv_mean = 1.0 / mean.integral
    checks.append(IdentityCheck("mean-closure", 0.0, inv_mean, saddle_direct(op, 0.0, space).value))
    checks.append(IdentityCheck("mean-poisson", 0.0, inv_mean, saddle_from_poisson(op, 0.0).value))
    if symmetric:
        checks.append(IdentityCheck("mean-min", 0.0, inv_mean, minimum_direct(op, 0.0, space).value))
    for beta in betas:
        beta = float(beta)
        if not beta > 0:
            raise ValueError("betas must be positive")
        prof = laplace_profile(op, beta)
        # E_pi exp(-beta tau): interior nodes from the profile, every other box node contributes 1
        e_lap = float(np.dot(gw.interior, prof.values.values)) + gw.outside_mass
        lhs = beta / (gw.total - e_lap)
        checks.append(IdentityCheck("laplace-closure", beta, lhs, saddle_direct(op, beta, space).value))
        checks.append(IdentityCheck("laplace-poisson", beta, lhs, saddle_from_poisson(op, beta).value))
        if symmetric:
            checks.append(IdentityCheck("laplace-min", beta, lhs, minimum_direct(op, beta, space).value))
            em = exp_moment_profile(op, beta)
            rhs = 0.0 if em.diverged else beta / em.integral
            checks.append(IdentityCheck("expmoment", beta, exp_moment_variational(op, beta, space), rhs))
            report.expmoment_finite[beta] = not em.diverged
    return report
