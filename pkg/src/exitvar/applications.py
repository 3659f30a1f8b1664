"""Comparison experiments: drift strength sweeps and diffusion-matrix ordering.

Both drivers only assemble operators and call the Poisson, exit-time and
spectral routines; they add bookkeeping of the expected orderings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .exit_time import exp_moment_profile, laplace_profile, mean_exit_profile, principal_eigenvalue
from .fields import CoefficientSet, matrix_field, validate_coefficients, vector_field
from .geometry import DomainSpec, build_grid
from .operators import assemble_generator

ORDER_RTOL = 1e-12


@dataclass(frozen=True)
class GammaSweep:
    """Family ``L_gamma = div(a grad) + gamma b . grad`` with divergence-free ``b``.

    Every ``gamma`` in ``gammas`` is run together with ``-gamma``; ``0`` is
    always included as the symmetric baseline.
    """

    a: object
    b: object
    gammas: Sequence[float]
    betas: Sequence[float]
    domain: DomainSpec
    div_tol: float = 1e-10


@dataclass
class GammaRow:
    gamma: float
    lambda0: float
    mean_integral: float
    laplace: dict

    def value(self, quantity, beta=None):
        return self.mean_integral if quantity == "mean" else self.laplace[beta]


@dataclass
class GammaTable:
    """Per-gamma integrals with symmetry gaps and monotonicity margins.

    ``symmetry_gaps`` holds ``(quantity, beta, gamma, |Q(gamma) - Q(-gamma)|)``;
    ``margins`` holds ``(quantity, beta, gamma_lo, gamma_hi, Q(gamma_lo) - Q(gamma_hi))``
    for consecutive non-negative gammas, so non-increasing means every
    margin is non-negative.
    """

    rows: list
    symmetry_gaps: list = field(default_factory=list)
    margins: list = field(default_factory=list)
    max_abs_div_b: float = 0.0

    def row(self, gamma):
        for r in self.rows:
            if r.gamma == gamma:
                return r
        raise KeyError(gamma)

    @property
    def max_symmetry_gap(self):
        return max((g[-1] for g in self.symmetry_gaps), default=0.0)

    @property
    def min_margin(self):
        return min((m[-1] for m in self.margins), default=0.0)


def run_gamma_sweep(s: GammaSweep) -> GammaTable:
    """Mean-exit and Laplace integrals of ``L_gamma`` over ``+-gamma``.

    ``I_beta(gamma) = sum w (1 - E_x exp(-beta tau))`` and
    ``M(gamma) = sum w E_x tau``.  Raises ``ConfigError`` when the sampled
    divergence of ``b`` exceeds ``div_tol`` or when a principal eigenvalue
    is not negative.
    """
    grid = build_grid(s.domain)
    d = grid.dimension
    a = matrix_field(s.a, d)
    b = vector_field(s.b, d)
    base = CoefficientSet(a, b)
    report = validate_coefficients(base, grid, check_peclet=False)
    if report.max_abs_div_b > s.div_tol:
        raise ConfigError(f"drift is not divergence free: max |div b| = {report.max_abs_div_b:.3g}")
    mags = sorted({abs(float(g)) for g in s.gammas} | {0.0})
    gammas = sorted({-g for g in mags if g} | set(mags))
    rows = []
    for gamma in gammas:
        op = assemble_generator(CoefficientSet(a, b.scaled(gamma)), grid)
        lam = principal_eigenvalue(op).lambda0
        if not lam < 0:
            raise ConfigError(f"principal eigenvalue {lam:.6g} is not negative for gamma={gamma}")
        lap = {float(beta): laplace_profile(op, beta).integral for beta in s.betas}
        rows.append(GammaRow(gamma, lam, mean_exit_profile(op).integral, lap))
    table = GammaTable(rows, max_abs_div_b=report.max_abs_div_b)
    quantities = [("mean", None)] + [("laplace", float(beta)) for beta in s.betas]
    for quantity, beta in quantities:
        for g in mags[1:]:
            gap = abs(table.row(g).value(quantity, beta) - table.row(-g).value(quantity, beta))
            table.symmetry_gaps.append((quantity, beta, g, gap))
        for lo, hi in zip(mags[:-1], mags[1:]):
            margin = table.row(lo).value(quantity, beta) - table.row(hi).value(quantity, beta)
            table.margins.append((quantity, beta, lo, hi, margin))
    return table


@dataclass(frozen=True)
class MonotonicityCase:
    """Two diffusion matrices ``a1 <= a2`` (quadratic-form order), optional drift for ``a2``.

    ``exp_betas`` are the shifts for the exponential-moment ordering (only
    used without drift); ``epsilons`` define the family ``eps * a1``.
    """

    a1: object
    a2: object
    domain: DomainSpec
    betas: Sequence[float] = (1.0,)
    b: Optional[object] = None
    exp_betas: Sequence[float] = ()
    epsilons: Sequence[float] = (0.5, 1.0, 2.0, 4.0)
    samples: int = 1000
    seed: int = 0


@dataclass(frozen=True)
class Ordering:
    """``upper`` is the ``a1`` value, ``lower`` the ``a2`` value; ``lower <= upper`` is expected."""

    quantity: str
    beta: Optional[float]
    upper: float
    lower: float

    @property
    def holds(self):
        if np.isinf(self.upper):
            return True
        return self.lower <= self.upper + ORDER_RTOL * abs(self.upper)

    @property
    def margin(self):
        return self.upper - self.lower


@dataclass
class MonotonicityResult:
    certification_margin: float
    orderings: list
    epsilon_sequences: dict
    scaling_products: list

    @property
    def orderings_hold(self):
        return all(o.holds for o in self.orderings)

    @property
    def epsilon_monotone(self):
        """Each sequence is non-increasing in ``eps`` (``inf`` counts as largest)."""
        ok = True
        for seq in self.epsilon_sequences.values():
            for hi, lo in zip(seq[:-1], seq[1:]):
                ok &= bool(np.isinf(hi) or lo <= hi + ORDER_RTOL * abs(hi))
        return ok

    @property
    def scaling_spread(self):
        p = np.asarray(self.scaling_products)
        return float((p.max() - p.min()) / abs(p.mean()))


def certify_order(a1, a2, grid, samples=1000, seed=0):
    """Smallest ``v . (a2 - a1) v`` over random (node, unit direction) pairs.

    Raises ``ConfigError`` naming the node when the sample is negative.
    """
    rng = np.random.default_rng(seed)
    pts = grid.all_coords
    idx = rng.integers(0, pts.shape[0], samples)
    v = rng.standard_normal((samples, grid.dimension))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    x = pts[idx]
    diff = np.einsum("ni,nij,nj->n", v, a2(x) - a1(x), v)
    k = int(np.argmin(diff))
    scale = max(1.0, float(np.max(np.abs(a1(x)))))
    if diff[k] < -1e-14 * scale:
        raise ConfigError(
            f"a1 <= a2 fails at node {int(idx[k])} (x={x[k].tolist()}): v.(a2-a1)v = {diff[k]:.3g}"
        )
    return float(diff[k])


def _integrals(op, betas, exp_betas):
    out = {("mean", None): mean_exit_profile(op).integral}
    for beta in betas:
        out[("laplace", float(beta))] = laplace_profile(op, beta).integral
    for beta in exp_betas:
        out[("expmoment", float(beta))] = exp_moment_profile(op, beta).integral
    return out


def run_monotonicity(case: MonotonicityCase) -> MonotonicityResult:
    """Compare exit-time integrals for ``a1`` against ``a2`` (with drift ``b``).

    The Laplace and mean-exit integrals for ``a2`` must not exceed those
    for ``a1``; without drift the same holds for exponential moments
    (a divergent moment counts as ``inf``).  The family ``eps * a1`` gives
    sequences that do not increase with ``eps``, and ``eps * sum w E_x tau``
    stays constant.
    """
    grid = build_grid(case.domain)
    d = grid.dimension
    a1 = matrix_field(case.a1, d)
    a2 = matrix_field(case.a2, d)
    margin = certify_order(a1, a2, grid, case.samples, case.seed)
    c1 = CoefficientSet.build(a1, None, dimension=d)
    c2 = CoefficientSet.build(a2, case.b, dimension=d)
    exp_betas = tuple(case.exp_betas) if c2.b.is_zero else ()
    v1 = _integrals(assemble_generator(c1, grid), case.betas, exp_betas)
    v2 = _integrals(assemble_generator(c2, grid), case.betas, exp_betas)
    orderings = [Ordering(q, beta, v1[(q, beta)], v2[(q, beta)]) for (q, beta) in v1]

    eps_list = sorted(float(e) for e in case.epsilons)
    sequences = {key: [] for key in _keys(case.betas, case.exp_betas)}
    products = []
    for eps in eps_list:
        op = assemble_generator(CoefficientSet.build(a1.scaled(eps), None, dimension=d), grid)
        vals = _integrals(op, case.betas, case.exp_betas)
        for key in sequences:
            sequences[key].append(vals[key])
        products.append(eps * vals[("mean", None)])
    return MonotonicityResult(margin, orderings, sequences, products)


def _keys(betas, exp_betas):
    return [("mean", None)] + [("laplace", float(b)) for b in betas] + [("expmoment", float(b)) for b in exp_betas]


@dataclass
class ExhaustionResult:
    """Restricted saddle values over an exhaustion ``D_1 ⊆ D_2 ⊆ ...`` of a target grid."""

    parameters: list
    values: list
    support_sizes: list

    @property
    def max_increase(self):
        """Largest step-to-step increase (zero or less when the values never increase)."""
        v = np.asarray(self.values)
        return float(np.max(np.diff(v))) if v.size > 1 else 0.0


def run_exhaustion(c: CoefficientSet, domain: DomainSpec, count: int, rule: str = "shrink", start: int = 3,
                   beta: float = 0.0, xi=1.0) -> ExhaustionResult:
    """Saddle values with trial functions supported in each member of the sequence.

    All members share the node layout of ``domain``, so the restriction is
    a support mask on one assembled operator.
    """
    from .geometry import make_domain_sequence
    from .variational import TrialSpaceSpec, saddle_direct

    seq = make_domain_sequence(domain, count, rule, start)
    grid = build_grid(domain)
    op = assemble_generator(c, grid)
    values, sizes = [], []
    for mask in seq.support_masks(grid):
        if not np.any(mask):
            raise ConfigError("an exhaustion member contains no interior node")
        space = TrialSpaceSpec.for_source(op, xi, support=mask)
        values.append(saddle_direct(op, beta, space).value)
        sizes.append(int(np.count_nonzero(mask)))
    return ExhaustionResult(list(seq.parameters), values, sizes)
