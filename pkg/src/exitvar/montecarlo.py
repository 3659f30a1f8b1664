"""Euler-Maruyama exit-time simulation used as an independent oracle.

Every path draws from its own counter-based stream, a Philox generator
keyed by ``(seed, path index)``, so the samples do not depend on how paths
are split across workers.  Each step consumes ``d + 1`` uniforms: ``d``
mapped to normals by the inverse normal CDF and one for the bridge test.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError, EllipticityError, NumericalError
from .fields import CoefficientSet

WORKERS_ENV = "EXITVAR_WORKERS"
CHUNK = 32768
BLOCK = 256


@dataclass(frozen=True)
class SdeCoefficients:
    """Drift ``b + row-div(a)`` and a factor ``sigma`` with ``sigma sigma^T = 2 a_sym``."""

    coefficients: CoefficientSet
    fd_step: float

    @property
    def dimension(self):
        return self.coefficients.dimension

    @property
    def constant_diffusion(self):
        a = self.coefficients.a
        return all(a.entry(i, j).is_constant for i in range(a.dimension) for j in range(a.dimension))

    def drift(self, x):
        c = self.coefficients
        x = np.atleast_2d(x)
        d = x.shape[1]
        out = c.b(x)
        for i in range(d):
            e = np.zeros(d)
            e[i] = self.fd_step
            for j in range(d):
                entry = c.a.entry(i, j)
                if not entry.is_constant:
                    out[:, j] += (entry(x + e) - entry(x - e)) / (2 * self.fd_step)
        return out

    def sigma(self, x):
        a = self.coefficients.a(np.atleast_2d(x))
        sym = a + np.swapaxes(a, 1, 2)  # = 2 a_sym
        try:
            return np.linalg.cholesky(sym)
        except np.linalg.LinAlgError as exc:
            raise EllipticityError("diffusion matrix not positive definite at a visited point") from exc


def sde_from_generator(c: CoefficientSet, width: float = 1.0) -> SdeCoefficients:
    """SDE coefficients for ``L = div(a grad) + b . grad``.

    The row divergence of ``a`` is taken by centered differences with step
    ``1e-5 * width``.
    """
    return SdeCoefficients(c, 1e-5 * float(width))


@dataclass(frozen=True)
class SimulationPlan:
    dt: float
    n_paths: int
    seed: int = 0
    t_max: float = 10.0
    x0: Optional[tuple] = None
    start: str = "point"  # point | uniform | gibbs
    betas: tuple = ()
    exit_rule: str = "bridge"  # bridge | first-crossing

    def __post_init__(self):
        if not self.dt > 0 or not self.t_max > 0 or self.n_paths < 1:
            raise ConfigError("need dt > 0, t_max > 0 and at least one path")
        if self.start not in ("point", "uniform", "gibbs"):
            raise ConfigError(f"unknown start distribution {self.start!r}")
        if self.start == "point" and self.x0 is None:
            raise ConfigError("point start needs x0")
        if self.exit_rule not in ("bridge", "first-crossing"):
            raise ConfigError(f"unknown exit rule {self.exit_rule!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")


@dataclass
class ExitSamples:
    times: np.ndarray
    capped: np.ndarray
    plan: SimulationPlan

    @property
    def capped_fraction(self):
        return float(np.mean(self.capped))


def path_generator(seed, index):
    """Counter-based stream of path ``index``."""
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(index)))


def _start_points(plan, gens, domain, coefficients):
    d = domain.dimension
    n = len(gens)
    if plan.start == "point":
        return np.tile(np.asarray(plan.x0, dtype=float).reshape(1, d), (n, 1))
    lo, hi = domain.lo, domain.hi
    x = np.empty((n, d))
    if plan.start == "uniform":
        for k, gen in enumerate(gens):
            while True:
                p = lo + (hi - lo) * gen.random(d)
                if domain.contains(p[None, :])[0]:
                    break
            x[k] = p
        return x
    from .ergodic import gibbs_weights
    from .geometry import build_grid

    if coefficients.V is None:
        raise ConfigError("gibbs start needs a potential V")
    grid = build_grid(domain)
    w = gibbs_weights(coefficients.V, grid).full.ravel()
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    for k, gen in enumerate(gens):
        node = min(int(np.searchsorted(cdf, gen.random())), cdf.size - 1)
        jitter = (gen.random(d) - 0.5) * grid.h
        x[k] = np.clip(grid.all_coords[node] + jitter, lo, hi)
    return x


def _simulate_chunk(plan, sde, domain, first, stop):
    gens = [path_generator(plan.seed, i) for i in range(first, stop)]
    n = len(gens)
    d = domain.dimension
    x0 = _start_points(plan, gens, domain, sde.coefficients)
    times = np.zeros(n)
    capped = np.zeros(n, dtype=bool)
    ids = np.flatnonzero(domain.contains(x0))
    xa = x0[ids]
    lo, hi = domain.lo, domain.hi
    sqdt = np.sqrt(plan.dt)
    const_sigma = None
    if sde.constant_diffusion:
        const_sigma = sde.sigma(x0[:1])[0]
        const_var = np.diag(const_sigma @ const_sigma.T) * plan.dt
    elif ids.size:
        sde.sigma(xa)  # SPD check at the start points
    R = np.empty((BLOCK, n, d + 1))
    bridge = plan.exit_rule == "bridge"
    n_steps = int(np.ceil(plan.t_max / plan.dt - 1e-9))
    for k in range(n_steps):
        if ids.size == 0:
            break
        slot = k % BLOCK
        if slot == 0:
            for i in ids:
                R[:, i, :] = gens[i].random((BLOCK, d + 1))
        r = R[slot][ids]
        z = ndtri(np.maximum(r[:, :d], 1e-300))
        if const_sigma is not None:
            noise = z @ const_sigma.T
            var = const_var
        else:
            sig = sde.sigma(xa)
            noise = np.einsum("nij,nj->ni", sig, z)
            var = np.einsum("nij,nij->ni", sig, sig) * plan.dt
        xn = xa + sde.drift(xa) * plan.dt + noise * sqdt
        exited = ~domain.contains(xn)
        if bridge:
            # Brownian-bridge probability of an unobserved crossing of a box face
            survive = np.ones(ids.size)
            for d0, d1 in ((xa - lo, xn - lo), (hi - xa, hi - xn)):
                p = np.exp(-2.0 * np.clip(d0, 0, None) * np.clip(d1, 0, None) / var)
                survive *= np.prod(1.0 - p, axis=1)
            exited |= r[:, d] >= survive
        if exited.any():
            times[ids[exited]] = (k + 1) * plan.dt
            keep = ~exited
            ids = ids[keep]
            xa = xn[keep]
        else:
            xa = xn
    if ids.size:
        times[ids] = plan.t_max
        capped[ids] = True
    return times, capped


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def simulate_exit_times(plan: SimulationPlan, c: CoefficientSet, domain, workers: Optional[int] = None) -> ExitSamples:
    """Simulate ``plan.n_paths`` exit times from ``domain``.

    Paths leaving through a box face between two steps are also detected
    with the Brownian-bridge crossing probability (``exit_rule="bridge"``);
    mask edges use first-crossing detection only.  Paths still inside at
    ``t_max`` are recorded as capped with time ``t_max``.
    """
    if plan.start == "point":
        x0 = np.asarray(plan.x0, dtype=float).reshape(1, -1)
        if x0.shape[1] != domain.dimension or not domain.contains(x0)[0]:
            raise ConfigError(f"start point {plan.x0} is not inside the domain")
    sde = sde_from_generator(c, float(np.max(domain.hi - domain.lo)))
    if plan.start == "point":
        sde.sigma(np.asarray(plan.x0, dtype=float).reshape(1, -1))
    workers = default_workers() if workers is None else max(1, int(workers))
    bounds = [(i, min(i + CHUNK, plan.n_paths)) for i in range(0, plan.n_paths, CHUNK)]
    if workers == 1 or len(bounds) == 1:
        parts = [_simulate_chunk(plan, sde, domain, a, b) for a, b in bounds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_simulate_chunk, plan, sde, domain, a, b) for a, b in bounds]
            parts = [f.result() for f in futures]
    times = np.concatenate([p[0] for p in parts])
    capped = np.concatenate([p[1] for p in parts])
    return ExitSamples(times, capped, plan)


@dataclass
class McEstimate:
    functional: str
    beta: Optional[float]
    estimate: float
    stderr: float
    n_paths: int
    capped_fraction: float
    reliable: bool = True
    note: str = ""


def survival_slope(times, capped, upper=0.2, min_survivors=50):
    """Least-squares slope of ``log P(tau > t)`` over the upper time range.

    The range is where the empirical survival lies between
    ``min_survivors / n`` and ``upper``.  Returns ``(slope, stderr)``.
    """
    n = times.size
    t = np.sort(times[~capped])
    surv = (n - np.arange(1, t.size + 1)) / n
    keep = (surv <= upper) & (surv * n >= min_survivors)
    if np.count_nonzero(keep) < 3:
        raise NumericalError("too few samples in the survival tail to fit a slope")
    tt, ls = t[keep], np.log(surv[keep])
    A = np.vstack([tt, np.ones_like(tt)]).T
    coef, res, *_ = np.linalg.lstsq(A, ls, rcond=None)
    dof = max(tt.size - 2, 1)
    sigma2 = float(np.sum((A @ coef - ls) ** 2)) / dof
    se = np.sqrt(sigma2 / np.sum((tt - tt.mean()) ** 2))
    return float(coef[0]), float(se)


def estimate_functionals(samples, betas: Sequence[float] = (), t_max: Optional[float] = None, *,
                         lambda0: Optional[float] = None, allow_heavy_tail: bool = False):
    """Sample means of ``tau``, ``exp(-beta tau)`` and ``exp(beta tau)`` plus a tail-rate estimate.

    ``samples`` is an ``ExitSamples`` or a plain array of exit times.
    Exponential moments are refused (NaN, ``reliable=False``) for
    ``beta >= 0.8 |lambda0|`` unless ``allow_heavy_tail``; ``lambda0``
    defaults to the survival-slope estimate.
    """
    if isinstance(samples, ExitSamples):
        times, capped = samples.times, samples.capped
        t_max = samples.plan.t_max if t_max is None else t_max
    else:
        times = np.asarray(samples, dtype=float)
        capped = times >= t_max if t_max is not None else np.zeros(times.size, dtype=bool)
    n = times.size
    if n == 0:
        raise ConfigError("no samples")
    if np.all(capped):
        raise NumericalError("all paths hit the time cap")
    frac = float(np.mean(capped))

    def summary(tag, beta, vals, reliable=True, note=""):
        constant = n < 2 or np.all(vals == vals[0])
        se = 0.0 if constant else float(np.std(vals, ddof=1) / np.sqrt(n))
        return McEstimate(tag, beta, float(np.mean(vals)), se, n, frac, reliable, note)

    out = [summary("mean", None, times, frac == 0)]
    slope = None
    try:
        slope, slope_se = survival_slope(times, capped)
        out.append(McEstimate("lambda0", None, slope, slope_se, n, frac, True, "survival log-slope"))
    except NumericalError:
        pass
    lam = lambda0 if lambda0 is not None else slope
    for beta in betas:
        if beta <= 0:
            continue
        out.append(summary("laplace", float(beta), np.exp(-beta * times)))
        near = lam is not None and beta >= 0.8 * abs(lam)
        if near and not allow_heavy_tail:
            out.append(McEstimate("expmoment", float(beta), np.nan, np.nan, n, frac, False,
                                  "refused: beta >= 0.8 |lambda0|"))
            continue
        note = "capped paths present" if frac > 0 else ("beta near |lambda0|" if near else "")
        out.append(summary("expmoment", float(beta), np.exp(beta * times), reliable=not note, note=note))
    return out
