"""Config-driven experiment runner.

A run reads one TOML file with the sections ``[experiment]``, ``[domain]``,
``[coefficients]``, ``[numerics]``, ``[mc]`` and ``[output]``, dispatches
to the library and writes a CSV and/or JSON report.

Exit codes: 0 when every verdict is ``pass`` or ``n/a``, 1 when a verdict
fails, 2 for configuration errors and 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, ExitVarError, NumericalError

KINDS = (
    "solve", "saddle", "eig", "laplace", "expmoment", "mc",
    "gamma-sweep", "monotonicity", "exhaustion", "ergodic",
)
FIELDS = ("experiment", "quantity", "value", "stderr", "expected", "tolerance", "verdict")
SECTIONS = ("experiment", "domain", "coefficients", "numerics", "mc", "output")
IDENTITY_TOL = 1e-9


@dataclass
class ReportRow:
    """One reported quantity.

    The verdict is ``n/a`` without an expected value, otherwise ``pass``
    when ``|value - expected| <= tolerance (+ 3 stderr when an error bar
    is present)``.
    """

    experiment: str
    quantity: str
    value: float
    stderr: Optional[float] = None
    expected: Optional[float] = None
    tolerance: Optional[float] = None
    verdict: str = "n/a"

    def judge(self):
        if self.expected is None:
            self.verdict = "n/a"
            return self
        allow = 0.0 if self.tolerance is None else self.tolerance
        if self.stderr is not None and math.isfinite(self.stderr):
            allow += 3.0 * self.stderr
        ok = math.isfinite(self.value) and abs(self.value - self.expected) <= allow
        if math.isinf(self.value) and self.value == self.expected:
            ok = True
        self.verdict = "pass" if ok else "fail"
        return self


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def emit_report(rows, fmt: str, destination, provenance: Optional[dict] = None):
    """Write ``rows`` as CSV (``fmt="csv"``) or JSON (``fmt="json"``) to ``destination``.

    Output is byte-stable: fixed field order, 17 significant digits for CSV
    floats, shortest round-trip floats in JSON and LF line endings.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to emit")
    path = Path(destination)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(FIELDS)
        for r in rows:
            writer.writerow([r.experiment, r.quantity, _fmt(r.value), _fmt(r.stderr), _fmt(r.expected),
                             _fmt(r.tolerance), r.verdict])
        text = buf.getvalue()
    elif fmt == "json":
        doc = {"rows": [{k: getattr(r, k) for k in FIELDS} for r in rows], "provenance": provenance or {}}
        text = json.dumps(doc, indent=2, sort_keys=False) + "\n"
    else:
        raise ConfigError(f"unknown report format {fmt!r}")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise ConfigError(f"cannot write report to {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    kind: str
    name: str
    seed: int
    domain: dict
    coefficients: dict
    numerics: dict
    mc: dict
    output: dict

    def domain_spec(self):
        from .geometry import DomainSpec

        d = self.domain
        shape = d.get("shape", "interval")
        extent = d.get("extent")
        if extent is None:
            raise ConfigError("[domain] needs 'extent'")
        if extent and not isinstance(extent[0], (list, tuple)):
            extent = [extent]
        nodes = d.get("nodes", 129)
        mask = d.get("mask")
        if mask is not None and shape != "masked":
            shape = "masked"
        return DomainSpec(shape, tuple(tuple(e) for e in extent), nodes, mask)

    def coefficient_set(self, dimension, key="a"):
        from .fields import CoefficientSet

        c = self.coefficients
        return CoefficientSet.build(c.get(key, "identity"), c.get("b"), c.get("V"), dimension, c.get("symmetric"))

    def betas(self, default=(0.0,)):
        n = self.numerics
        if "betas" in n:
            return [float(b) for b in n["betas"]]
        if "beta" in n:
            return [float(n["beta"])]
        return list(default)

    def expected_for(self, quantity):
        exp = self.numerics.get("expected", {})
        if not isinstance(exp, dict):
            raise ConfigError("[numerics] 'expected' must be a table of quantity = value")
        base = quantity.split("[", 1)[0]
        for key in (quantity, base):
            if key in exp:
                return float(exp[key]), self._tolerance(key)
        return None, None

    def _tolerance(self, key):
        tol = self.numerics.get("tolerance", 0.0)
        if isinstance(tol, dict):
            return float(tol.get(key, tol.get(key.split("[", 1)[0], 0.0)))
        return float(tol)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc
    return parse_config(raw, Path(path).stem)


def parse_config(raw: dict, default_name="experiment") -> ExperimentConfig:
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    exp = raw.get("experiment", {})
    kind = exp.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"[experiment] kind must be one of {KINDS}, got {kind!r}")
    seed = exp.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    if "domain" not in raw:
        raise ConfigError("config needs a [domain] section")
    return ExperimentConfig(
        kind, str(exp.get("id", default_name)), seed, dict(raw["domain"]), dict(raw.get("coefficients", {})),
        dict(raw.get("numerics", {})), dict(raw.get("mc", {})), dict(raw.get("output", {})),
    )


# ---------------------------------------------------------------------------
# experiment runners; each returns (rows, provenance extras)


def _btag(beta):
    return f"[beta={beta:g}]"


def _xi(cfg, dimension):
    from .expressions import parse_expression

    xi = cfg.numerics.get("xi", 1.0)
    if isinstance(xi, str):
        return parse_expression(xi, dimension)
    return float(xi)


def _probes(cfg, dimension):
    pts = cfg.numerics.get("probe", [])
    if not pts:
        return np.zeros((0, dimension))
    arr = np.atleast_2d(np.asarray(pts, dtype=float))
    if dimension == 1 and arr.shape[0] == 1 and arr.shape[1] != 1:
        arr = arr.T
    if arr.shape[1] != dimension:
        raise ConfigError("probe points must have one coordinate per dimension")
    return arr


def _ptag(p):
    return "(" + ",".join(format(v, "g") for v in p) + ")"


class _Runner:
    def __init__(self, cfg: ExperimentConfig, workers: Optional[int]):
        from .geometry import build_grid

        self.cfg = cfg
        self.workers = workers
        self.spec = cfg.domain_spec()
        self.grid = build_grid(self.spec)
        self.dim = self.spec.dimension
        self.scheme = cfg.numerics.get("scheme", "flux-centered")
        self.rows = []
        self.identity_tol = float(cfg.numerics.get("identity_tol", IDENTITY_TOL))

    def add(self, quantity, value, stderr=None, expected=None, tolerance=None):
        if expected is None:
            expected, tolerance = self.cfg.expected_for(quantity)
        self.rows.append(ReportRow(self.cfg.name, quantity, float(value),
                                   None if stderr is None else float(stderr), expected, tolerance).judge())

    def gap(self, quantity, a, b, tol=None):
        scale = max(abs(a), abs(b))
        g = 0.0 if a == b else abs(a - b) / scale
        self.add(quantity, g, expected=0.0, tolerance=self.identity_tol if tol is None else tol)

    def operator(self, key="a"):
        from .operators import assemble_generator

        return assemble_generator(self.cfg.coefficient_set(self.dim, key), self.grid, self.scheme)

    # -- kinds --------------------------------------------------------------

    def solve(self):
        from .poisson import solve_dirichlet

        op = self.operator()
        xi = _xi(self.cfg, self.dim)
        for beta in self.cfg.betas():
            u = solve_dirichlet(op, beta, xi)
            t = _btag(beta)
            self.add("integral" + t, u.integral())
            self.add("max" + t, float(np.max(np.abs(u.values))))
            for p in _probes(self.cfg, self.dim):
                self.add(f"u{_ptag(p)}{t}", float(u.at(p[None, :])[0]))

    def saddle(self):
        from .variational import TrialSpaceSpec, perturbation_audit, saddle_direct, saddle_from_poisson

        op = self.operator()
        xi = _xi(self.cfg, self.dim)
        trials = int(self.cfg.numerics.get("audit_trials", 100))
        for beta in self.cfg.betas():
            t = _btag(beta)
            space = TrialSpaceSpec.for_source(op, xi)
            direct = saddle_direct(op, beta, space)
            poisson = saddle_from_poisson(op, beta, xi)
            self.add("saddle_value" + t, direct.value)
            self.add("saddle_value_poisson" + t, poisson.value)
            self.gap("saddle_gap" + t, direct.value, poisson.value)
            audit = perturbation_audit(direct, op, beta, space, trials=trials, seed=self.cfg.seed)
            worst = max(audit.max_upper_excess, -audit.min_lower_excess, 0.0)
            self.add("audit_violation" + t, worst, expected=0.0, tolerance=audit.tolerance)

    def eig(self):
        from .exit_time import principal_eigenvalue
        from .operators import adjoint_of

        op = self.operator()
        lam = principal_eigenvalue(op).lambda0
        lam_t = principal_eigenvalue(adjoint_of(op)).lambda0
        self.add("lambda0", lam)
        self.add("lambda0_adjoint", lam_t)
        self.add("lambda0_gap", abs(lam - lam_t), expected=0.0, tolerance=1e-10)

    def laplace(self):
        from .exit_time import laplace_profile
        from .variational import TrialSpaceSpec, saddle_direct

        op = self.operator()
        space = TrialSpaceSpec.for_source(op)
        for beta in self.cfg.betas(default=(1.0,)):
            t = _btag(beta)
            prof = laplace_profile(op, beta)
            self.add("laplace_integral" + t, prof.integral)
            for p in _probes(self.cfg, self.dim):
                self.add(f"laplace{_ptag(p)}{t}", float(prof.at(p[None, :])[0]))
            self.gap("closure_gap" + t, beta / prof.integral, saddle_direct(op, beta, space).value)

    def expmoment(self):
        from .exit_time import exp_moment_profile
        from .variational import exp_moment_variational

        op = self.operator()
        for beta in self.cfg.betas(default=(1.0,)):
            t = _btag(beta)
            prof = exp_moment_profile(op, beta)
            var = exp_moment_variational(op, beta)
            rhs = 0.0 if prof.diverged else beta / prof.integral
            self.add("variational" + t, var)
            self.add("diverged" + t, float(prof.diverged))
            self.add("expmoment_integral" + t, prof.integral)
            for p in _probes(self.cfg, self.dim):
                val = np.inf if prof.diverged else float(prof.at(p[None, :])[0])
                self.add(f"expmoment{_ptag(p)}{t}", val)
            self.gap("closure_gap" + t, var, rhs)

    def mc(self):
        from .montecarlo import SimulationPlan, estimate_functionals, simulate_exit_times

        m = self.cfg.mc
        x0 = m.get("x0")
        plan = SimulationPlan(
            dt=float(m.get("dt", 1e-4)), n_paths=int(m.get("paths", 10000)), seed=self.cfg.seed,
            t_max=float(m.get("t_max", 10.0)), x0=None if x0 is None else tuple(np.atleast_1d(x0).astype(float)),
            start=m.get("start", "point"), betas=tuple(float(b) for b in m.get("betas", self.cfg.betas(()))),
            exit_rule=m.get("exit_rule", "bridge"),
        )
        c = self.cfg.coefficient_set(self.dim)
        samples = simulate_exit_times(plan, c, self.spec, workers=self.workers)
        self.add("capped_fraction", samples.capped_fraction)
        for est in estimate_functionals(samples, plan.betas):
            name = {"mean": "mean_exit", "lambda0": "lambda0_slope"}.get(est.functional, est.functional)
            if est.beta is not None:
                name += _btag(est.beta)
            self.add(name, est.estimate, est.stderr)
        self.extra = {"dt": plan.dt, "paths": plan.n_paths, "exit_rule": plan.exit_rule}

    def gamma_sweep(self):
        from .applications import GammaSweep, run_gamma_sweep

        c = self.cfg.coefficients
        sweep = GammaSweep(c.get("a", "identity"), c.get("b"), [float(g) for g in self.cfg.numerics.get("gammas", [1.0])],
                           self.cfg.betas(default=(1.0,)), self.spec)
        table = run_gamma_sweep(sweep)
        for r in table.rows:
            self.add(f"mean_integral[gamma={r.gamma:g}]", r.mean_integral)
            for beta, v in r.laplace.items():
                self.add(f"laplace_integral[gamma={r.gamma:g},beta={beta:g}]", v)
        self.add("max_symmetry_gap", table.max_symmetry_gap, expected=0.0, tolerance=1e-10)
        self.add("monotonicity_violation", max(0.0, -table.min_margin), expected=0.0, tolerance=1e-10)

    def monotonicity(self):
        from .applications import MonotonicityCase, run_monotonicity

        c = self.cfg.coefficients
        n = self.cfg.numerics
        if "a2" not in c:
            raise ConfigError("monotonicity needs coefficients 'a' and 'a2'")
        case = MonotonicityCase(
            c.get("a", "identity"), c["a2"], self.spec, tuple(self.cfg.betas(default=(1.0,))), c.get("b"),
            tuple(float(b) for b in n.get("exp_betas", [])), tuple(float(e) for e in n.get("epsilons", [0.5, 1, 2, 4])),
            seed=self.cfg.seed,
        )
        res = run_monotonicity(case)
        self.add("certification_margin", res.certification_margin)
        for o in res.orderings:
            tag = "" if o.beta is None else _btag(o.beta)
            self.add(f"{o.quantity}_a1{tag}", o.upper)
            self.add(f"{o.quantity}_a2{tag}", o.lower)
        self.add("ordering_violations", float(sum(not o.holds for o in res.orderings)), expected=0.0, tolerance=0.0)
        self.add("epsilon_monotone", float(res.epsilon_monotone), expected=1.0, tolerance=0.0)
        self.add("scaling_spread", res.scaling_spread, expected=0.0, tolerance=1e-10)

    def exhaustion(self):
        from .applications import run_exhaustion

        n = self.cfg.numerics
        res = run_exhaustion(
            self.cfg.coefficient_set(self.dim), self.spec, int(n.get("count", 10)), n.get("rule", "shrink"),
            int(n.get("start", 3)), float(self.cfg.betas()[0]), _xi(self.cfg, self.dim),
        )
        for p, v in zip(res.parameters, res.values):
            self.add(f"restricted_value[n={p:g}]", v)
        self.add("max_increase", max(res.max_increase, 0.0), expected=0.0, tolerance=1e-10)
        self.add("final_value", res.values[-1])

    def ergodic(self):
        from .ergodic import ergodic_report

        rep = ergodic_report(self.cfg.coefficient_set(self.dim), self.spec, self.cfg.betas(default=(1.0,)))
        self.add("Z", rep.Z)
        if rep.truncation_change is not None:
            self.add("Z_truncation_change", rep.truncation_change)
        self.add("mean_exit_pi", rep.mean_exit)
        self.add("lambda0", rep.lambda0)
        if rep.detailed_balance is not None:
            self.add("detailed_balance", rep.detailed_balance, expected=0.0, tolerance=1e-13)
        for chk in rep.checks:
            self.add(f"{chk.name}_lhs{_btag(chk.beta)}", chk.lhs)
            self.add(f"{chk.name}_gap{_btag(chk.beta)}", chk.gap, expected=0.0, tolerance=self.identity_tol)

    def run(self):
        self.extra = {}
        getattr(self, self.cfg.kind.replace("-", "_"))()
        return self.rows

    def provenance(self):
        prov = {
            "experiment": self.cfg.name,
            "kind": self.cfg.kind,
            "h": [float(v) for v in self.grid.h],
            "nodes": list(self.spec.nodes),
            "extent": [list(e) for e in self.spec.extent],
            "scheme": "ergodic" if self.cfg.kind == "ergodic" else self.scheme,
            "seed": self.cfg.seed,
        }
        prov.update(self.extra)
        return prov


def resolved_plan(cfg: ExperimentConfig) -> dict:
    """Everything the run would use, after defaults; validates the coefficients on the grid."""
    from .fields import validate_coefficients
    from .geometry import build_grid

    spec = cfg.domain_spec()
    grid = build_grid(spec)
    keys = ("a", "a2") if cfg.kind == "monotonicity" else ("a",)
    for key in keys:
        validate_coefficients(cfg.coefficient_set(spec.dimension, key), grid,
                              check_peclet=cfg.kind not in ("ergodic", "mc"))
    plan = asdict(cfg)
    plan["grid"] = {"h": [float(v) for v in grid.h], "interior_nodes": grid.n_interior}
    return plan


def _output_paths(cfg, output_dir):
    out = cfg.output
    fmt = out.get("format", "csv")
    formats = ("csv", "json") if fmt == "both" else (fmt,)
    for f in formats:
        if f not in ("csv", "json"):
            raise ConfigError(f"unknown output format {f!r}")
    stem = Path(out.get("path", cfg.name))
    base = Path(output_dir) if output_dir is not None else Path(out.get("dir", "."))
    target = stem if stem.is_absolute() and output_dir is None else base / stem.name
    return [(f, target.with_suffix("." + f)) for f in formats]


def run_experiment(config_path, *, dry_run=False, workers=None, output_dir=None, seed=None, stdout=None) -> int:
    """Run one config; returns the process exit code."""
    stdout = sys.stdout if stdout is None else stdout
    try:
        cfg = load_config(config_path)
        if seed is not None:
            if seed < 0:
                raise ConfigError("seed must be non-negative")
            cfg.seed = seed
        if workers is not None and workers < 1:
            raise ConfigError("--workers must be at least 1")
        outputs = _output_paths(cfg, output_dir)
        if dry_run:
            plan = resolved_plan(cfg)
            plan["outputs"] = [str(p) for _, p in outputs]
            print(json.dumps(plan, indent=2, default=str), file=stdout)
            return 0
        runner = _Runner(cfg, workers)
        rows = runner.run()
        prov = runner.provenance()
        for fmt, path in outputs:
            path.parent.mkdir(parents=True, exist_ok=True)
            emit_report(rows, fmt, path, prov)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except ExitVarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    failed = [r for r in rows if r.verdict == "fail"]
    for r in rows:
        print(f"{r.quantity:40s} {_fmt(r.value):>24s}  {r.verdict}", file=stdout)
    return 1 if failed else 0


def build_parser():
    p = argparse.ArgumentParser(prog="exitvar", description="Run an exit-time experiment from a TOML config.")
    p.add_argument("config", help="path to the experiment config (TOML)")
    p.add_argument("--dry-run", action="store_true", help="validate and print the resolved plan; write nothing")
    p.add_argument("--workers", type=int, default=None, help="worker processes for Monte Carlo runs")
    p.add_argument("--output-dir", default=None, help="directory for report files (overrides [output])")
    p.add_argument("--seed", type=int, default=None, help="override [experiment] seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run_experiment(args.config, dry_run=args.dry_run, workers=args.workers,
                          output_dir=args.output_dir, seed=args.seed)


if __name__ == "__main__":
    sys.exit(main())
