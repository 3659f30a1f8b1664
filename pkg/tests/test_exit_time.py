import numpy as np
import pytest

from conftest import unit_interval_op, unit_square_op
from exitvar.exit_time import (
    exp_moment_finite,
    exp_moment_profile,
    laplace_profile,
    mean_exit_profile,
    principal_eigenvalue,
)
from exitvar.operators import adjoint_of
from exitvar.poisson import solve_dirichlet
from exitvar.variational import TrialSpaceSpec, exp_moment_variational, saddle_direct

MID = np.array([[0.5]])


def torsion_centre(terms=400):
    """Series value of u(1/2, 1/2) for -Laplace u = 1 on the unit square."""
    k = np.arange(1, 2 * terms, 2, dtype=float)
    m, n = np.meshgrid(k, k, indexing="ij")
    signs = np.sin(m * np.pi / 2) * np.sin(n * np.pi / 2)
    return float(np.sum(16 / (np.pi**4 * m * n * (m**2 + n**2)) * signs))


def test_mean_integral_reciprocal_twelve():
    prof = mean_exit_profile(unit_interval_op(1025))
    assert 1 / prof.integral == pytest.approx(12.0, abs=1e-3)
    assert np.all(prof.values.values >= 0)


def test_mean_integral_scales_inversely_with_diffusivity():
    base = mean_exit_profile(unit_square_op(25, a=[["1 + x", 0.0], [0.0, 2.0]])).integral
    for eps in (0.5, 2.0, 4.0):
        scaled = mean_exit_profile(unit_square_op(25, a=[[f"{eps}*(1 + x)", 0.0], [0.0, 2.0 * eps]])).integral
        assert scaled * eps == pytest.approx(base, rel=1e-12)


def test_square_centre_against_series():
    op = unit_square_op(129)
    u = mean_exit_profile(op).at(np.array([[0.5, 0.5]]))[0]
    assert u == pytest.approx(torsion_centre(), abs=2e-5)


def test_laplace_midpoint_and_range():
    prof = laplace_profile(unit_interval_op(513), 1.0)
    assert float(prof.at(MID)[0]) == pytest.approx(1 / np.cosh(0.5), abs=1e-6)
    assert np.all((prof.values.values >= 0) & (prof.values.values <= 1))


def test_laplace_decreases_to_zero_for_large_beta():
    op = unit_interval_op(257)
    mids = [float(laplace_profile(op, b).at(MID)[0]) for b in (1, 10, 100, 1000, 10000)]
    assert np.all(np.diff(mids) < 0) and mids[-1] < 1e-10


def test_laplace_small_beta_limit():
    op = unit_interval_op(257)
    beta = 1e-6
    lap = laplace_profile(op, beta).values.values
    mean = mean_exit_profile(op).values.values
    assert np.max(np.abs((1 - lap) / beta - mean)) <= 1e-6


def test_exp_moment_profile_cosine_form():
    op = unit_interval_op(513)
    prof = exp_moment_profile(op, np.pi**2 / 4)
    assert not prof.diverged
    assert float(prof.at(MID)[0]) == pytest.approx(np.sqrt(2), abs=1e-3)
    assert np.all(prof.values.values >= 1)


def test_exp_moment_divergence_flag():
    op = unit_interval_op(513)
    prof = exp_moment_profile(op, 1.1 * np.pi**2)
    assert prof.diverged and prof.values is None and prof.integral == np.inf
    assert not exp_moment_finite(op, 1.1 * np.pi**2)


def test_exp_moment_small_beta_limit():
    op = unit_interval_op(257)
    beta = 1e-6
    v = exp_moment_profile(op, beta).values.values
    mean = mean_exit_profile(op).values.values
    assert np.max(np.abs((v - 1) / beta - mean)) <= 1e-6


def test_principal_eigenvalue_1d_and_adjoint():
    op = unit_interval_op(513, b="constant-drift(1)")
    res = principal_eigenvalue(op)
    # constant drift shifts the Dirichlet eigenvalue by -b^2/4
    assert res.lambda0 == pytest.approx(-np.pi**2 - 0.25, abs=0.05)
    assert abs(res.lambda0 - principal_eigenvalue(adjoint_of(op)).lambda0) <= 1e-10
    assert res.residual <= 1e-8
    assert np.dot(op.weights, res.eigenvector.values) == pytest.approx(1.0)


def test_principal_eigenvalue_2d_sparse_path():
    op = unit_square_op(65)
    res = principal_eigenvalue(op)
    assert res.method == "shift-invert"
    assert res.lambda0 == pytest.approx(-2 * np.pi**2, abs=0.15)
    dense = principal_eigenvalue(unit_square_op(33), method="dense")
    sparse = principal_eigenvalue(unit_square_op(33), method="shift-invert")
    assert dense.lambda0 == pytest.approx(sparse.lambda0, rel=1e-10)


def test_integral_duality():
    op = unit_square_op(33, a=[[1.2, 0.3], [0.3, 0.8]], b="rotation")
    for beta in (0.0, 0.5, 5.0):
        u = solve_dirichlet(op, beta, 1.0).values
        ut = solve_dirichlet(adjoint_of(op), beta, 1.0).values
        assert np.dot(op.weights, ut) == pytest.approx(np.dot(op.weights, u), rel=1e-12)


def test_laplace_and_mean_closures():
    op = unit_square_op(33, b="rotation")
    space = TrialSpaceSpec.for_source(op)
    for beta in (0.5, 2.0):
        lhs = beta / laplace_profile(op, beta).integral
        assert lhs == pytest.approx(saddle_direct(op, beta, space).value, rel=1e-9)
    assert 1 / mean_exit_profile(op).integral == pytest.approx(saddle_direct(op, 0.0, space).value, rel=1e-9)


def test_exp_moment_closure_and_regime():
    op = unit_square_op(33, a=[["1 + 0.5*x", 0.0], [0.0, 1.0]])
    lam = principal_eigenvalue(op).lambda0
    for beta in (0.3 * abs(lam), 0.9 * abs(lam)):
        prof = exp_moment_profile(op, beta)
        assert exp_moment_variational(op, beta) == pytest.approx(beta / prof.integral, rel=1e-9)
    assert exp_moment_profile(op, 1.05 * abs(lam)).diverged
    assert exp_moment_variational(op, 1.05 * abs(lam)) == 0.0


def test_drift_monotonicity_hook():
    vals = [laplace_profile(unit_interval_op(257, b=f"constant-drift({g})"), 1.0).integral for g in (0, 0.5, 1, 2, 4)]
    assert np.all(np.diff(vals) <= 1e-10)
