import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import unit_interval_op, unit_square_op
from exitvar.errors import ConfigError, DegenerateSourceError
from exitvar.exit_time import exp_moment_profile, principal_eigenvalue
from exitvar.geometry import GridFunction
from exitvar.operators import bilinear_form
from exitvar.variational import (
    TrialSpaceSpec,
    evaluate_minimax_functional,
    exp_moment_variational,
    minimum_direct,
    perturbation_audit,
    saddle_direct,
    saddle_from_poisson,
)


def test_mean_exit_saddle_value():
    op = unit_interval_op(513)
    s = saddle_from_poisson(op, 0.0)
    h = op.grid.h[0]
    # sum_i h x_i (1 - x_i) / 2 = (1 - h^2) / 12 for the exact nodal parabola
    assert s.value == pytest.approx(12 / (1 - h**2), rel=1e-12)
    assert np.max(np.abs(s.g.values)) == 0.0
    assert abs(s.residuals["f_constraint"]) <= 1e-10 and abs(s.residuals["g_constraint"]) <= 1e-10


def _drift_value(gamma):
    return saddle_from_poisson(unit_interval_op(513, b=f"constant-drift({gamma})"), 0.0).value


def test_drift_sign_symmetry_and_magnitude():
    from scipy.integrate import quad

    v_plus, v_minus = _drift_value(2.0), _drift_value(-2.0)
    assert abs(v_plus - v_minus) <= 1e-10 * v_plus
    g = 2.0
    exact = quad(lambda x: (1 / g) * ((1 - np.exp(-g * x)) / (1 - np.exp(-g)) - x), 0, 1)[0]
    assert v_plus == pytest.approx(1 / exact, rel=1e-4)


def test_degenerate_source():
    # with beta >= 0 the pairing sum w u xi is positive unless xi vanishes
    op = unit_interval_op(65)
    with pytest.raises(DegenerateSourceError):
        saddle_from_poisson(op, 0.0, 0.0)


def test_minimax_functional_basic_identities():
    op = unit_interval_op(65, b="constant-drift(1)")
    rng = np.random.default_rng(0)
    f, g = rng.standard_normal(op.n), rng.standard_normal(op.n)
    assert evaluate_minimax_functional(f, np.zeros(op.n), op, 0.5) == pytest.approx(bilinear_form(f, f, op, 0.5))
    assert evaluate_minimax_functional(g, g, op, 0.5) == 0.0
    s = saddle_from_poisson(op, 0.5)
    assert evaluate_minimax_functional(s.f, s.g, op, 0.5) == pytest.approx(s.value, rel=1e-10)


@pytest.mark.parametrize("beta", [0.0, 1.0])
def test_direct_matches_poisson_2d(beta):
    op = unit_square_op(41, a=[["1 + 0.5*x*y", 0.25], [0.25, "1.5"]], b="rotation")
    xi = GridFunction.sample(lambda p: 1 + 0.5 * np.sin(np.pi * p[:, 0]), op.grid)
    direct = saddle_direct(op, beta, TrialSpaceSpec.for_source(op, xi))
    pois = saddle_from_poisson(op, beta, xi)
    assert abs(direct.value - pois.value) <= 1e-9 * pois.value
    assert np.max(np.abs(direct.f.values - pois.f.values)) <= 1e-7 * np.max(np.abs(pois.f.values))


def test_symmetric_collapse():
    op = unit_square_op(25, a=[["1 + x^2", 0.2], [0.2, 1.0]])
    space = TrialSpaceSpec.for_source(op)
    direct = saddle_direct(op, 0.5, space)
    mini = minimum_direct(op, 0.5, space)
    assert np.sqrt(np.dot(op.weights, direct.g.values**2)) <= 1e-10
    assert direct.value == pytest.approx(mini.value, rel=1e-10)


def test_audit_at_the_saddle_and_with_perturbations():
    op = unit_interval_op(257, b="constant-drift(1.5)")
    space = TrialSpaceSpec.for_source(op)
    s = saddle_from_poisson(op, 0.5)
    zero = perturbation_audit(s, op, 0.5, space, trials=0)
    assert abs(zero.max_upper_excess) <= 1e-10 and abs(zero.min_lower_excess) <= 1e-10
    rep = perturbation_audit(s, op, 0.5, space, trials=100, seed=4)
    assert rep.passed
    assert rep.max_upper_excess < 0 < rep.min_lower_excess


def test_audit_detects_a_wrong_value():
    op = unit_interval_op(129, b="constant-drift(1)")
    space = TrialSpaceSpec.for_source(op)
    s = saddle_from_poisson(op, 0.0)
    s.value += 1e-6
    assert not perturbation_audit(s, op, 0.0, space, trials=0).passed


def test_exhaustion_values_non_increasing():
    op = unit_interval_op(257)
    x = op.grid.coords[:, 0]
    values = []
    for m in np.linspace(0.3, 0.0, 7):
        space = TrialSpaceSpec.for_source(op, support=(x > m) & (x < 1 - m))
        values.append(saddle_direct(op, 0.0, space).value)
    assert np.all(np.diff(values) <= 1e-12 * np.abs(values[:-1]))
    assert values[-1] == pytest.approx(12.0, abs=1e-3)


def test_exp_moment_finite_branch_matches_cosine_form():
    op = unit_interval_op(513)
    beta = np.pi**2 / 4
    s = np.sqrt(beta)
    integral = (2 / s) * np.tan(s / 2) - 1.0  # int (v - 1) with v = cos(s (x - 1/2)) / cos(s / 2)
    val = exp_moment_variational(op, beta)
    assert val == pytest.approx(beta / integral, rel=1e-4)
    prof = exp_moment_profile(op, beta)
    assert abs(val - beta / prof.integral) <= 1e-9 * val


def test_exp_moment_indefinite_branch_is_zero():
    op = unit_interval_op(513)
    assert exp_moment_variational(op, 1.1 * np.pi**2) == 0.0


def test_exp_moment_small_beta_limit():
    op = unit_interval_op(257)
    assert exp_moment_variational(op, 1e-6) == pytest.approx(saddle_from_poisson(op, 0.0).value, rel=1e-5)


def test_exp_moment_requires_symmetric_operator():
    with pytest.raises(ConfigError):
        exp_moment_variational(unit_interval_op(33, b="constant-drift(1)"), 1.0)


@given(st.floats(0.05, 1.6))
def test_regime_switch_matches_eigenvalue(ratio):
    op = unit_interval_op(65, a="1 + 0.5*x")
    lam = principal_eigenvalue(op).lambda0
    beta = ratio * abs(lam)
    if abs(ratio - 1) < 1e-6:
        return
    val = exp_moment_variational(op, beta)
    assert (val > 0) == (beta < abs(lam))


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.5, 1.0, 5.0]))
def test_value_identity_random_1d(seed, beta):
    rng = np.random.default_rng(seed)
    op = unit_interval_op(65, a=f"{rng.uniform(0.5, 2):.5f} + 0.3*sin(pi*x)",
                          b=f"constant-drift({rng.uniform(-3, 3):.5f})")
    direct = saddle_direct(op, beta, TrialSpaceSpec.for_source(op))
    pois = saddle_from_poisson(op, beta)
    assert abs(direct.value - pois.value) <= 1e-9 * pois.value
