import numpy as np
import pytest

from exitvar.errors import ConfigError, EllipticityError, NumericalError
from exitvar.fields import CoefficientSet
from exitvar.geometry import DomainSpec
from exitvar.montecarlo import (
    SimulationPlan,
    estimate_functionals,
    path_generator,
    sde_from_generator,
    simulate_exit_times,
)

UNIT = DomainSpec.interval(0, 1, 65)


def test_identity_diffusion_factor():
    sde = sde_from_generator(CoefficientSet.build(dimension=2))
    x = np.array([[0.3, 0.4]])
    assert np.allclose(sde.sigma(x)[0], np.sqrt(2) * np.eye(2))
    assert np.allclose(sde.drift(x), 0)


def test_divergence_drift_from_variable_matrix():
    sde = sde_from_generator(CoefficientSet.build([["1 + x^2", 0.0], [0.0, 1.0]], dimension=2))
    x = np.array([[0.3, 0.7], [-1.2, 0.1]])
    assert np.allclose(sde.drift(x), np.column_stack([2 * x[:, 0], np.zeros(2)]), atol=1e-6)


def test_scaled_identity_factor():
    sde = sde_from_generator(CoefficientSet.build([[0.25, 0.0], [0.0, 0.25]], dimension=2))
    assert np.allclose(sde.sigma(np.zeros((1, 2)))[0], np.sqrt(0.5) * np.eye(2))


def test_degenerate_diffusion_rejected():
    plan = SimulationPlan(dt=1e-3, n_paths=10, x0=(0.5,))
    with pytest.raises(EllipticityError):
        simulate_exit_times(plan, CoefficientSet.build([[0.0]], dimension=1), UNIT)


def test_start_outside_domain_rejected():
    plan = SimulationPlan(dt=1e-3, n_paths=10, x0=(1.5,))
    with pytest.raises(ConfigError):
        simulate_exit_times(plan, CoefficientSet.build(dimension=1), UNIT)


def test_plan_validation():
    with pytest.raises(ConfigError):
        SimulationPlan(dt=0.0, n_paths=10, x0=(0.5,))
    with pytest.raises(ConfigError):
        SimulationPlan(dt=1e-3, n_paths=10)
    with pytest.raises(ConfigError):
        SimulationPlan(dt=1e-3, n_paths=10, x0=(0.5,), exit_rule="reflect")


def test_path_streams_are_independent_of_batching():
    c = CoefficientSet.build(dimension=1)
    small = simulate_exit_times(SimulationPlan(dt=1e-3, n_paths=50, seed=3, x0=(0.5,)), c, UNIT, workers=1)
    large = simulate_exit_times(SimulationPlan(dt=1e-3, n_paths=200, seed=3, x0=(0.5,)), c, UNIT, workers=1)
    assert np.array_equal(small.times, large.times[:50])
    g1, g2 = path_generator(3, 7), path_generator(3, 7)
    assert np.array_equal(g1.random(5), g2.random(5))


def test_worker_count_does_not_change_samples():
    c = CoefficientSet.build(dimension=1)
    plan = SimulationPlan(dt=1e-2, n_paths=70000, seed=11, x0=(0.5,))
    one = simulate_exit_times(plan, c, UNIT, workers=1)
    two = simulate_exit_times(plan, c, UNIT, workers=2)
    assert np.array_equal(one.times, two.times) and np.array_equal(one.capped, two.capped)


def test_bridge_correction_reduces_bias():
    c = CoefficientSet.build(dimension=1)
    means = {}
    for rule in ("bridge", "first-crossing"):
        for dt in (4e-3, 1e-3):
            plan = SimulationPlan(dt=dt, n_paths=20000, seed=5, x0=(0.5,), exit_rule=rule)
            means[rule, dt] = estimate_functionals(simulate_exit_times(plan, c, UNIT, workers=1))[0].estimate
    bias = {k: v - 0.125 for k, v in means.items()}
    assert bias["first-crossing", 4e-3] / bias["first-crossing", 1e-3] > 1.5
    assert abs(bias["bridge", 4e-3]) < 0.25 * bias["first-crossing", 4e-3]


def test_constant_samples_have_zero_error():
    est = estimate_functionals(np.full(10, 0.3), betas=[1.0], lambda0=-10.0)
    assert all(e.stderr == 0 for e in est if e.functional in ("mean", "laplace"))
    assert est[0].estimate == pytest.approx(0.3)


def test_heavy_tail_moment_refused():
    times = np.random.default_rng(0).exponential(0.1, 1000)
    est = estimate_functionals(times, betas=[9.0], lambda0=-10.0)
    moment = [e for e in est if e.functional == "expmoment"][0]
    assert np.isnan(moment.estimate) and not moment.reliable
    forced = estimate_functionals(times, betas=[9.0], lambda0=-10.0, allow_heavy_tail=True)
    assert np.isfinite([e for e in forced if e.functional == "expmoment"][0].estimate)


def test_all_capped_is_an_error():
    with pytest.raises(NumericalError):
        estimate_functionals(np.full(5, 2.0), t_max=2.0)


def test_survival_slope_of_exponential_sample():
    times = np.random.default_rng(1).exponential(1 / 5.0, 200000)
    est = {e.functional: e for e in estimate_functionals(times)}
    assert est["lambda0"].estimate == pytest.approx(-5.0, rel=0.05)
