import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import loglog_slope, unit_interval_op, unit_square_op
from exitvar.errors import SingularSystemError
from exitvar.operators import adjoint_of
from exitvar.poisson import solve_dirichlet


def cosh_solution(x, beta):
    s = np.sqrt(beta)
    return (1 - np.cosh(s * (x - 0.5)) / np.cosh(s / 2)) / beta


def test_parabola_is_reproduced():
    op = unit_interval_op(513)
    u = solve_dirichlet(op, 0.0, 1.0)
    x = op.grid.coords[:, 0]
    assert np.max(np.abs(u.values - x * (1 - x) / 2)) <= 1e-12
    assert float(u.at(np.array([[0.5]]))[0]) == pytest.approx(0.125, abs=1e-12)


def test_shifted_problem_midpoint():
    op = unit_interval_op(513)
    u = solve_dirichlet(op, 1.0, 1.0)
    assert float(u.at(np.array([[0.5]]))[0]) == pytest.approx(1 - 1 / np.cosh(0.5), abs=1e-6)


def test_zero_source_gives_zero():
    op = unit_square_op(17, b="rotation")
    assert np.all(solve_dirichlet(op, 0.5, 0.0).values == 0.0)


def test_residual_contract():
    op = unit_square_op(49, a=[["1 + x^2", 0.3], [0.3, "2 + sin(y)"]], b="rotation")
    xi = np.random.default_rng(3).standard_normal(op.n)
    u = solve_dirichlet(op, 0.5, xi).values
    assert np.max(np.abs(op.shifted(0.5) @ u - xi)) <= 1e-10 * np.max(np.abs(xi))


def test_second_order_convergence_against_cosh_form():
    errs, hs = [], []
    for n in (33, 65, 129, 257, 513):
        op = unit_interval_op(n)
        u = solve_dirichlet(op, 1.0, 1.0).values
        errs.append(np.max(np.abs(u - cosh_solution(op.grid.coords[:, 0], 1.0))))
        hs.append(op.grid.h[0])
    assert 1.7 <= loglog_slope(hs, errs) <= 2.3


def test_inhomogeneous_boundary_values():
    op = unit_interval_op(257)
    # -u'' = 0 with u(0) = 1, u(1) = 3 is the line 1 + 2x
    u = solve_dirichlet(op, 0.0, 0.0, boundary_values=lambda p: 1 + 2 * p[:, 0])
    assert np.allclose(u.values, 1 + 2 * op.grid.coords[:, 0], atol=1e-11)


def test_singular_shift_is_reported():
    op = unit_interval_op(33)
    lam = np.min(np.linalg.eigvalsh(op.Q.toarray()))
    with pytest.raises(SingularSystemError) as info:
        solve_dirichlet(op, -lam, 1.0)
    assert info.value.condition is None or info.value.condition > 1e10


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.5, 1.0, 5.0]))
def test_adjoint_pairing_identity(seed, beta):
    rng = np.random.default_rng(seed)
    op = unit_square_op(17, a=[[rng.uniform(0.5, 2), 0.1], [0.1, rng.uniform(0.5, 2)]],
                        b=f"constant-drift({rng.uniform(-2, 2):.4f}, {rng.uniform(-2, 2):.4f})")
    xi = rng.uniform(0.1, 1.0, op.n)
    w = op.weights
    u = solve_dirichlet(op, beta, xi).values
    ut = solve_dirichlet(adjoint_of(op), beta, xi).values
    assert np.dot(w * ut, xi) == pytest.approx(np.dot(w * u, xi), rel=1e-12)
    one_u = solve_dirichlet(op, beta, 1.0).values
    one_ut = solve_dirichlet(adjoint_of(op), beta, 1.0).values
    assert np.dot(w, one_ut) == pytest.approx(np.dot(w, one_u), rel=1e-12)
