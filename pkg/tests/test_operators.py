import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from conftest import loglog_slope, unit_interval_op
from exitvar.errors import ConfigError, GridMismatchError
from exitvar.fields import CoefficientSet
from exitvar.geometry import DomainSpec, GridFunction, build_grid
from exitvar.operators import adjoint_of, assemble_generator, bilinear_form, weighted_adjoint


def _tridiag(n, lo, mid, hi):
    return sp.diags([np.full(n - 1, lo), np.full(n, mid), np.full(n - 1, hi)], [-1, 0, 1]).toarray()


def test_second_difference_stencil():
    op = unit_interval_op(11)
    h = 0.1
    assert np.allclose(op.Q.toarray(), _tridiag(9, -1, 2, -1) / h**2, rtol=0, atol=1e-10)


def test_centered_drift_stencil():
    gamma, h = 3.0, 0.1
    op = unit_interval_op(11, b=f"constant-drift({gamma})")
    expected = _tridiag(9, -1, 2, -1) / h**2 + _tridiag(9, gamma / (2 * h), 0, -gamma / (2 * h))
    assert np.allclose(op.Q.toarray(), expected, rtol=0, atol=1e-10)


def test_ergodic_with_zero_potential_matches_flux_scheme():
    grid = build_grid(DomainSpec.rectangle((0, 1), (0, 2), (9, 13)))
    a = [["1 + x^2", 0.0], [0.0, "2 + sin(y)"]]
    erg = assemble_generator(CoefficientSet.build(a, V="0", dimension=2), grid, "ergodic")
    flux = assemble_generator(CoefficientSet.build(a, dimension=2), grid)
    assert abs(erg.Q - flux.Q).max() == 0.0


def test_symmetric_generator_is_symmetric_matrix():
    grid = build_grid(DomainSpec.rectangle((0, 1), (0, 1), 17))
    op = assemble_generator(CoefficientSet.build([["1 + x*y", 0.3], [0.3, "2 - x"]], dimension=2), grid)
    assert abs(op.Q - op.Q.T).max() == 0.0
    assert abs(adjoint_of(op).Q - op.Q).max() == 0.0


def test_adjoint_flips_constant_drift():
    op = unit_interval_op(33, b="constant-drift(2)")
    flipped = unit_interval_op(33, b="constant-drift(-2)")
    assert abs(adjoint_of(op).Q - flipped.Q).max() <= 1e-9


def test_adjoint_involution():
    grid = build_grid(DomainSpec.rectangle((0, 1), (0, 1), 17))
    op = assemble_generator(CoefficientSet.build("identity", "rotation", dimension=2), grid)
    back = adjoint_of(adjoint_of(op))
    assert (back.Q != op.Q).nnz == 0
    assert back.scheme == "flux-centered"


def test_adjoint_requires_lebesgue_weights():
    grid = build_grid(DomainSpec.interval(-2, 2, 41))
    op = assemble_generator(CoefficientSet.build(V="x^2"), grid, "ergodic")
    with pytest.raises(ConfigError):
        adjoint_of(op)
    wa = weighted_adjoint(op)
    f, g = np.sin(op.grid.coords[:, 0]), np.cos(op.grid.coords[:, 0])
    assert np.dot(op.weights * f, op.Q @ g) == pytest.approx(np.dot(op.weights * g, wa.Q @ f), rel=1e-13)


def test_constant_annihilation_away_from_boundary():
    grid = build_grid(DomainSpec.rectangle((-1, 1), (-1, 1), 25))
    op = assemble_generator(CoefficientSet.build([["1 + x^2", 0.2], [0.2, 1.5]], "rotation", dimension=2), grid)
    touches = np.asarray(abs(op.boundary_coupling).sum(axis=1)).ravel() > 0
    r = op.Q @ np.ones(op.n)
    assert np.max(np.abs(r[~touches])) <= 1e-12 * abs(op.Q).max()


def test_bilinear_zero_and_sign():
    op = unit_interval_op(65)
    g = np.random.default_rng(0).standard_normal(op.n)
    assert bilinear_form(np.zeros(op.n), g, op, 1.0) == 0.0
    with pytest.raises(ValueError):
        bilinear_form(g, g, op, -1.0)


def test_bilinear_energy_of_parabola():
    errs, hs = [], []
    for n in (33, 65, 129, 257):
        op = unit_interval_op(n)
        f = GridFunction.sample(lambda p: p[:, 0] * (1 - p[:, 0]), op.grid)
        errs.append(abs(bilinear_form(f, f, op, 0.0) - 1 / 3))
        hs.append(op.grid.h[0])
    assert errs[-1] < 1e-4
    assert errs[-1] < errs[0]


def test_grid_mismatch():
    op = unit_interval_op(33)
    other = build_grid(DomainSpec.interval(0, 1, 17))
    f = GridFunction(np.ones(other.n_interior), other)
    with pytest.raises(GridMismatchError):
        bilinear_form(f, f, op, 0.0)


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.5, 1.0, 5.0]), st.booleans())
def test_psd_for_symmetric_generators(seed, beta, two_d):
    rng = np.random.default_rng(seed)
    if two_d:
        grid = build_grid(DomainSpec.rectangle((0, 1), (0, 1), 9))
        c = CoefficientSet.build([[f"{rng.uniform(0.5, 2):.4f} + 0.3*sin(x)", 0.1], [0.1, rng.uniform(0.5, 2)]],
                                 dimension=2)
    else:
        grid = build_grid(DomainSpec.interval(0, 1, 17))
        c = CoefficientSet.build(f"{rng.uniform(0.5, 2):.4f} + 0.4*cos(3*x)")
    op = assemble_generator(c, grid)
    f = rng.standard_normal(op.n)
    assert bilinear_form(f, f, op, beta) >= 0.0


def _random_operator(rng, two_d):
    if two_d:
        grid = build_grid(DomainSpec.rectangle((-1, 1), (-1, 1), 13))
        s = rng.uniform(0.5, 2, 3)
        a = [[f"{s[0]:.5f} + 0.3*sin(x*y)", 0.2 * s[2] - 0.1], [0.2 * s[2] - 0.1, f"{s[1]:.5f}"]]
        c = CoefficientSet.build(a, "rotation", dimension=2)
    else:
        grid = build_grid(DomainSpec.interval(0, 1, 41))
        c = CoefficientSet.build(f"{rng.uniform(0.5, 2):.5f} + 0.4*x", f"constant-drift({rng.uniform(-3, 3):.5f})")
    return assemble_generator(c, grid)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 10.0), st.booleans())
def test_exact_discrete_duality(seed, beta, two_d):
    rng = np.random.default_rng(seed)
    op = _random_operator(rng, two_d)
    f, g = rng.standard_normal(op.n), rng.standard_normal(op.n)
    lhs = bilinear_form(f, g, op, beta)
    rhs = bilinear_form(g, f, adjoint_of(op), beta)
    scale = np.sum(np.abs(op.weights * f * (op.Q @ g + beta * g)))
    assert abs(lhs - rhs) <= 1e-13 * scale


def _bump(p):
    # smooth, supported in the ball of radius 0.4 around the centre
    r2 = np.sum((p - 0.5) ** 2, axis=1) / 0.16
    out = np.zeros(p.shape[0])
    inside = r2 < 1
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@pytest.mark.parametrize("dimension", [1, 2])
def test_direct_adjoint_agrees_with_transpose_at_second_order(dimension):
    if dimension == 1:
        c = CoefficientSet.build("1 + 0.5*sin(pi*x)", "1 + x^2")
        specs = [DomainSpec.interval(0, 1, n) for n in (41, 81, 161, 321)]
    else:
        c = CoefficientSet.build([["1 + 0.3*x*y", 0.2], [0.2, "1.5 + 0.2*cos(x)"]], ["sin(y) + x", "x*y"], dimension=2)
        specs = [DomainSpec.rectangle((0, 1), (0, 1), n) for n in (21, 41, 81, 161)]
    errs, hs = [], []
    for spec in specs:
        grid = build_grid(spec)
        phi = _bump(grid.coords)
        direct = assemble_generator(c, grid, "adjoint-direct")
        trans = assemble_generator(c, grid, "transpose-adjoint")
        errs.append(np.max(np.abs(direct.Q @ phi - trans.Q @ phi)))
        hs.append(grid.h[0])
    assert 1.7 <= loglog_slope(hs, errs) <= 2.3


def test_ergodic_detailed_balance():
    grid = build_grid(DomainSpec.rectangle((-2, 2), (-2, 2), 33))
    op = assemble_generator(CoefficientSet.build([["1 + 0.5*x^2", 0.0], [0.0, 2.0]], V="x^2 + y^4/2", dimension=2),
                            grid, "ergodic")
    P = (sp.diags(op.weights) @ op.Q).tocsr()
    assert abs(P - P.T).max() <= 1e-13 * abs(P).max()


def test_ergodic_rejects_separate_drift():
    grid = build_grid(DomainSpec.interval(-2, 2, 21))
    with pytest.raises(ConfigError):
        assemble_generator(CoefficientSet.build("identity", "constant-drift(1)", "x^2"), grid, "ergodic")
