import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from exitvar.fields import CoefficientSet
from exitvar.geometry import DomainSpec, build_grid
from exitvar.operators import assemble_generator

settings.register_profile(
    "exitvar", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("exitvar")


def unit_interval_op(nodes=513, a="identity", b=None, scheme="flux-centered"):
    grid = build_grid(DomainSpec.interval(0.0, 1.0, nodes))
    return assemble_generator(CoefficientSet.build(a, b, dimension=1), grid, scheme)


def unit_square_op(nodes=33, a="identity", b=None, scheme="flux-centered"):
    grid = build_grid(DomainSpec.rectangle((0.0, 1.0), (0.0, 1.0), nodes))
    return assemble_generator(CoefficientSet.build(a, b, dimension=2), grid, scheme)


def loglog_slope(hs, errs):
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


@pytest.fixture
def op1d():
    return unit_interval_op()
