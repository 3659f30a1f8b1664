"""Exit times of divergence-form diffusions through their variational principles.

The package discretizes ``L = div(a grad) + b . grad`` on structured grids,
solves the associated Poisson problems, evaluates the inf-sup and minimum
characterizations of exit-time functionals and cross-checks them with a
Monte Carlo simulator.
"""

from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateSourceError,
    EllipticityError,
    ExitVarError,
    ExpressionSyntaxError,
    GridMismatchError,
    NumericalError,
    PecletError,
    SingularSystemError,
)
from .expressions import parse_expression
from .fields import CoefficientSet, matrix_field, scalar_field, validate_coefficients, vector_field
from .geometry import DomainSpec, GridFunction, StructuredGrid, build_grid, make_domain_sequence
from .operators import DiscreteOperator, adjoint_of, assemble_generator, bilinear_form, weighted_adjoint
from .poisson import solve_dirichlet
from .variational import (
    TrialSpaceSpec,
    evaluate_minimax_functional,
    exp_moment_variational,
    minimum_direct,
    perturbation_audit,
    saddle_direct,
    saddle_from_poisson,
)
from .exit_time import (
    exp_moment_profile,
    laplace_profile,
    mean_exit_profile,
    principal_eigenvalue,
)
from .ergodic import ergodic_report, gibbs_weights
from .montecarlo import SimulationPlan, estimate_functionals, simulate_exit_times
from .applications import GammaSweep, MonotonicityCase, run_exhaustion, run_gamma_sweep, run_monotonicity

__version__ = "0.1.0"
