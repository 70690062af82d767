"""Feedback tracking strategies under small-cost asymptotics.

Simulate impulse, singular and regular feedback strategies that keep a
controlled position close to a diffusive target, evaluate the cost at level
``eps`` and compare its renormalised value with the limit computed from the
stationary occupation measures, the Markov chain oracle, or closed forms.
"""

from .closed_form import (
    LQSolution,
    MatrixEquationSolution,
    impulse_lower_bound,
    ou_stationary_covariance,
    solve_lq,
    solve_matrix_B,
    verify_w_identity,
)
from .cost_model import (
    CostBreakdown,
    CostSpec,
    EpsilonScaling,
    check_homogeneity,
    derive_exponents,
    eval_cost,
    renormalize,
)
from .domains import EllipsoidDomain, IntervalDomain, LinearField, ProportionalJump, ZeroField
from .experiments import (
    Scenario,
    SweepResult,
    load_scenario,
    run_sweep,
    suboptimality_report,
    validate_scenario,
)
from .sde_engine import TargetModel, TimeFunction, TimeGrid, brownian_increments, simulate_target
from .stationary import (
    OccupationPair,
    TestFunctionSet,
    empirical_occupation,
    integrate_limit_over_time,
    limit_cost,
    markov_chain_oracle,
    separability_residual,
)
from .strategies import (
    ControlledPath,
    ImpulseTriplet,
    RegularPolicy,
    SingularTriplet,
    check_admissibility_impulse,
    check_admissibility_singular,
    check_lyapunov_regular,
    jump_count_diagnostic,
    run_batch,
    run_impulse,
    run_regular,
    run_singular,
)

__version__ = "0.1.0"
