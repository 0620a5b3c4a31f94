"""Simulator for natural policy gradient with quantum mean-estimation oracles on tabular MDPs."""

from .mdp import (
    MdpValidationError,
    SmoothnessConstants,
    SoftmaxPolicy,
    TabularMdp,
    exact_fisher,
    exact_policy_gradient,
    load_mdp,
    objective,
    optimal_objective,
    save_mdp,
    smoothness_constants,
)
from .npg import (
    BoundsReport,
    NumericalDivergenceError,
    RunConfig,
    RunHistory,
    ScheduleConstants,
    bias_bounds,
    inner_loop,
    residual_constants,
    outer_step,
    run_classical_npg,
    run_qnpg,
    schedule_from_epsilon,
    step_sizes,
)
from .quantum import NoiseModel, QueryLedger, qme_plus, qme_simulate, qvariance_reduce

__version__ = "0.1.0"
