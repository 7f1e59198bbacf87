"""Black-box variational inference laboratory for location-scale Gaussian families."""

from .domain import DomainSpec, in_domain, param_distance, param_distance_sq, project
from .estimators import (
    EstimatorKind,
    MCEstimate,
    analytic_grad_gaussian,
    elbo_estimate,
    estimate,
    expected_grad_norm_sq,
    grad_cfe,
    grad_stl,
    mean_gradient,
)
from .family import STANDARD_GAUSSIAN, BaseDistribution, GradientSample, ScaleKind, VarParams
from .optimizer import (
    DecreasingSchedule,
    FixedSchedule,
    ScheduleKind,
    StepPlan,
    Trace,
    adaptive_decreasing_plan,
    adaptive_fixed_plan,
    bbvi_complexity,
    decreasing_stepsize_plan,
    fixed_stepsize_plan,
    sgd_run,
)
from .targets import GaussianTarget, marginal_params, optimal_params, regularity, worst_case_instance

__version__ = "0.1.0"
