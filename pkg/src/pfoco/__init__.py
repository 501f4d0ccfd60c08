"""Projection-free online convex optimization with time-varying soft constraints."""

from .afp import AfpResult, afp, loo_call_bound, separating_fw
from .errors import ConfigurationError, InputError, NumericError
from .geometry import (
    Ball, Box, Dag, FlowPolytope, PSDCone, Simplex, loo_minimize, membership,
    min_eigenpair, project_ball, shrink,
)
from .learners import (
    LearnerTrace, ParameterSchedule, default_schedule, minimize_h, run_bandit, run_dpp,
    run_primal_dual, sample_unit_sphere,
)
from .metrics import RunMetrics, fit_exponent, regret, summarize, violation
from .problems import (
    ProblemInstance, gen_capacitated_flow, gen_planted_quadratic, gen_psd_affine,
    subgradient_gplus,
)

__version__ = "0.1.0"
