"""Occurrence-exposure estimation of transition intensities in Markov and
semi-Markov multi-state models, with exact thinning simulation, regularized
fits and Monte-Carlo studies of the estimator."""

__version__ = "0.1.0"

from .intensity import (
    IntensityDomainError,
    IntensityExpr,
    IntensitySyntaxError,
    eval_intensity,
    local_upper_bound,
    parse_intensity,
    to_text,
)
from .model import IntensityModel, ModelError, markov_illness_death, semimarkov_illness_death, synthetic_disability
from .oe import (
    OETable,
    RateFit,
    TimeDurationGrid,
    TimeGrid,
    aggregate_1d,
    aggregate_2d,
    diagonal_slice,
    occupation_probability,
    oe_rates,
    rate_ci_theorem_scale,
)
from .regularized import fused_lasso_fit, lasso_path, tree_fit
from .simulate import CensoringSpec, SimConfig, simulate_cohort, simulate_path
from .trajectory import Cohort, Trajectory

__all__ = [
    "__version__",
    "IntensityDomainError",
    "IntensityExpr",
    "IntensitySyntaxError",
    "eval_intensity",
    "local_upper_bound",
    "parse_intensity",
    "to_text",
    "IntensityModel",
    "ModelError",
    "markov_illness_death",
    "semimarkov_illness_death",
    "synthetic_disability",
    "OETable",
    "RateFit",
    "TimeDurationGrid",
    "TimeGrid",
    "aggregate_1d",
    "aggregate_2d",
    "diagonal_slice",
    "occupation_probability",
    "oe_rates",
    "rate_ci_theorem_scale",
    "fused_lasso_fit",
    "lasso_path",
    "tree_fit",
    "CensoringSpec",
    "SimConfig",
    "simulate_cohort",
    "simulate_path",
    "Cohort",
    "Trajectory",
]
