"""Sequential Monte Carlo filters for state space models.

Accept-reject, auxiliary and SIR particle filters, four resampling
schemes, a backward simulation smoother, and exact HMM/Kalman oracles
for checking them.
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .core import (
    DiscreteDensity,
    TransitionKernel,
    WeightedParticleSystem,
    bayes_expansion_coefficient,
    bayes_update,
    dobrushin_coefficient,
    kernel_ratio_bounds,
    l1_distance,
    make_psi,
    markov_propagate,
)
from .exact import (
    clt_variance_ar,
    clt_variance_sir,
    forgetting_bound,
    hmm_forward,
    hmm_smoother,
    kalman_filter,
    variance_bound_bounded_psi,
)
from .filter import FilterConfig, FilterTrace, likelihood_estimate, run_filter, sis_run
from .models import DiscreteHmm, LinearGaussianModel, StochasticVolatilityModel, fixture, simulate
from .resample import (
    multinomial_resample,
    resample,
    residual_resample,
    systematic_resample,
    tree_resample,
)
from .smoother import SmoothingDraws, backward_smooth

__all__ = [
    "BACKEND",
    "DiscreteDensity",
    "DiscreteHmm",
    "FilterConfig",
    "FilterTrace",
    "LinearGaussianModel",
    "SmoothingDraws",
    "StochasticVolatilityModel",
    "TransitionKernel",
    "WeightedParticleSystem",
    "backward_smooth",
    "bayes_expansion_coefficient",
    "bayes_update",
    "clt_variance_ar",
    "clt_variance_sir",
    "dobrushin_coefficient",
    "fixture",
    "forgetting_bound",
    "hmm_forward",
    "hmm_smoother",
    "kalman_filter",
    "kernel_ratio_bounds",
    "l1_distance",
    "likelihood_estimate",
    "make_psi",
    "markov_propagate",
    "multinomial_resample",
    "resample",
    "residual_resample",
    "run_filter",
    "simulate",
    "sis_run",
    "systematic_resample",
    "tree_resample",
    "variance_bound_bounded_psi",
]
