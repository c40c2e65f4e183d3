"""Ornstein-Uhlenbeck process with compensated unit Poisson jumps.

Exact simulation, Poisson-mixture transition density, maximum likelihood
fitting and Monte-Carlo checks of the local asymptotic normality limit.
"""

from jumpou.core import (
    DiscretePath,
    FisherInfo,
    JumpRecord,
    LocalAlternative,
    ModelParams,
    SamplingScheme,
    fisher_info,
    fisher_matrix,
    invariant_moments,
    lan_limit_moments,
    rate_matrix,
)
from jumpou.density import (
    JumpPosterior,
    MixtureConfig,
    jump_posterior,
    log_density_grad,
    log_transition_density,
    q0,
    qj_given_times,
    qj_marginal,
    transition_cdf,
    transition_density,
)
from jumpou.inference import (
    FitConfig,
    FitReport,
    fit_mle,
    log_likelihood,
    log_likelihood_ratio,
    observed_information,
    score,
)
from jumpou.simulate import RngStream, TransitionDraw, sample_transition, simulate_path

__version__ = "0.1.0"

__all__ = [
    "DiscretePath",
    "FisherInfo",
    "FitConfig",
    "FitReport",
    "JumpPosterior",
    "JumpRecord",
    "LocalAlternative",
    "MixtureConfig",
    "ModelParams",
    "RngStream",
    "SamplingScheme",
    "TransitionDraw",
    "fisher_info",
    "fisher_matrix",
    "fit_mle",
    "invariant_moments",
    "jump_posterior",
    "lan_limit_moments",
    "log_density_grad",
    "log_likelihood",
    "log_likelihood_ratio",
    "log_transition_density",
    "observed_information",
    "q0",
    "qj_given_times",
    "qj_marginal",
    "rate_matrix",
    "sample_transition",
    "score",
    "simulate_path",
    "transition_cdf",
    "transition_density",
]
