"""Bayesian penalized transformation regression.

A location-scale regression model whose residual distribution is learned
through a monotone, slope-normalized spline transformation to a Gaussian
reference.  Structured additive predictors for location and log-scale,
regularizing smoothness priors, and a blockwise MCMC sampler (iteratively
weighted least squares proposals for the predictor blocks, conjugate variance
updates, and a no-U-turn sampler for the transformation block).
"""

from .mcmc import InitializationError, KernelConfig, initialize, run_chains
from .model import (
    CENS_INTERVAL,
    CENS_LEFT,
    CENS_NONE,
    CENS_RIGHT,
    LikelihoodError,
    Model,
    ModelConfig,
    ModelState,
    build_model,
    log_posterior,
    loglik,
    nuts_value_grad,
)
from .posterior import (
    PosteriorSamples,
    diagnostics_report,
    ess,
    predictive_cdf,
    predictive_pdf,
    predictive_quantile,
    rhat,
    stack_chains,
    summarize,
)
from .predictor import AdditivePredictor, Term, TermSpec, build_term, term_design
from .priors import (
    QuadratureError,
    Reparam,
    diff_penalty,
    prior_predictive_tv,
    tv_distance,
    whiten_penalty,
)
from .simlab import DataScenario, ScorePanel, covariate_surfaces, gen_residuals, simulate_dataset
from .splinecore import DomainError, GeometryError, KnotGrid, build_knots
from .transform import (
    InverseConvergenceError,
    TransformConfig,
    TransformParams,
    deriv_batch,
    forward_batch,
    inverse_batch,
    make_config,
    refresh_cache,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # transformation
    "TransformConfig",
    "TransformParams",
    "make_config",
    "refresh_cache",
    "forward_batch",
    "deriv_batch",
    "inverse_batch",
    "InverseConvergenceError",
    "KnotGrid",
    "build_knots",
    "GeometryError",
    "DomainError",
    # priors and calibration
    "diff_penalty",
    "whiten_penalty",
    "Reparam",
    "tv_distance",
    "prior_predictive_tv",
    "QuadratureError",
    # predictors and model
    "TermSpec",
    "Term",
    "build_term",
    "term_design",
    "AdditivePredictor",
    "Model",
    "ModelConfig",
    "ModelState",
    "build_model",
    "loglik",
    "log_posterior",
    "nuts_value_grad",
    "LikelihoodError",
    # sampling
    "KernelConfig",
    "initialize",
    "run_chains",
    "InitializationError",
    # posterior
    "PosteriorSamples",
    "stack_chains",
    "predictive_cdf",
    "predictive_pdf",
    "predictive_quantile",
    "summarize",
    "rhat",
    "ess",
    "diagnostics_report",
    # simulation lab
    "DataScenario",
    "ScorePanel",
    "gen_residuals",
    "covariate_surfaces",
    "simulate_dataset",
]
