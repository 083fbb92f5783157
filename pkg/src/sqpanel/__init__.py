"""Quantile panel-data estimation with smoothed quantile regression.

Estimators for the coefficients of a balanced panel y_it = b(u_it)'[1, x_it']
+ a_i with individual fixed effects: the plain two-step estimator (fixed
effects first step + quantile regression second step), a smoothed variant
whose differentiable objective admits analytical bias and variance estimates,
analytical and split-panel-jackknife bias corrections, sandwich confidence
intervals, and a seeded Monte Carlo harness.
"""

from .correction import (
    BiasComponents,
    analytically_corrected,
    bias_components,
    jackknife_combination,
    split_panel_jackknife,
)
from .errors import (
    EstimationError,
    InvalidQuantile,
    NoConvergence,
    PanelDataError,
    PanelTooShort,
    RankDeficient,
    SingularDesign,
    SingularSigma,
)
from .inference import (
    InferenceResult,
    InfluenceParts,
    covariance,
    inference_rows,
    influence_terms,
)
from .kernels import Kernel, default_kernel
from .panel import (
    FirstStepFit,
    PanelData,
    fixed_effects_fit,
    load_panel_csv,
    pooled_design,
    split_halves,
    within_transform,
)
from .quantile import canay_estimate, check_loss, quantile_regression
from .simulate import (
    DgpDraw,
    DgpSpec,
    McCell,
    McReport,
    generate_draw,
    generate_panel,
    replication_seed,
    run_monte_carlo,
    true_beta_x,
)
from .sqr import (
    EstimateResult,
    PluginWeights,
    RhoDerivatives,
    SqrConfig,
    loss_derivatives,
    plugin_weights,
    sqr_estimate,
    sqr_gradient,
    sqr_hessian,
    sqr_objective,
)

__version__ = "0.1.0"

__all__ = [
    "BiasComponents",
    "DgpDraw",
    "DgpSpec",
    "EstimateResult",
    "EstimationError",
    "FirstStepFit",
    "InferenceResult",
    "InfluenceParts",
    "InvalidQuantile",
    "Kernel",
    "McCell",
    "McReport",
    "NoConvergence",
    "PanelData",
    "PanelDataError",
    "PanelTooShort",
    "PluginWeights",
    "RankDeficient",
    "RhoDerivatives",
    "SingularDesign",
    "SingularSigma",
    "SqrConfig",
    "analytically_corrected",
    "bias_components",
    "canay_estimate",
    "check_loss",
    "covariance",
    "default_kernel",
    "fixed_effects_fit",
    "generate_draw",
    "generate_panel",
    "inference_rows",
    "influence_terms",
    "jackknife_combination",
    "load_panel_csv",
    "loss_derivatives",
    "plugin_weights",
    "pooled_design",
    "quantile_regression",
    "replication_seed",
    "run_monte_carlo",
    "split_halves",
    "split_panel_jackknife",
    "sqr_estimate",
    "sqr_gradient",
    "sqr_hessian",
    "sqr_objective",
    "true_beta_x",
    "within_transform",
]
