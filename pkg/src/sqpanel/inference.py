"""Sandwich covariance and confidence intervals for the two-step estimators.

The influence term of each observation combines three pieces: the kernel
plug-in score, the per-individual intercept-noise channel, and the channel
through the first-step slope estimate. Their second-moment matrix, bread-ed
by the inverse curvature matrix, yields a variance that accounts for the
estimated fixed effects, unlike the naive quantile-regression sandwich.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace

import numpy as np
from scipy.stats import norm

from .correction import _solve_sigma, curvature_matrix
from .errors import SingularDesign
from .panel import FirstStepFit, PanelData, pooled_design
from .quantile import require_quantile
from .sqr import EstimateResult, SqrConfig, plugin_weights

Array = np.ndarray


@dataclass
class InfluenceParts:
    """Per-cell influence terms plus the matrices used to build them."""

    z: Array           # (N, T, d+1)
    gamma_hat: Array   # (N, d+1) per-individual density-weighted design means
    a_matrix: Array    # (d+1, d) coupling to the first-step slope noise
    b_matrix: Array    # (d, d) within Gram matrix / NT


@dataclass
class InferenceResult:
    """Covariance matrices, standard errors, and normal-theory intervals.

    ``sandwich`` is sigma_hat^{-1} omega_hat sigma_hat^{-1}; standard errors
    are sqrt(diag(sandwich)/NT). The same variance serves any of the point
    estimators (corrected or not); use ``with_estimates`` to recenter.
    """

    sigma_hat: Array
    omega_hat: Array
    sandwich: Array
    std_errors: Array
    estimates: Array
    ci_lower: Array
    ci_upper: Array
    level: float

    def with_estimates(self, estimates: Array) -> "InferenceResult":
        """Same variance, intervals recentered at another point estimate."""
        estimates = np.asarray(estimates, dtype=float)
        z_crit = norm.ppf(0.5 * (1.0 + self.level))
        return dc_replace(
            self,
            estimates=estimates,
            ci_lower=estimates - z_crit * self.std_errors,
            ci_upper=estimates + z_crit * self.std_errors,
        )


def influence_terms(
    panel: PanelData,
    tau: float,
    first_step: FirstStepFit,
    sqr_fit: EstimateResult,
    config: SqrConfig,
) -> InfluenceParts:
    """Assemble per-cell influence vectors at the fitted coefficients.

    z_it = psi(u_it) w_it - gamma_i eps_it - A B^{-1} xw_it eps_it, where u
    are second-step residuals, eps first-step residuals, and xw the
    within-transformed regressors.
    """
    tau = require_quantile(tau)
    n, t, d = panel.x.shape
    y_stack, w = pooled_design(panel)
    u = y_stack - w @ sqr_fit.beta - np.repeat(first_step.alpha_hat, t)

    weights = plugin_weights(config.kernel, tau, config.bandwidth)
    w_cells = w.reshape(n, t, d + 1)
    psi = weights.psi(u).reshape(n, t)
    dens = weights.density(u).reshape(n, t)

    gamma = np.einsum("it,itj->ij", dens, w_cells) / t
    a_matrix = gamma.T @ first_step.x_bar / n

    b = first_step.b_matrix
    eigvals = np.linalg.eigvalsh(b)
    if eigvals[-1] <= 0.0 or eigvals[0] <= eigvals[-1] * 1e-12:
        raise SingularDesign("within Gram matrix is numerically singular")
    slope_loading = np.einsum("jk,itk->itj", a_matrix @ np.linalg.inv(b), first_step.x_within)

    z = (
        psi[:, :, None] * w_cells
        - gamma[:, None, :] * first_step.eps_hat[:, :, None]
        - slope_loading * first_step.eps_hat[:, :, None]
    )
    return InfluenceParts(z=z, gamma_hat=gamma, a_matrix=a_matrix, b_matrix=b)


def covariance(
    panel: PanelData,
    tau: float,
    first_step: FirstStepFit,
    sqr_fit: EstimateResult,
    config: SqrConfig,
    level: float = 0.95,
) -> InferenceResult:
    """Sandwich variance and confidence intervals at the fitted coefficients.

    The outer-moment matrix is the Gram matrix of the stacked influence
    vectors divided by NT; intervals use the standard normal critical value.
    Raises SingularSigma when the curvature matrix cannot be inverted.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    n, t, d = panel.x.shape
    nt = n * t
    parts = influence_terms(panel, tau, first_step, sqr_fit, config)
    z_flat = parts.z.reshape(nt, d + 1)
    omega = z_flat.T @ z_flat / nt
    omega = 0.5 * (omega + omega.T)

    y_stack, w = pooled_design(panel)
    u = y_stack - w @ sqr_fit.beta - np.repeat(first_step.alpha_hat, t)
    sigma = curvature_matrix(panel, u, tau, config)

    sandwich = _solve_sigma(sigma, _solve_sigma(sigma, omega).T)
    sandwich = 0.5 * (sandwich + sandwich.T)
    std_errors = np.sqrt(np.diag(sandwich) / nt)

    z_crit = norm.ppf(0.5 * (1.0 + level))
    estimates = np.asarray(sqr_fit.beta, dtype=float)
    return InferenceResult(
        sigma_hat=sigma,
        omega_hat=omega,
        sandwich=sandwich,
        std_errors=std_errors,
        estimates=estimates,
        ci_lower=estimates - z_crit * std_errors,
        ci_upper=estimates + z_crit * std_errors,
        level=level,
    )


def inference_rows(result: InferenceResult, estimator: str, tau: float):
    """Flatten a result into CSV-ready dicts, one per coefficient."""
    rows = []
    for j in range(result.estimates.size):
        rows.append(
            {
                "tau": tau,
                "estimator": estimator,
                "coefficient_index": j,
                "estimate": result.estimates[j],
                "std_error": result.std_errors[j],
                "ci_lower": result.ci_lower[j],
                "ci_upper": result.ci_upper[j],
            }
        )
    return rows
