"""Bias corrections for the smoothed two-step estimator.

The estimation noise in the fitted individual intercepts contributes a bias
of order 1/T to the second step. Two removals are provided: an analytical
plug-in correction built from kernel-weighted curvature terms, and a
split-panel jackknife that contrasts the full-sample fit with fits on the two
period halves.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import EstimationError, SingularSigma
from .panel import FirstStepFit, PanelData, fixed_effects_fit, pooled_design, split_halves
from .quantile import require_quantile
from .sqr import EstimateResult, SqrConfig, plugin_weights, sqr_estimate

Array = np.ndarray


@dataclass
class BiasComponents:
    """Ingredients of the analytical bias estimate.

    ``lambda_hat`` stacks a zero intercept over the first-step slopes,
    ``sigma_hat`` is the kernel-weighted curvature matrix, ``eta_hat`` holds
    one per-individual row of density-derivative-weighted design means, and
    ``b_hat`` is the assembled bias vector (to be scaled by 1/T).
    """

    lambda_hat: Array   # (d+1,)
    sigma_hat: Array    # (d+1, d+1)
    eta_hat: Array      # (N, d+1)
    b_hat: Array        # (d+1,)


def _solve_sigma(sigma: Array, rhs: Array, rcond_threshold: float = 1e-12) -> Array:
    eigvals = np.linalg.eigvalsh(sigma)
    largest = float(np.max(np.abs(eigvals)))
    smallest = float(np.min(np.abs(eigvals)))
    if largest <= 0.0 or smallest <= largest * rcond_threshold:
        raise SingularSigma(
            "kernel-weighted curvature matrix is numerically singular "
            f"(|eigenvalue| range [{smallest:.3e}, {largest:.3e}]); "
            "bandwidth too small or degenerate fit"
        )
    return np.linalg.solve(sigma, rhs)


def curvature_matrix(panel: PanelData, residuals: Array, tau: float, config: SqrConfig) -> Array:
    """Kernel-weighted design curvature (1/NT) sum k(u/h)/h * w w'."""
    weights = plugin_weights(config.kernel, tau, config.bandwidth)
    _, w = pooled_design(panel)
    dens = weights.density(residuals.ravel())
    sigma = (w * dens[:, None]).T @ w / residuals.size
    return 0.5 * (sigma + sigma.T)


def bias_components(
    panel: PanelData,
    tau: float,
    first_step: FirstStepFit,
    sqr_fit: EstimateResult,
    config: SqrConfig,
) -> BiasComponents:
    """Assemble the analytical bias estimate at the fitted coefficients.

    Residuals are y minus the fitted second-step line minus the first-step
    intercepts; the first-step residuals supply the squared-noise weights.
    Raises SingularSigma when the curvature matrix is too ill-conditioned to
    invert.
    """
    tau = require_quantile(tau)
    n, t, d = panel.x.shape
    y_stack, w = pooled_design(panel)
    u = y_stack - w @ sqr_fit.beta - np.repeat(first_step.alpha_hat, t)

    weights = plugin_weights(config.kernel, tau, config.bandwidth)
    sigma = curvature_matrix(panel, u, tau, config)

    dens_deriv = weights.density_deriv(u).reshape(n, t)
    w_cells = w.reshape(n, t, d + 1)
    eta = np.einsum("it,itj->ij", dens_deriv, w_cells) / t

    lam = np.concatenate(([0.0], first_step.theta_hat))
    noise_sq = np.mean(first_step.eps_hat**2, axis=1)   # per-individual mean squared noise
    eta_term = eta.T @ noise_sq / n                      # (1/NT) sum_it eta_i * eps_it^2
    b_hat = lam - sqr_fit.beta + 0.5 * _solve_sigma(sigma, eta_term)
    return BiasComponents(lambda_hat=lam, sigma_hat=sigma, eta_hat=eta, b_hat=b_hat)


def analytically_corrected(sqr_fit: EstimateResult, bias: BiasComponents, n_periods: int) -> Array:
    """Subtract the 1/T-scaled bias estimate from the fitted coefficients."""
    return sqr_fit.beta - bias.b_hat / n_periods


def jackknife_combination(full: Array, first_half: Array, second_half: Array) -> Array:
    """2*full - 0.5*(first + second): removes an additive c/T bias exactly."""
    return 2.0 * np.asarray(full, dtype=float) - 0.5 * (
        np.asarray(first_half, dtype=float) + np.asarray(second_half, dtype=float)
    )


def split_panel_jackknife(
    panel: PanelData,
    tau: float,
    config: SqrConfig,
    first_step: Optional[FirstStepFit] = None,
    sqr_fit: Optional[EstimateResult] = None,
) -> Array:
    """Split-panel-jackknife coefficients.

    Runs the full two-step fit and one two-step fit per period half (each
    half re-estimates its own first step) and combines them. Precomputed
    full-sample results can be passed to skip refitting; the half fits start
    from the full-sample coefficients since both halves target the same
    limit. Sub-fit failures are re-raised labeled by which half failed.
    """
    tau = require_quantile(tau)
    first, second = split_halves(panel)
    if first_step is None:
        first_step = fixed_effects_fit(panel)
    if sqr_fit is None:
        sqr_fit = sqr_estimate(panel, tau, first_step, config)

    half_config = replace(config, init=sqr_fit.beta)
    halves = []
    for label, half in (("first", first), ("second", second)):
        try:
            half_fs = fixed_effects_fit(half)
            halves.append(sqr_estimate(half, tau, half_fs, half_config).beta)
        except EstimationError as exc:
            raise type(exc)(f"{label} half-panel fit failed: {exc}") from exc
    return jackknife_combination(sqr_fit.beta, halves[0], halves[1])
