"""Smoothed quantile regression second step.

Replaces the indicator inside the check loss with a smooth kernel surrogate
K(u/h), making the objective twice differentiable so a Newton solver applies
and the estimation-noise bias admits a plug-in estimate. Two derivative
families live here:

* ``loss_derivatives`` - the exact u-derivatives of the smoothed per-residual
  loss [tau - K(u/h)]*u, used by the optimizer (gradient/Hessian).
* ``plugin_weights`` - the simpler kernel weights tau - K(u/h), k(u/h)/h,
  k'(u/h)/h^2 evaluated at fitted residuals, used by the bias-correction and
  covariance estimators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import NoConvergence
from .kernels import Kernel, default_kernel
from .panel import FirstStepFit, PanelData, pooled_design
from .quantile import canay_estimate, require_quantile

Array = np.ndarray


@dataclass
class SqrConfig:
    """Settings for the smoothed second step.

    ``bandwidth`` scales the smoothing window around zero residual. ``init``
    is either an explicit start vector or the marker "use-canay", which runs
    the plain two-step estimate first and starts Newton there.
    """

    bandwidth: float = 0.8
    max_iterations: int = 200
    gradient_tolerance: float = 1e-8
    init: Union[Array, str] = "use-canay"
    kernel: Kernel = field(default_factory=default_kernel)

    def __post_init__(self):
        if not self.bandwidth > 0.0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if not self.gradient_tolerance > 0.0:
            raise ValueError(
                f"gradient tolerance must be positive, got {self.gradient_tolerance}"
            )


@dataclass(frozen=True)
class RhoDerivatives:
    """First four u-derivatives of the smoothed loss [tau - K(u/h)]*u.

    rho1 is the loss's u-derivative (tau-1 left of -h, tau right of +h);
    rho2..rho4 are successive derivatives and vanish outside |u| <= h.
    """

    rho1: Callable[[Array], Array]
    rho2: Callable[[Array], Array]
    rho3: Callable[[Array], Array]
    rho4: Callable[[Array], Array]


@dataclass(frozen=True)
class PluginWeights:
    """Kernel plug-in weights evaluated at fitted residuals.

    psi(u) = tau - K(u/h) estimates the check-score, density(u) = k(u/h)/h a
    density at zero, density_deriv(u) = k'(u/h)/h^2 its derivative.
    """

    psi: Callable[[Array], Array]
    density: Callable[[Array], Array]
    density_deriv: Callable[[Array], Array]


def loss_derivatives(kernel: Kernel, tau: float, bandwidth: float) -> RhoDerivatives:
    tau = require_quantile(tau)
    h = float(bandwidth)

    def rho1(u):
        z = np.asarray(u, dtype=float) / h
        return tau - kernel.big_k(z) + kernel.k(z) * z

    def rho2(u):
        z = np.asarray(u, dtype=float) / h
        return (2.0 * kernel.k(z) + kernel.k1(z) * z) / h

    def rho3(u):
        z = np.asarray(u, dtype=float) / h
        return (3.0 * kernel.k1(z) + kernel.k2(z) * z) / h**2

    def rho4(u):
        z = np.asarray(u, dtype=float) / h
        return (4.0 * kernel.k2(z) + kernel.k3(z) * z) / h**3

    return RhoDerivatives(rho1=rho1, rho2=rho2, rho3=rho3, rho4=rho4)


def plugin_weights(kernel: Kernel, tau: float, bandwidth: float) -> PluginWeights:
    tau = require_quantile(tau)
    h = float(bandwidth)

    def psi(u):
        return tau - kernel.big_k(np.asarray(u, dtype=float) / h)

    def density(u):
        return kernel.k(np.asarray(u, dtype=float) / h) / h

    def density_deriv(u):
        return kernel.k1(np.asarray(u, dtype=float) / h) / h**2

    return PluginWeights(psi=psi, density=density, density_deriv=density_deriv)


@dataclass
class EstimateResult:
    """A fitted second-step coefficient vector plus first-step context.

    ``beta`` has length d+1 (intercept first). Solver diagnostics record the
    iteration count, the final gradient max-norm, whether the Hessian ever
    needed a ridge, and the (nonincreasing) objective path.
    """

    beta: Array
    alpha_hat: Array
    theta_hat: Array
    converged: bool
    iterations: int
    gradient_norm: float
    regularized: bool
    objective_path: list

    @classmethod
    def from_beta(cls, beta: Array, first_step: FirstStepFit) -> "EstimateResult":
        """Wrap an externally computed coefficient vector (e.g. the plain
        two-step estimate) so it can flow through the inference machinery."""
        return cls(
            beta=np.asarray(beta, dtype=float),
            alpha_hat=first_step.alpha_hat,
            theta_hat=first_step.theta_hat,
            converged=True,
            iterations=0,
            gradient_norm=float("nan"),
            regularized=False,
            objective_path=[],
        )


def _adjusted_stack(panel: PanelData, alpha_hat: Array):
    y, w = pooled_design(panel)
    return y - np.repeat(np.asarray(alpha_hat, dtype=float), panel.n_periods), w


def sqr_objective(beta, panel: PanelData, alpha_hat, tau: float, config: SqrConfig) -> float:
    """Mean smoothed loss (1/NT) sum [tau - K(u/h)]*u over all cells."""
    tau = require_quantile(tau)
    ytil, w = _adjusted_stack(panel, alpha_hat)
    u = ytil - w @ np.asarray(beta, dtype=float)
    big_k = config.kernel.big_k(u / config.bandwidth)
    return float(np.mean((tau - big_k) * u))


def sqr_gradient(beta, panel: PanelData, alpha_hat, tau: float, config: SqrConfig) -> Array:
    """Gradient of sqr_objective: -(1/NT) sum rho1(u) * w."""
    rho = loss_derivatives(config.kernel, tau, config.bandwidth)
    ytil, w = _adjusted_stack(panel, alpha_hat)
    u = ytil - w @ np.asarray(beta, dtype=float)
    return -(w.T @ rho.rho1(u)) / u.size


def sqr_hessian(beta, panel: PanelData, alpha_hat, tau: float, config: SqrConfig) -> Array:
    """Hessian of sqr_objective: (1/NT) sum rho2(u) * w w'. Symmetric; can be
    indefinite away from the optimum because higher-order kernels go negative."""
    rho = loss_derivatives(config.kernel, tau, config.bandwidth)
    ytil, w = _adjusted_stack(panel, alpha_hat)
    u = ytil - w @ np.asarray(beta, dtype=float)
    hess = (w * rho.rho2(u)[:, None]).T @ w / u.size
    return 0.5 * (hess + hess.T)


def _resolve_init(panel, tau, first_step, config) -> Array:
    if isinstance(config.init, str):
        if config.init != "use-canay":
            raise ValueError(f"unknown init marker {config.init!r}")
        return canay_estimate(panel, tau, first_step)
    init = np.asarray(config.init, dtype=float)
    if init.shape != (panel.n_regressors + 1,):
        raise ValueError(
            f"init must have length {panel.n_regressors + 1}, got shape {init.shape}"
        )
    return init


def sqr_estimate(
    panel: PanelData, tau: float, first_step: FirstStepFit, config: SqrConfig
) -> EstimateResult:
    """Newton solve of the smoothed second step.

    Damped Newton with a Levenberg-style ridge whenever the Hessian is not
    positive definite, plus Armijo backtracking so the recorded objective
    path is nonincreasing. Raises NoConvergence (carrying the last iterate)
    once the iteration budget is exhausted.
    """
    tau = require_quantile(tau)
    ytil, w = _adjusted_stack(panel, first_step.alpha_hat)
    nt = ytil.size
    p = w.shape[1]
    h = config.bandwidth
    rho = loss_derivatives(config.kernel, tau, h)
    kern_big_k = config.kernel.big_k

    def objective(b):
        u = ytil - w @ b
        return float(np.mean((tau - kern_big_k(u / h)) * u))

    beta = _resolve_init(panel, tau, first_step, config)
    obj = objective(beta)
    path = [obj]
    regularized = False
    grad_norm = np.inf

    for iteration in range(config.max_iterations):
        u = ytil - w @ beta
        grad = -(w.T @ rho.rho1(u)) / nt
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= config.gradient_tolerance:
            return EstimateResult(
                beta=beta,
                alpha_hat=first_step.alpha_hat,
                theta_hat=first_step.theta_hat,
                converged=True,
                iterations=iteration,
                gradient_norm=grad_norm,
                regularized=regularized,
                objective_path=path,
            )
        hess = (w * rho.rho2(u)[:, None]).T @ w / nt
        hess = 0.5 * (hess + hess.T)

        ridge = 0.0
        ridge_base = max(1e-4 * np.trace(hess) / p, 1e-10)
        step = None
        while True:
            try:
                chol = np.linalg.cholesky(hess + ridge * np.eye(p))
            except np.linalg.LinAlgError:
                chol = None
            if chol is not None:
                candidate = np.linalg.solve(hess + ridge * np.eye(p), -grad)
                if grad @ candidate < 0.0:
                    step = candidate
                    break
            regularized = True
            ridge = ridge_base if ridge == 0.0 else ridge * 10.0
            if ridge > 1e16:
                break
        if step is None:
            break

        # Armijo backtracking; escalate the ridge and retry when even tiny
        # steps fail to descend (nonconvex region).
        accepted = False
        slope = grad @ step
        t = 1.0
        while t >= 1e-12:
            trial = beta + t * step
            trial_obj = objective(trial)
            if trial_obj <= obj + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        beta, obj = trial, trial_obj
        path.append(obj)

    u = ytil - w @ beta
    grad = -(w.T @ rho.rho1(u)) / nt
    grad_norm = float(np.max(np.abs(grad)))
    if grad_norm <= config.gradient_tolerance:
        return EstimateResult(
            beta=beta,
            alpha_hat=first_step.alpha_hat,
            theta_hat=first_step.theta_hat,
            converged=True,
            iterations=config.max_iterations,
            gradient_norm=grad_norm,
            regularized=regularized,
            objective_path=path,
        )
    raise NoConvergence(
        f"smoothed quantile regression did not reach gradient tolerance "
        f"{config.gradient_tolerance:.1e} (final max-norm {grad_norm:.3e})",
        last_iterate=beta,
        iterations=len(path) - 1,
        gradient_norm=grad_norm,
    )
