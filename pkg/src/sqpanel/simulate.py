"""Seeded Monte Carlo study: data generating processes and replication engine.

Four DGPs share the structure y_it = (e_it - 1) + e_it * x_it + a_i with
uniform regressors and individual effects a_i = gamma*(sum_t x_it + lam_i)
recentered by their analytic mean; they differ only in the error law
(normal, shifted exponential, two-component normal mixture, Student t). The
true coefficient on x at quantile tau is the tau-quantile of the error law.

Reproducibility contract: replication r of grid cell c derives its generator
from SeedSequence(entropy=master_seed, spawn_key=(c, r)) reduced to a single
64-bit word, so reports are bit-identical at any worker count.
"""

from __future__ import annotations

import multiprocessing
import warnings
from dataclasses import dataclass, field, replace as dc_replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm, t as student_t

from .correction import analytically_corrected, bias_components, split_panel_jackknife
from .errors import EstimationError, InvalidQuantile
from .inference import covariance
from .panel import PanelData, fixed_effects_fit
from .quantile import canay_estimate, require_quantile
from .sqr import EstimateResult, SqrConfig, sqr_estimate

Array = np.ndarray

_MASK64 = (1 << 64) - 1
ESTIMATORS = ("canay", "sqr", "abc", "spj")


@dataclass
class DgpSpec:
    """One simulated panel: model id, dimensions, effect scale, seed."""

    model: int
    n_individuals: int
    n_periods: int
    gamma: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.model not in (1, 2, 3, 4):
            raise ValueError(f"model must be one of 1..4, got {self.model}")
        if not np.isfinite(self.gamma):
            raise ValueError("gamma must be finite")


@dataclass
class DgpDraw:
    """A generated panel together with its latent pieces (for diagnostics)."""

    panel: PanelData
    errors: Array            # (N, T)
    effects: Array           # (N,)
    mixture_flags: Optional[Array] = None   # (N, T) bool, model 3 only


def _draw_errors(rng: np.random.Generator, model: int, shape) -> tuple:
    if model == 1:
        return rng.normal(2.0, 1.0, shape), None
    if model == 2:
        return rng.exponential(1.0, shape) + 2.0, None
    if model == 3:
        flags = rng.random(shape) < 0.3
        centers = np.where(flags, 1.0, 3.0)
        return centers + rng.standard_normal(shape), flags
    return rng.standard_t(5, shape), None


def generate_draw(spec: DgpSpec) -> DgpDraw:
    """Generate one panel, returning the latent errors and effects as well.

    Draw order is fixed (regressors, effect noise, errors) so a seed pins the
    panel bit-for-bit. The effect recentering uses the analytic mean
    gamma*T/2 rather than a sample mean.
    """
    n, t = spec.n_individuals, spec.n_periods
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed & _MASK64))
    x = rng.random((n, t))                      # Beta(1,1) == Uniform(0,1)
    lam = rng.standard_normal(n)
    errors, flags = _draw_errors(rng, spec.model, (n, t))
    effects = spec.gamma * (x.sum(axis=1) + lam) - spec.gamma * t / 2.0
    y = (errors - 1.0) + errors * x + effects[:, None]
    panel = PanelData(y=y, x=x[:, :, None])
    return DgpDraw(panel=panel, errors=errors, effects=effects, mixture_flags=flags)


def generate_panel(spec: DgpSpec) -> PanelData:
    """Deterministic panel for the given spec (see generate_draw)."""
    return generate_draw(spec).panel


def _mixture_cdf(q):
    return 0.3 * norm.cdf(q - 1.0) + 0.7 * norm.cdf(q - 3.0)


def true_beta_x(model: int, tau: float) -> float:
    """tau-quantile of the model's error law: the true coefficient on x."""
    tau = require_quantile(tau)
    if model == 1:
        return float(2.0 + norm.ppf(tau))
    if model == 2:
        return float(2.0 - np.log1p(-tau))
    if model == 3:
        return float(brentq(lambda q: _mixture_cdf(q) - tau, -15.0, 25.0, xtol=1e-12))
    if model == 4:
        return float(student_t.ppf(tau, 5))
    raise ValueError(f"model must be one of 1..4, got {model}")


def replication_seed(master_seed: int, cell_index: int, replication: int) -> int:
    """64-bit stream seed for one replication of one grid cell."""
    ss = np.random.SeedSequence(
        entropy=master_seed & _MASK64, spawn_key=(cell_index, replication)
    )
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class McCell:
    """Aggregates for one (model, N, T, tau, estimator) combination."""

    model: int
    n_individuals: int
    n_periods: int
    tau: float
    estimator: str
    bias: float
    mse: float
    coverage: float
    n_replications: int
    n_failed: int


@dataclass
class McReport:
    """Monte Carlo results over a grid, in deterministic cell order."""

    master_seed: int
    level: float
    cells: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["model,n,t,tau,estimator,bias,mse,coverage,reps,n_failed"]
        for c in self.cells:
            lines.append(
                f"{c.model},{c.n_individuals},{c.n_periods},{format(c.tau, '.6g')},"
                f"{c.estimator},{format(c.bias, '.12g')},{format(c.mse, '.12g')},"
                f"{format(c.coverage, '.12g')},{c.n_replications},{c.n_failed}"
            )
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        """Render blocks of rows (N, T) with column groups bias/MSE/coverage
        per estimator, one block per (model, tau)."""
        by_block = {}
        estimators = []
        for c in self.cells:
            by_block.setdefault((c.model, c.tau), {}).setdefault(
                (c.n_individuals, c.n_periods), {}
            )[c.estimator] = c
            if c.estimator not in estimators:
                estimators.append(c.estimator)
        out = []
        for (model, tau), rows in by_block.items():
            out.append(f"### Model {model}, tau = {format(tau, '.6g')}")
            header = ["(N,T)"]
            for group in ("bias", "mse", "coverage"):
                header += [f"{group} {e}" for e in estimators]
            out.append("| " + " | ".join(header) + " |")
            out.append("|" + "---|" * len(header))
            for (n, t), by_est in rows.items():
                line = [f"({n},{t})"]
                for group in ("bias", "mse", "coverage"):
                    for e in estimators:
                        cell = by_est.get(e)
                        line.append("" if cell is None else format(getattr(cell, group), ".3f"))
                out.append("| " + " | ".join(line) + " |")
            out.append("")
        return "\n".join(out)


def _replication_worker(payload) -> Array:
    """Fit all requested estimators on one simulated panel.

    Returns an array (n_taus, n_estimators, 3) of [error on the x
    coefficient, interval covered the truth, failed]. The shared sandwich
    variance comes from the smoothed fit when one is available, otherwise
    from the plug-in terms evaluated at the plain two-step estimate.
    """
    (model, n, t, gamma, seed, taus, estimators,
     bandwidth, max_iter, grad_tol, level) = payload
    out = np.zeros((len(taus), len(estimators), 3))

    def mark_failed(ti=None):
        sel = slice(None) if ti is None else ti
        out[sel, :, 0] = np.nan
        out[sel, :, 1] = 0.0
        out[sel, :, 2] = 1.0

    try:
        panel = generate_panel(DgpSpec(model, n, t, gamma=gamma, seed=seed))
        first_step = fixed_effects_fit(panel)
    except EstimationError:
        mark_failed()
        return out

    config = SqrConfig(
        bandwidth=bandwidth, max_iterations=max_iter, gradient_tolerance=grad_tol
    )
    need_sqr = any(e in estimators for e in ("sqr", "abc", "spj"))
    for ti, tau in enumerate(taus):
        truth = true_beta_x(model, tau)
        betas = {}
        try:
            beta_canay = canay_estimate(panel, tau, first_step)
            if "canay" in estimators:
                betas["canay"] = beta_canay
        except EstimationError:
            mark_failed(ti)
            continue

        sqr_fit = None
        if need_sqr:
            try:
                sqr_fit = sqr_estimate(
                    panel, tau, first_step, dc_replace(config, init=beta_canay)
                )
                if "sqr" in estimators:
                    betas["sqr"] = sqr_fit.beta
            except EstimationError:
                sqr_fit = None
        if "abc" in estimators and sqr_fit is not None:
            try:
                bias = bias_components(panel, tau, first_step, sqr_fit, config)
                betas["abc"] = analytically_corrected(sqr_fit, bias, t)
            except EstimationError:
                pass
        if "spj" in estimators and sqr_fit is not None:
            try:
                betas["spj"] = split_panel_jackknife(
                    panel, tau, config, first_step=first_step, sqr_fit=sqr_fit
                )
            except EstimationError:
                pass

        center = sqr_fit if sqr_fit is not None else EstimateResult.from_beta(
            beta_canay, first_step
        )
        try:
            inference = covariance(panel, tau, first_step, center, config, level)
        except EstimationError:
            mark_failed(ti)
            continue

        for ei, est in enumerate(estimators):
            beta = betas.get(est)
            if beta is None:
                out[ti, ei] = (np.nan, 0.0, 1.0)
                continue
            recentered = inference.with_estimates(beta)
            covered = float(recentered.ci_lower[1] <= truth <= recentered.ci_upper[1])
            out[ti, ei] = (beta[1] - truth, covered, 0.0)
    return out


def run_monte_carlo(
    grid: Sequence,
    taus: Sequence[float],
    estimators: Sequence[str] = ("canay", "abc", "spj"),
    n_replications: int = 1000,
    master_seed: int = 0,
    jobs: Optional[int] = 1,
    config: Optional[SqrConfig] = None,
    level: float = 0.95,
    gamma: float = 2.0,
) -> McReport:
    """Run the replication study over a grid of (model, N, T) cells.

    Each replication simulates a fresh panel from its derived seed, fits the
    requested estimators at every tau, and records the error on the x
    coefficient plus whether the level-% interval covered the truth. Failed
    replications are excluded with a warning; a cell aborts when more than 1%
    of its replications fail. Results are reduced in replication order, so
    the report does not depend on ``jobs``.
    """
    if n_replications < 1:
        raise ValueError(f"n_replications must be >= 1, got {n_replications}")
    taus = tuple(require_quantile(tau) for tau in taus)
    estimators = tuple(estimators)
    for est in estimators:
        if est not in ESTIMATORS:
            raise ValueError(f"unknown estimator {est!r}; choose from {ESTIMATORS}")
    grid = [(int(m), int(n), int(t)) for (m, n, t) in grid]
    for model, _, _ in grid:
        if model not in (1, 2, 3, 4):
            raise ValueError(f"model must be one of 1..4, got {model}")
    config = config or SqrConfig()
    jobs = max(1, int(jobs if jobs is not None else multiprocessing.cpu_count()))

    report = McReport(master_seed=master_seed, level=level)
    for cell_index, (model, n, t) in enumerate(grid):
        payloads = [
            (
                model, n, t, gamma,
                replication_seed(master_seed, cell_index, r),
                taus, estimators,
                config.bandwidth, config.max_iterations,
                config.gradient_tolerance, level,
            )
            for r in range(n_replications)
        ]
        if jobs > 1 and n_replications > 1:
            chunk = max(1, n_replications // (jobs * 8))
            with multiprocessing.get_context("fork").Pool(jobs) as pool:
                results = pool.map(_replication_worker, payloads, chunksize=chunk)
        else:
            results = [_replication_worker(p) for p in payloads]
        stacked = np.stack(results)   # (R, n_taus, n_est, 3)

        for ti, tau in enumerate(taus):
            for ei, est in enumerate(estimators):
                failed = stacked[:, ti, ei, 2] > 0.0
                n_failed = int(failed.sum())
                if n_failed > 0.01 * n_replications:
                    raise EstimationError(
                        f"cell model={model} (N,T)=({n},{t}) tau={tau} estimator={est}: "
                        f"{n_failed}/{n_replications} replications failed (>1%)"
                    )
                if n_failed:
                    warnings.warn(
                        f"cell model={model} (N,T)=({n},{t}) tau={tau} estimator={est}: "
                        f"excluded {n_failed} failed replication(s)",
                        stacklevel=2,
                    )
                ok = ~failed
                errors = stacked[ok, ti, ei, 0]
                covered = stacked[ok, ti, ei, 1]
                report.cells.append(
                    McCell(
                        model=model,
                        n_individuals=n,
                        n_periods=t,
                        tau=tau,
                        estimator=est,
                        bias=float(np.mean(errors)),
                        mse=float(np.mean(errors**2)),
                        coverage=float(np.mean(covered)),
                        n_replications=n_replications,
                        n_failed=n_failed,
                    )
                )
    return report
