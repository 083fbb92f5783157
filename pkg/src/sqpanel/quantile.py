"""Check-function machinery and exact (non-smoothed) quantile regression.

The solver follows a smoothing homotopy: minimize a Huberized check loss by
damped Newton while shrinking the smoothing half-width, then polish with an
exact solve through the active interpolation set. A minimizer of the summed
check loss always exists at a design vertex interpolating p observations, so
the polish lands on it.
"""

from __future__ import annotations

from itertools import combinations
from math import comb

import numpy as np

from .errors import InvalidQuantile, NoConvergence, RankDeficient
from .panel import FirstStepFit, PanelData, pooled_design

Array = np.ndarray

_MAX_POLISH_CANDIDATES = 12


def require_quantile(tau: float) -> float:
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise InvalidQuantile(f"quantile level must lie in (0, 1), got {tau}")
    return tau


def check_loss(u, tau: float):
    """Quantile check loss: tau*u for u > 0, (tau-1)*u for u <= 0.

    Vectorized; nonnegative everywhere, zero only at u = 0.
    """
    tau = require_quantile(tau)
    u = np.asarray(u, dtype=float)
    out = u * (tau - (u <= 0.0))
    return float(out) if out.ndim == 0 else out


def _check_objective(responses: Array, design: Array, beta: Array, tau: float) -> float:
    r = responses - design @ beta
    return float(np.sum(r * (tau - (r <= 0.0))))


def _huber_objective(r: Array, tau: float, kappa: float) -> float:
    inside = np.abs(r) < kappa
    linear = r * (tau - (r <= 0.0))
    smoothed = (tau - 0.5) * r + r * r / (4.0 * kappa) + 0.25 * kappa
    return float(np.sum(np.where(inside, smoothed, linear)))


def _huber_psi(r: Array, tau: float, kappa: float) -> Array:
    return np.clip(r / (2.0 * kappa) + (tau - 0.5), tau - 1.0, tau)


def _exact_line_minimum(r, move, tau, kappa):
    """Exact minimizer over t >= 0 of sum huber_loss(r - t*move).

    The directional derivative is nondecreasing and piecewise linear with
    breakpoints where residuals cross the +-kappa band edges; locate its sign
    change by bisection over the sorted breakpoints, then solve the linear
    piece.
    """

    def slope(t):
        return float(-(move @ _huber_psi(r - t * move, tau, kappa)))

    if slope(0.0) >= 0.0:
        return 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        crossings = np.concatenate([(r - kappa) / move, (r + kappa) / move])
    crossings = crossings[np.isfinite(crossings) & (crossings > 0.0)]
    if crossings.size == 0:
        return 0.0
    crossings = np.sort(crossings)
    if slope(crossings[-1]) < 0.0:
        lo, hi = 0.0, crossings[-1]
    else:
        # first breakpoint with nonnegative slope brackets the minimum
        lo_idx, hi_idx = 0, crossings.size - 1
        while lo_idx < hi_idx:
            mid = (lo_idx + hi_idx) // 2
            if slope(crossings[mid]) < 0.0:
                lo_idx = mid + 1
            else:
                hi_idx = mid
        hi = crossings[hi_idx]
        lo = 0.0 if hi_idx == 0 else crossings[hi_idx - 1]
    s_lo, s_hi = slope(lo), slope(hi)
    if s_hi <= 0.0:
        return hi
    if s_hi <= s_lo:
        return lo
    return lo - s_lo * (hi - lo) / (s_hi - s_lo)


def _active_set_direction(design, r, grad, gram, kappa):
    """Descent direction aware of the nearly-interpolated rows.

    Rows with |r| <= 2*kappa pin the iterate to an affine face. Prefer moving
    inside that face's null space (long edge moves the plain gradient cannot
    sustain); when the face is stationary, take a Newton step restricted to
    the active rows' row space, which adjusts their residuals within the
    smoothing band.
    """
    p = design.shape[1]
    active = np.abs(r) <= 2.0 * kappa
    if not np.any(active):
        return np.linalg.solve(gram, -grad)
    sub = design[active]
    _, svals, vt = np.linalg.svd(sub, full_matrices=True)
    q = int(np.sum(svals > max(svals[0], 1e-300) * 1e-10))
    if q < p:
        null_basis = vt[q:].T                      # (p, p-q)
        g_null = null_basis.T @ grad
        if np.linalg.norm(g_null) > 1e-10 * (np.linalg.norm(grad) + 1e-300):
            return -(null_basis @ g_null)
    row_basis = vt[:q].T                           # (p, q)
    reduced = row_basis.T @ (sub.T @ sub) @ row_basis / (2.0 * kappa)
    try:
        move = np.linalg.solve(reduced, -(row_basis.T @ grad))
    except np.linalg.LinAlgError:
        return np.linalg.solve(gram, -grad)
    return row_basis @ move


def _huber_newton_stage(responses, design, beta, tau, kappa, budget, gram):
    """Damped Newton on the Huberized loss at fixed half-width kappa.

    Returns (beta, iterations_used). The objective is convex and piecewise
    quadratic; when the in-band Hessian is deficient or the Newton step is
    rejected, an exactly line-searched move chosen by the active-set logic
    keeps progress guaranteed at any kappa.
    """
    m, p = design.shape
    obj = _huber_objective(responses - design @ beta, tau, kappa)
    used = 0
    for _ in range(min(budget, 80)):
        r = responses - design @ beta
        psi = _huber_psi(r, tau, kappa)
        grad = -(design.T @ psi)
        inside = np.abs(r) < kappa

        trial = trial_obj = None
        if np.count_nonzero(inside) >= p:
            sub = design[inside]
            hess = sub.T @ sub / (2.0 * kappa)
            try:
                step = np.linalg.solve(hess, -grad)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and grad @ step < 0.0:
                t, slope = 1.0, grad @ step
                while t >= 1e-10:
                    cand = beta + t * step
                    cand_obj = _huber_objective(responses - design @ cand, tau, kappa)
                    if cand_obj <= obj + 1e-4 * t * slope:
                        trial, trial_obj = cand, cand_obj
                        break
                    t *= 0.5
        if trial is None:
            direction = _active_set_direction(design, r, grad, gram, kappa)
            t = _exact_line_minimum(r, design @ direction, tau, kappa)
            if t <= 0.0:
                return beta, used + 1
            trial = beta + t * direction
            trial_obj = _huber_objective(responses - design @ trial, tau, kappa)
            if trial_obj > obj:
                return beta, used + 1
        used += 1
        improvement = obj - trial_obj
        beta, obj = trial, trial_obj
        if improvement <= 1e-13 * (1.0 + abs(obj)):
            return beta, used
    return beta, used


def _polish_to_vertex(responses, design, beta, tau):
    """Exact solve through the active interpolation set.

    Enumerates small subsets of the nearest-to-fit observations (all subsets
    when the instance is tiny) and returns whichever interpolating solution
    (or the incoming iterate) minimizes the exact check objective.
    """
    m, p = design.shape
    r = responses - design @ beta
    rel = np.abs(r) / (1.0 + np.abs(responses))
    order = np.argsort(rel, kind="stable")
    if comb(m, p) <= 300:
        candidates = np.arange(m)
    else:
        n_active = int(np.sum(rel <= 1e-8))
        n_candidates = min(m, max(p + 3, n_active), _MAX_POLISH_CANDIDATES)
        candidates = order[:n_candidates]

    best_beta = beta
    best_obj = _check_objective(responses, design, beta, tau)
    for subset in combinations(candidates, p):
        sub = design[list(subset)]
        svals = np.linalg.svd(sub, compute_uv=False)
        if svals[-1] <= 1e-10 * max(svals[0], 1.0):
            continue
        vertex = np.linalg.solve(sub, responses[list(subset)])
        obj = _check_objective(responses, design, vertex, tau)
        if obj < best_obj:
            best_beta, best_obj = vertex, obj
    return best_beta


def quantile_regression(responses, design, tau: float, max_iterations: int = 1000) -> Array:
    """Minimize the summed check loss of ``responses - design @ beta``.

    Requires more observations than parameters and a full-column-rank design.
    Raises RankDeficient otherwise and NoConvergence (with iteration
    diagnostics) if the homotopy stalls before reaching its terminal
    half-width.
    """
    tau = require_quantile(tau)
    responses = np.asarray(responses, dtype=float).ravel()
    design = np.asarray(design, dtype=float)
    if design.ndim != 2:
        raise RankDeficient(f"design must be a matrix, got shape {design.shape}")
    m, p = design.shape
    if m <= p:
        raise RankDeficient(f"need more observations than parameters; m={m}, p={p}")
    beta, _, rank, _ = np.linalg.lstsq(design, responses, rcond=None)
    if rank < p:
        raise RankDeficient(f"design has column rank {rank} < {p}")

    scale = 1.0 + float(np.median(np.abs(responses)))
    r0 = responses - design @ beta
    kappa = max(float(np.max(np.abs(r0))), 1e-3 * scale)
    kappa_min = 1e-9 * scale
    schedule = [kappa]
    while schedule[-1] > kappa_min:
        schedule.append(max(schedule[-1] * 0.1, kappa_min))
    gram = design.T @ design

    used_total = 0
    for kappa in schedule:
        beta, used = _huber_newton_stage(
            responses, design, beta, tau, kappa, max_iterations - used_total, gram
        )
        used_total += used
        if used_total >= max_iterations:
            grad = design.T @ _huber_psi(responses - design @ beta, tau, kappa)
            raise NoConvergence(
                f"quantile regression stalled after {used_total} Newton steps "
                f"at smoothing half-width {kappa:.3e}",
                last_iterate=beta,
                iterations=used_total,
                gradient_norm=float(np.max(np.abs(grad))),
            )
    return _polish_to_vertex(responses, design, beta, tau)


def canay_estimate(panel: PanelData, tau: float, first_step: FirstStepFit) -> Array:
    """Two-step estimate: quantile regression of y minus fitted intercepts on [1, x].

    The first-step intercept estimates are treated as known and subtracted
    from the responses; the result has length d+1 (intercept first).
    """
    tau = require_quantile(tau)
    y, w = pooled_design(panel)
    adjusted = y - np.repeat(first_step.alpha_hat, panel.n_periods)
    return quantile_regression(adjusted, w, tau)
