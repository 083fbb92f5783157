"""Exception types shared across the package."""

from __future__ import annotations


class EstimationError(Exception):
    """Base class for all estimation failures."""


class PanelDataError(EstimationError):
    """Malformed panel input: unbalanced data, duplicate cells, bad values."""


class PanelTooShort(EstimationError):
    """Too few time periods for the requested operation."""


class InvalidQuantile(EstimationError):
    """Quantile level outside the open interval (0, 1)."""


class SingularDesign(EstimationError):
    """Numerically singular regressor design (collinear or time-invariant)."""


class RankDeficient(EstimationError):
    """Design matrix has column rank below the number of parameters."""


class SingularSigma(EstimationError):
    """Ill-conditioned curvature matrix; bandwidth too small or degenerate fit."""


class NoConvergence(EstimationError):
    """Iterative solver exhausted its budget without meeting the tolerance.

    Carries the last iterate and counters so callers can inspect the stall.
    """

    def __init__(self, message, *, last_iterate=None, iterations=None,
                 gradient_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations
        self.gradient_norm = gradient_norm
