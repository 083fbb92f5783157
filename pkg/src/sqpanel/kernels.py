"""Compactly supported smoothing kernels for the smoothed check loss.

A kernel bundles the density-like function ``k`` on [-1, 1], the survival-style
antiderivative ``big_k(z) = 1 - integral of k up to z``, and the first three
derivatives of ``k``. Higher-order kernels trade pointwise positivity for
vanishing low-order moments, which lowers smoothing bias.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class Kernel:
    """A smoothing kernel with support [-1, 1] and its derivative family.

    ``big_k`` equals 1 left of the support, 0 right of it, and 1/2 at zero;
    the complement identity big_k(-z) + big_k(z) = 1 holds by symmetry of k.
    ``order`` is the first nonvanishing moment of k.
    """

    k: Callable[[Array], Array]
    big_k: Callable[[Array], Array]
    k1: Callable[[Array], Array]
    k2: Callable[[Array], Array]
    k3: Callable[[Array], Array]
    order: int


def _polynomial_on_support(coeffs: Array) -> Callable[[Array], Array]:
    poly = np.polynomial.Polynomial(coeffs)

    def evaluate(u):
        u = np.asarray(u, dtype=float)
        inside = np.abs(u) <= 1.0
        return np.where(inside, poly(u), 0.0)

    return evaluate


def default_kernel() -> Kernel:
    """Fourth-order polynomial kernel 105/64 (1 - 5u^2 + 7u^4 - 3u^6) on [-1, 1].

    Its first three moments vanish and the fourth is -1/33. The antiderivative
    is evaluated in closed form (105/64 (u - 5/3 u^3 + 7/5 u^5 - 3/7 u^7),
    which is -1/2 at u = -1), so big_k is exact rather than quadrature-based.
    """
    scale = 105.0 / 64.0
    k_coeffs = scale * np.array([1.0, 0.0, -5.0, 0.0, 7.0, 0.0, -3.0])
    k_poly = np.polynomial.Polynomial(k_coeffs)
    k1_poly = k_poly.deriv(1)
    k2_poly = k_poly.deriv(2)
    k3_poly = k_poly.deriv(3)
    antideriv = k_poly.integ(1)  # zero at 0 by construction

    def big_k(z):
        z = np.asarray(z, dtype=float)
        clipped = np.clip(z, -1.0, 1.0)
        # antideriv(-1) = -1/2, antideriv(1) = +1/2; shifting by 1/2 gives the
        # cumulative integral from -1, clamped outside the support.
        return 1.0 - (antideriv(clipped) + 0.5)

    return Kernel(
        k=_polynomial_on_support(k_coeffs),
        big_k=big_k,
        k1=_polynomial_on_support(k1_poly.coef),
        k2=_polynomial_on_support(k2_poly.coef),
        k3=_polynomial_on_support(k3_poly.coef),
        order=4,
    )
