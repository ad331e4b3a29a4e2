"""Nested Simpson quadratures for the one-dimensional reductions.

With ``kappa = lambda + eps`` the flux variable ``w = u'/kappa`` of the
regularized equation obeys ``a w' = -2 b kappa w``; the adjoint density
``phi = a m`` obeys ``phi' = 2 b kappa phi / a``.  Both are first-order
linear equations, so their solutions are exponentials of a running
integral, and ``u`` itself needs one more integral.  Everything here
works at four Simpson sub-intervals per evaluation cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson

from .coeffs import CoefficientSet
from .errors import AssumptionError

SUBDIVISIONS = 4


def refine(points: np.ndarray, sub: int = SUBDIVISIONS) -> np.ndarray:
    """Insert ``sub - 1`` equispaced points inside every cell of ``points``."""
    points = np.asarray(points, dtype=float)
    steps = np.diff(points)
    inner = points[:-1, None] + steps[:, None] * (np.arange(sub) / sub)[None, :]
    return np.append(inner.ravel(), points[-1])


def cumulative_cells(fine_values: np.ndarray, points: np.ndarray, sub: int = SUBDIVISIONS) -> np.ndarray:
    """Running integral at ``points`` from composite Simpson on each refined cell."""
    if sub % 2:
        raise ValueError("Simpson needs an even number of sub-intervals")
    f = np.asarray(fine_values, dtype=float)
    n_cells = len(points) - 1
    blocks = np.lib.stride_tricks.sliding_window_view(f, sub + 1)[::sub][:n_cells]
    weights = np.ones(sub + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    cells = np.diff(points) / (3.0 * sub) * (blocks @ weights)
    return np.concatenate(([0.0], np.cumsum(cells)))


@dataclass(frozen=True)
class SideProfile:
    """Quadrature data on an interval where the regularized friction is positive.

    ``growth`` is ``int 2 b kappa / a`` from the left end, ``decay`` its
    negative exponential and ``spread`` the running integral of
    ``kappa * decay``.  The solution with end values ``(uL, uR)`` is
    ``uL + (uR - uL) * spread / spread[-1]`` and its flux variable is
    ``(uR - uL) / spread[-1] * decay``.
    """

    points: np.ndarray
    growth: np.ndarray
    decay: np.ndarray
    spread: np.ndarray

    def solution(self, u_left: float, u_right: float) -> np.ndarray:
        return u_left + (u_right - u_left) * self.spread / self.spread[-1]

    def flux(self, u_left: float, u_right: float) -> np.ndarray:
        return (u_right - u_left) / self.spread[-1] * self.decay


def side_profile(coeffs: CoefficientSet, eps: float, points: np.ndarray) -> SideProfile:
    """Build the nested quadrature data on ``points`` (increasing, arbitrary spacing).

    The regularized friction may vanish at the two end points but nowhere
    inside the interval.
    """
    points = np.asarray(points, dtype=float)
    fine = refine(points)
    kappa = coeffs.lam(fine) + eps
    interior = kappa[1:-1]
    if interior.size and np.min(interior) <= 0.0:
        k = int(np.argmin(interior)) + 1
        raise AssumptionError(
            "lambda + eps > 0 on the subinterval",
            f"lambda + eps = {kappa[k]:.3g} at x = {fine[k]:.6g} in [{points[0]:.6g}, {points[-1]:.6g}]",
        )
    rate = 2.0 * coeffs.b(fine) * kappa / coeffs.a(fine)
    growth_fine = cumulative_simpson(rate, x=fine, initial=0.0)
    decay_fine = np.exp(-growth_fine)
    spread = cumulative_cells(kappa * decay_fine, points)
    idx = np.arange(points.size) * SUBDIVISIONS
    return SideProfile(points, growth_fine[idx], decay_fine[idx], spread)


def density_profile(coeffs: CoefficientSet, eps: float, points: np.ndarray, start: int = 0) -> np.ndarray:
    """Unnormalized ``phi = a m`` on ``points`` with ``phi(points[start]) = 1``.

    Zero flux makes ``phi`` solve ``phi' = 2 b kappa phi / a``.
    """
    points = np.asarray(points, dtype=float)
    fine = refine(points)
    kappa = coeffs.lam(fine) + eps
    rate = 2.0 * coeffs.b(fine) * kappa / coeffs.a(fine)
    growth = cumulative_cells(rate, points)
    return np.exp(growth - growth[start])
