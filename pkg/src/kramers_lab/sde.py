"""Langevin dynamics with variable friction coupled to its overdamped limit.

The Langevin system

    dx = y dt,    mu dy = (b(x) - lambda(x) y) dt + sigma(x) dW

is advanced with a frozen-coefficient exponential Euler step for the
stiff velocity relaxation, and the limit equation

    dx = b(x)/lambda(x) dt + sigma(x)/lambda(x) dW

with Euler–Maruyama.  Both consume the same Gaussian increments.

Random streams: path ``i`` of master seed ``s`` draws from a Philox
generator keyed by ``SeedSequence(s, spawn_key=(i,))``, so any path can be
regenerated on its own and results do not depend on blocking or on how
many workers run.

In dimension ``n > 1`` every field is evaluated componentwise
(``b_i = b(x_i)``, ``lambda_i = lambda(x_i)``, ``sigma_i = sigma(x_i)``).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .coeffs import CoefficientSet
from .errors import AssumptionError, GridError, NumericalError

CONFIDENCE_Z = 1.96


@dataclass(frozen=True)
class PathPair:
    """Coupled trajectories, arrays of shape ``(nsteps + 1, n)``."""

    times: np.ndarray
    xmu: np.ndarray
    ymu: np.ndarray
    xlim: np.ndarray
    mu: float
    seed: int

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.linalg.norm(self.xmu - self.xlim, axis=-1)))


@dataclass(frozen=True)
class MCEstimate:
    value: float
    halfwidth: float
    npaths: int

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"probability estimate {self.value} outside [0, 1]")

    @classmethod
    def from_count(cls, hits: int, npaths: int) -> "MCEstimate":
        p = hits / npaths
        return cls(p, CONFIDENCE_Z * math.sqrt(p * (1.0 - p) / npaths), int(npaths))


def path_generator(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for one path."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def brownian_increments(seed: int, index: int, nsteps: int, dim: int, dt: float) -> np.ndarray:
    """Increments ``dW`` of shape ``(nsteps, dim)`` for path ``index``."""
    return math.sqrt(dt) * path_generator(seed, index).standard_normal((nsteps, dim))


def step_count(T: float, dt: float) -> int:
    if not (T > 0.0 and dt > 0.0):
        raise GridError(f"need T > 0 and dt > 0, got T={T}, dt={dt}")
    n = round(T / dt)
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise GridError(f"T/dt = {T / dt:.12g} is not an integer")
    return int(n)


def check_step(coeffs: CoefficientSet, mu: float, dt: float) -> None:
    if not mu > 0.0:
        raise AssumptionError("mu > 0", f"mass must be positive, got {mu}")
    coeffs.require_positive_friction("the Langevin integrator")
    limit = mu / (4.0 * coeffs.Theta)
    if dt > limit * (1.0 + 1e-12):
        raise GridError(f"dt={dt:g} exceeds mu/(4 Theta) = {limit:g}")


def default_dt(coeffs: CoefficientSet, mu: float, T: float, divisor: float = 8.0) -> float:
    """Largest ``dt <= mu/(divisor Theta)`` with ``T/dt`` an integer."""
    n = math.ceil(divisor * coeffs.Theta * T / mu - 1e-9)
    return T / n


def _langevin_step(coeffs, mu, x, y, dt, dw):
    lam = coeffs.lam(x)
    h = lam * dt / mu
    decay = np.exp(-h)
    phi = -np.expm1(-h) / h  # (1 - e^{-h}) / h, the averaged relaxation factor
    y_new = decay * y + phi * (coeffs.b(x) * dt + coeffs.sigma(x) * dw) / mu
    return x + y * dt, y_new


def _limit_step(coeffs, x, dt, dw):
    lam = coeffs.lam(x)
    return x + (coeffs.b(x) * dt + coeffs.sigma(x) * dw) / lam


def integrate_langevin(coeffs: CoefficientSet, mu: float, x0, p0, dt: float, dW: np.ndarray):
    """Full Langevin paths for increments ``dW`` (leading axis = time)."""
    check_step(coeffs, mu, dt)
    dW = np.asarray(dW, dtype=float)
    x = np.broadcast_to(np.asarray(x0, dtype=float), dW.shape[1:]).copy()
    y = np.broadcast_to(np.asarray(p0, dtype=float), dW.shape[1:]).copy()
    xs = np.empty((dW.shape[0] + 1,) + x.shape)
    ys = np.empty_like(xs)
    xs[0], ys[0] = x, y
    for k in range(dW.shape[0]):
        x, y = _langevin_step(coeffs, mu, x, y, dt, dW[k])
        xs[k + 1], ys[k + 1] = x, y
    return xs, ys


def integrate_limit(coeffs: CoefficientSet, x0, dt: float, dW: np.ndarray) -> np.ndarray:
    """Full limit-SDE paths for increments ``dW``."""
    coeffs.require_positive_friction("the limit SDE")
    dW = np.asarray(dW, dtype=float)
    x = np.broadcast_to(np.asarray(x0, dtype=float), dW.shape[1:]).copy()
    xs = np.empty((dW.shape[0] + 1,) + x.shape)
    xs[0] = x
    for k in range(dW.shape[0]):
        x = _limit_step(coeffs, x, dt, dW[k])
        xs[k + 1] = x
    return xs


def simulate_coupled(
    coeffs: CoefficientSet, mu: float, x0, p0, T: float, dt: float, seed: int, path_index: int = 0
) -> PathPair:
    """One coupled pair of paths driven by the stream of ``path_index``."""
    check_step(coeffs, mu, dt)
    nsteps = step_count(T, dt)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    p0 = np.broadcast_to(np.atleast_1d(np.asarray(p0, dtype=float)), x0.shape)
    dW = brownian_increments(seed, path_index, nsteps, x0.size, dt)
    xmu, ymu = integrate_langevin(coeffs, mu, x0, p0, dt, dW)
    xlim = integrate_limit(coeffs, x0, dt, dW)
    times = dt * np.arange(nsteps + 1)
    return PathPair(times, xmu, ymu, xlim, float(mu), int(seed))


def max_deviations(
    coeffs: CoefficientSet, mu: float, x0, p0, T: float, dt: float, seed: int, paths: range
) -> np.ndarray:
    """``max_k |xmu(t_k) - xlim(t_k)|`` for the given path indices, streamed in time."""
    check_step(coeffs, mu, dt)
    nsteps = step_count(T, dt)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    dim = x0.size
    dW = np.stack([brownian_increments(seed, i, nsteps, dim, dt) for i in paths], axis=1)
    x = np.broadcast_to(x0, dW.shape[1:]).copy()
    y = np.broadcast_to(np.broadcast_to(np.atleast_1d(p0), x0.shape), dW.shape[1:]).astype(float)
    xl = x.copy()
    worst = np.zeros(len(paths))
    for k in range(nsteps):
        x, y = _langevin_step(coeffs, mu, x, y, dt, dW[k])
        xl = _limit_step(coeffs, xl, dt, dW[k])
        np.maximum(worst, np.sqrt(np.sum((x - xl) ** 2, axis=-1)), out=worst)
    if not np.all(np.isfinite(worst)):
        raise NumericalError(f"non-finite path values at mu={mu:g}, dt={dt:g}")
    return worst


def estimate_sup_deviation(
    coeffs: CoefficientSet,
    mu: float,
    x0,
    p0,
    T: float,
    delta: float,
    dt: float,
    npaths: int,
    seed: int,
    block: int = 500,
    workers: int = 1,
) -> MCEstimate:
    """Fraction of paths whose sup deviation exceeds ``delta``, with a 95% half-width."""
    if npaths < 100:
        raise AssumptionError("npaths >= 100", f"got {npaths}")
    if delta < 0.0:
        raise AssumptionError("delta >= 0", f"got {delta}")
    blocks = [range(lo, min(lo + block, npaths)) for lo in range(0, npaths, block)]

    def run(paths):
        return max_deviations(coeffs, mu, x0, p0, T, dt, seed, paths)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(p) for p in blocks]
    worst = np.concatenate(parts)
    return MCEstimate.from_count(int(np.count_nonzero(worst > delta)), npaths)


def langevin_position_variance(t: float, mu: float) -> float:
    """Variance of ``x^mu(t)`` for ``lambda = sigma = 1``, ``b = 0`` and deterministic start.

    Closed form of the integrated Ornstein–Uhlenbeck second moment.
    """
    r = t / mu
    return t - 2.0 * mu * (-math.expm1(-r)) + 0.5 * mu * (-math.expm1(-2.0 * r))
