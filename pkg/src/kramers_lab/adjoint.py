"""Adjoint densities: the regularized zero-flux problem and its limit.

The regularized density solves ``-((a m)'/kappa - 2 b m)' = 0`` with zero
flux at both ends and unit mass.  Its matrix is assembled as the exact
transpose of :func:`kramers_lab.elliptic.interior_operator`, so the
discrete Green identity with the elliptic solver holds to rounding.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, splu, spsolve

from .coeffs import Grid1D
from .elliptic import (
    EllipticProblem,
    _check_grid,
    _interval_points,
    _node_positions,
    eventually_decreasing,
    face_kappa,
    interior_operator,
    m_matrix_report,
)
from .errors import AssumptionError, NumericalError, SchemeError
from .fields import SolutionField
from .quadrature import density_profile
from .table import ConvergenceTable, check_flag, check_le, keeping_rows

MASS_TOL = 1e-10


@dataclass(frozen=True)
class AdjointSolution:
    m: SolutionField
    epsilon: float
    mass: float
    positivity_min: float
    continuity_gap: float = 0.0

    def __post_init__(self):
        if abs(self.mass - 1.0) > MASS_TOL:
            raise SchemeError(f"density mass {self.mass!r} differs from 1 by more than {MASS_TOL}")
        if not self.positivity_min > 0.0:
            raise SchemeError(f"density is not strictly positive (min {self.positivity_min!r})")


def trapezoid_mass(values: np.ndarray, grid: Grid1D) -> float:
    return float(grid.trapezoid_weights() @ np.asarray(values, dtype=float))


def normalize_density(values: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Rescale to unit trapezoid mass; any positive multiple maps to the same density."""
    return np.asarray(values, dtype=float) / trapezoid_mass(values, grid)


def _finish(values: np.ndarray, grid: Grid1D, eps: float, gap: float = 0.0) -> AdjointSolution:
    m = normalize_density(values, grid)
    if np.min(m) <= 0.0:
        k = int(np.argmin(m))
        raise SchemeError(f"non-positive density {m[k]:.3e} at node {k} (x={grid.nodes[k]:.6g}, eps={eps:g})")
    return AdjointSolution(SolutionField(grid, m), float(eps), trapezoid_mass(m, grid), float(m.min()), gap)


# ------------------------------------------------------------ assembly


def adjoint_operator(prob: EllipticProblem, grid: Grid1D, eps: float | None = None) -> sp.csr_matrix:
    """Divergence-form operator ``((a m)'/kappa)' - 2 (b m)'`` with zero-flux end rows.

    Interior rows are rows of the transposed elliptic operator; the end
    rows are half-cell balances ``+-2 G / h`` of the boundary face flux
    ``G_{k+1/2} = ((am)_{k+1} - (am)_k)/(h kappa) - (b_{k+1} m_{k+1} + b_k m_k)``.
    Trapezoid-weighted column sums vanish, which is the discrete
    statement that the operator conserves mass.
    """
    eps = prob.epsilon if eps is None else eps
    _check_grid(prob, grid)
    h, n = grid.h, grid.size
    A = interior_operator(prob, grid, eps).T.tolil()
    kf = face_kappa(prob, grid, eps)
    a, b = prob.coeffs.a(grid.nodes), prob.coeffs.b(grid.nodes)
    A[0, :] = 0.0
    A[n - 1, :] = 0.0
    A[0, 0] = 2.0 / h * (-a[0] / (h * kf[0]) - b[0])
    A[0, 1] = 2.0 / h * (a[1] / (h * kf[0]) - b[1])
    A[n - 1, n - 2] = -2.0 / h * (-a[n - 2] / (h * kf[-1]) - b[n - 2])
    A[n - 1, n - 1] = -2.0 / h * (a[n - 1] / (h * kf[-1]) - b[n - 1])
    return A.tocsr()


def solve_adjoint_direct(prob: EllipticProblem, grid: Grid1D, method: str = "recurrence") -> AdjointSolution:
    """Zero-flux density at ``epsilon > 0``: singular system closed by a mass row.

    The zero-flux rows force every face flux ``G_{k+1/2}`` to vanish,
    i.e. ``m_{k+1} (a_{k+1} - h b_{k+1} kappa) = m_k (a_k + h b_k kappa)``.
    ``method="recurrence"`` eliminates the system along this chain (exact
    and free of cancellation at small ``eps``), ``method="sparse"`` solves
    the bordered sparse system directly.  Either way the assembled
    operator is applied to the result as a residual check.
    """
    eps = prob.epsilon
    if not eps > 0.0:
        raise AssumptionError("epsilon > 0", f"the regularized adjoint needs epsilon > 0, got {eps}")
    A = adjoint_operator(prob, grid)
    if method == "recurrence":
        m = _chain_density(prob, grid, eps)
    elif method == "sparse":
        m = _bordered_solve(A, grid, eps)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"adjoint system has more than one null direction at eps={eps:g}")
    m = normalize_density(m, grid)
    row_scale = np.asarray(abs(A).sum(axis=1)).ravel() * float(np.max(np.abs(m)))
    backward = float(np.max(np.abs(A @ m) / row_scale))
    if backward > 1e-9:
        raise NumericalError(f"adjoint residual {backward:.3e} at eps={eps:g}; rank deficiency suspected")
    return _finish(m, grid, eps)


def _chain_density(prob: EllipticProblem, grid: Grid1D, eps: float) -> np.ndarray:
    h = grid.h
    kf = face_kappa(prob, grid, eps)
    a, b = prob.coeffs.a(grid.nodes), prob.coeffs.b(grid.nodes)
    ahead = a[1:] - h * b[1:] * kf
    if np.any(ahead == 0.0):
        k = int(np.flatnonzero(ahead == 0.0)[0]) + 1
        raise NumericalError(f"adjoint system has more than one null direction (node {k}, eps={eps:g})")
    ratios = (a[:-1] + h * b[:-1] * kf) / ahead
    return np.concatenate(([1.0], np.cumprod(ratios)))


def _bordered_solve(A: sp.csr_matrix, grid: Grid1D, eps: float) -> np.ndarray:
    n = grid.size
    B = A.tolil()
    scale = float(abs(A).max())
    B[n - 1, :] = scale * grid.trapezoid_weights()
    rhs = np.zeros(n)
    rhs[-1] = scale
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            return spsolve(B.tocsc(), rhs)
        except (MatrixRankWarning, RuntimeError) as exc:
            raise NumericalError(f"adjoint system has more than one null direction at eps={eps:g}: {exc}") from exc


def adjoint_quadrature(prob: EllipticProblem, grid: Grid1D) -> AdjointSolution:
    """First-integral oracle: ``m = phi / a`` with ``phi' = 2 b kappa phi / a``, normalized."""
    cs = prob.coeffs
    kappa_min = float(np.min(cs.lam(grid.nodes))) + prob.epsilon
    if kappa_min < 0.0:
        raise AssumptionError("lambda + eps >= 0", f"min {kappa_min:g}")
    phi = density_profile(cs, prob.epsilon, grid.nodes)
    return _finish(phi / cs.a(grid.nodes), grid, prob.epsilon)


def solve_adjoint_limit(prob: EllipticProblem, grid: Grid1D) -> AdjointSolution:
    """Piecewise closed form of the limit density.

    ``a m`` is constant on the closed dead zone; outside, zero flux gives
    ``(a m)' = 2 b lambda m``, integrated outward from the zone boundary
    with the matching value so that ``m`` is continuous.
    """
    cs, geom = prob.coeffs, prob.geom
    if not cs.has_dead_zone:
        raise AssumptionError("dead zone", f"{cs.name} has no region of vanishing friction")
    _check_grid(prob, grid)
    LU, LV = geom.LU, geom.LV
    phi = np.ones(grid.size)
    rpts, ridx = _interval_points(grid, LV, LU)
    lpts, lidx = _interval_points(grid, -LU, -LV)
    right = density_profile(cs, 0.0, rpts, start=0)
    left = density_profile(cs, 0.0, lpts, start=lpts.size - 1)
    phi[ridx] = right[_node_positions(rpts, grid, ridx)]
    phi[lidx] = left[_node_positions(lpts, grid, lidx)]
    inside = geom.in_dead_zone(grid.nodes)
    phi[inside] = 1.0
    # exterior branches evaluated at the zone boundary versus the interior value 1
    gap = max(abs(right[0] - 1.0), abs(left[-1] - 1.0))
    if gap > 1e-12:
        raise SchemeError(f"limit density discontinuous at the dead-zone boundary (gap {gap:.3e})")
    return _finish(phi / cs.a(grid.nodes), grid, 0.0, float(gap))


def limit_density(prob: EllipticProblem, grid: Grid1D) -> AdjointSolution:
    """Limit density: piecewise form with a dead zone, first integral at eps = 0 otherwise."""
    if prob.coeffs.has_dead_zone:
        return solve_adjoint_limit(prob.with_epsilon(0.0), grid)
    prob.coeffs.require_positive_friction("the limit density without a dead zone")
    return adjoint_quadrature(prob.with_epsilon(0.0), grid)


# ----------------------------------------------------------- iteration


@dataclass(frozen=True)
class IterationTrace:
    """Monotone iteration ``v_n = T((R - r) v_{n-1} + f)`` started at zero.

    ``iterates`` keeps every ``store_every``-th iterate plus the last one;
    ``masses`` and ``min_increment`` cover every iterate.
    """

    iterates: tuple[SolutionField, ...]
    r: float
    R: float
    f: SolutionField
    iterations: int
    converged: bool
    contraction: float
    min_increment: float
    masses: np.ndarray
    mass_bound: float

    @property
    def fixed_point(self) -> SolutionField:
        return self.iterates[-1]


def shift_parameter(prob: EllipticProblem, grid: Grid1D) -> float:
    """``R = 1 + max |row sum|`` of the negated adjoint operator (its zeroth-order part)."""
    A = adjoint_operator(prob, grid)
    rows = np.asarray(A.sum(axis=1)).ravel()
    return 1.0 + float(np.max(np.abs(rows)))


def solve_adjoint_iterative(
    prob: EllipticProblem,
    grid: Grid1D,
    r: float,
    f: np.ndarray | SolutionField,
    maxiter: int = 100000,
    tol: float = 1e-10,
    R: float | None = None,
    store_every: int = 1,
) -> IterationTrace:
    """Monotone iteration for ``(-A + r) v = f``, ``A`` the zero-flux adjoint operator.

    Each step solves ``(-A + R) v_n = (R - r) v_{n-1} + f``; the shifted
    matrix is checked to be an M-matrix, so the map is order preserving
    and the iterates increase to the fixed point.

    Stopping rule: the zero-flux density ``m`` is a positive eigenvector of
    the iteration matrix with eigenvalue ``q = (R - r)/R``, so in the norm
    ``|e|_m = max |e_j| / m_j`` the map contracts by exactly ``q``.  The
    loop stops once the resulting bound ``q/(1-q) |v_n - v_{n-1}|_m max(m)``
    on the sup-norm distance to the fixed point is below ``tol``.
    """
    if not prob.epsilon > 0.0:
        raise AssumptionError("epsilon > 0", "the iteration is defined for the regularized adjoint")
    fv = np.asarray(f.values if isinstance(f, SolutionField) else f, dtype=float)
    if fv.shape != (grid.size,) or np.min(fv) < 0.0:
        raise AssumptionError("f >= 0", "source must be a nonnegative grid field")
    A = adjoint_operator(prob, grid)
    if R is None:
        # any R above the measured bound keeps the M-matrix property; 2r keeps r < R
        R = max(1.0 + float(np.max(np.abs(np.asarray(A.sum(axis=1)).ravel()))), 2.0 * r)
    if not (0.0 < r < R):
        raise AssumptionError("0 < r < R", f"r={r:g}, R={R:g}")
    M = (-A + R * sp.identity(grid.size, format="csr")).tocsc()
    report = m_matrix_report(M)
    if not report.ok:
        raise SchemeError(f"shifted adjoint matrix is not an M-matrix: {report}")
    lu = splu(M)
    density = _chain_density(prob, grid, prob.epsilon)
    density /= density.max()
    q = (R - r) / R
    factor = q / (1.0 - q)
    weights = grid.trapezoid_weights()
    v = np.zeros(grid.size)
    stored = [SolutionField(grid, v.copy())]
    masses = [0.0]
    min_inc = np.inf
    converged = False
    bound = np.inf
    n = 1
    while n < maxiter:
        new = lu.solve((R - r) * v + fv)
        inc = new - v
        step_min = float(inc.min())
        min_inc = min(min_inc, step_min)
        if step_min < -1e-12 * max(1.0, float(np.max(np.abs(new)))):
            raise SchemeError(f"iteration lost monotonicity at step {n + 1} (decrease {step_min:.3e})")
        v = new
        n += 1
        masses.append(float(weights @ v))
        if n % store_every == 0:
            stored.append(SolutionField(grid, v.copy()))
        bound = factor * float(np.max(np.abs(inc) / density))
        if bound < tol:
            converged = True
            break
    if not converged:
        raise NumericalError(
            f"adjoint iteration did not converge in {maxiter} steps "
            f"(contraction {q:.9f}, remaining error bound {bound:.3e})"
        )
    if not np.array_equal(stored[-1].values, v):
        stored.append(SolutionField(grid, v.copy()))
    mass_bound = (grid.hi - grid.lo) * float(fv.max()) / r
    return IterationTrace(
        tuple(stored),
        float(r),
        float(R),
        SolutionField(grid, fv),
        n,
        converged,
        float(q),
        float(min_inc),
        np.array(masses),
        mass_bound,
    )


def solve_shifted_direct(prob: EllipticProblem, grid: Grid1D, r: float, f) -> SolutionField:
    """Direct solve of ``(-A + r) v = f``; the oracle for the iteration's fixed point."""
    fv = np.asarray(f.values if isinstance(f, SolutionField) else f, dtype=float)
    A = adjoint_operator(prob, grid)
    M = (-A + r * sp.identity(grid.size, format="csr")).tocsc()
    return SolutionField(grid, splu(M).solve(fv))


# --------------------------------------------------------------- sweep


def adjoint_convergence_sweep(
    prob: EllipticProblem,
    grid: Grid1D,
    eps_schedule,
    iterative: bool = False,
    r: float = 1.0,
    tol: float = 1e-10,
    maxiter: int = 200000,
    iterative_min_eps: float = 5e-2,
    final_tol_factor: float = 10.0,
) -> ConvergenceTable:
    """Regularized densities along the schedule against the limit density.

    With ``iterative`` the monotone iteration for the shifted problem
    (source ``r / |U|``) also runs at every ``eps >= iterative_min_eps``
    and its step count fills ``iterations_used`` (0 where skipped).
    """
    eps_schedule = [float(e) for e in eps_schedule]
    if any(e <= 0 for e in eps_schedule) or np.any(np.diff(eps_schedule) >= 0):
        raise AssumptionError("schedule", "schedule not decreasing (or not positive)")
    limit = limit_density(prob, grid)
    columns = ["epsilon", "h", "sup_distance_to_limit_m", "mass", "min_m"]
    if iterative:
        columns.append("iterations_used")
    table = ConvergenceTable("epsilon", columns)
    length = 2.0 * prob.geom.LU
    worst_fixed_point = 0.0
    mass_excess = -np.inf
    min_increment = np.inf
    with keeping_rows(table):
        for eps in eps_schedule:
            pe = prob.with_epsilon(eps)
            sol = solve_adjoint_direct(pe, grid)
            dist = sol.m.sup_distance(limit.m)
            row = [eps, grid.h, dist, sol.mass, sol.positivity_min]
            if iterative:
                used = 0
                if eps >= iterative_min_eps:
                    f = np.full(grid.size, r / length)
                    trace = solve_adjoint_iterative(pe, grid, r, f, maxiter=maxiter, tol=tol, store_every=10**9)
                    direct = solve_shifted_direct(pe, grid, r, f)
                    worst_fixed_point = max(worst_fixed_point, trace.fixed_point.sup_distance(direct))
                    mass_excess = max(mass_excess, float(trace.masses.max() - trace.mass_bound))
                    min_increment = min(min_increment, trace.min_increment)
                    used = trace.iterations
                row.append(used)
            table.add_row(*row)
    dists = table.column("sup_distance_to_limit_m")
    masses = table.column("mass")
    op = "adjoint_convergence_sweep"
    scale = float(np.max(limit.m.values))
    table.checks.append(check_le("adjoint", op, "mass = 1", float(np.max(np.abs(masses - 1.0))), MASS_TOL))
    table.checks.append(
        check_flag("adjoint", op, "strict positivity", bool(table.column("min_m").min() > 0),
                   measured=float(table.column("min_m").min()))
    )
    rounding = 1e-10 * scale
    table.checks.append(
        check_flag(
            "adjoint",
            op,
            "distance to limit eventually decreasing",
            eventually_decreasing(dists) or float(dists.max()) <= rounding,
            measured=float(dists[-1]),
            tolerance=float(dists[0]),
        )
    )
    table.checks.append(
        check_le("adjoint", op, "final distance <= 10 h^2 scale", float(dists[-1]),
                 final_tol_factor * grid.h**2 * scale + rounding)
    )
    if iterative:
        table.checks.append(
            check_le("adjoint", "solve_adjoint_iterative", "fixed point = direct solve", worst_fixed_point, 10 * tol)
        )
        if np.isfinite(min_increment):
            table.checks.append(
                check_flag("adjoint", "solve_adjoint_iterative", "iterates nodewise non-decreasing",
                           min_increment >= 0.0, measured=min_increment)
            )
            table.checks.append(
                check_le("adjoint", "solve_adjoint_iterative", "mass below r^-1 |U| max f", mass_excess, 0.0)
            )
    return table
