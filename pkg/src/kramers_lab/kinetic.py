"""Kinetic backward equation in phase space, its overdamped limit, the
two-scale correctors and the Lyapunov bound.

Kinetic equation (one space dimension):

    u_t = a u_yy / (2 mu^2) + (b - lambda y) u_y / mu + y u_x

Limit equation:

    u_t = a (u_x / lambda)_x / (2 lambda) + b u_x / lambda

Both are solved on bounded windows with homogeneous Neumann closure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .coeffs import CoefficientSet, Grid1D, PhaseGrid, grid_derivative
from .errors import AssumptionError, GridError, NumericalError
from .fields import SolutionField
from .table import ConvergenceTable, check_flag, check_le, keeping_rows

YMAX_FACTOR = 8.0
CFL = 0.9
TRANSPORT_SCHEMES = ("fromm", "upwind")


# -------------------------------------------------------------- grids


def required_ymax(coeffs: CoefficientSet, mu: float, factor: float = YMAX_FACTOR) -> float:
    """Velocity truncation ``factor * sqrt(Theta / (2 theta mu))``."""
    return factor * math.sqrt(coeffs.Theta / (2.0 * coeffs.theta * mu))


def phase_grid(
    coeffs: CoefficientSet,
    mu: float,
    x_window: tuple[float, float],
    nx: int,
    ny: int | None = None,
    resolution: float = 4.0,
    ymax_factor: float = YMAX_FACTOR,
) -> PhaseGrid:
    """Phase grid with the standard velocity truncation.

    Without ``ny`` the velocity spacing resolves the narrowest stationary
    velocity spread ``sqrt(theta / (2 Theta mu))`` with ``resolution``
    cells; ``ny`` is kept even so that ``y = 0`` is a node.
    """
    ymax = required_ymax(coeffs, mu, ymax_factor)
    if ny is None:
        spread = math.sqrt(coeffs.theta / (2.0 * coeffs.Theta * mu))
        ny = 2 * math.ceil(ymax * resolution / spread)
    if ny % 2:
        ny += 1
    return PhaseGrid(Grid1D.uniform(x_window[0], x_window[1], nx), Grid1D.uniform(-ymax, ymax, ny))


def stable_dt(grid: PhaseGrid, cfl: float = CFL) -> float:
    return cfl * grid.hx / grid.ymax


# ---------------------------------------------------------- transport


def _transport(u: np.ndarray, shift: np.ndarray, scheme: str) -> np.ndarray:
    """Sample ``u(x + y tau)`` per velocity column; ``shift = y tau / hx``, |shift| <= 1/2.

    ``fromm`` averages the two quadratic interpolants (centered and
    upwind-biased), ``upwind`` is linear interpolation from the upwind
    side.  Neumann closure by even reflection about the end nodes.
    """
    pad = np.pad(u, ((2, 2), (0, 0)), mode="reflect")
    n = u.shape[0]
    c0, cm, cp = pad[2 : n + 2], pad[1 : n + 1], pad[3 : n + 3]
    cmm, cpp = pad[0:n], pad[4 : n + 4]
    t = np.abs(shift)[None, :]
    pos = (shift >= 0)[None, :]
    ahead = np.where(pos, cp, cm)
    behind = np.where(pos, cm, cp)
    if scheme == "upwind":
        return c0 + t * (ahead - c0)
    if scheme != "fromm":
        raise ValueError(f"unknown transport scheme {scheme!r}; choose from {TRANSPORT_SCHEMES}")
    far = np.where(pos, cpp, cmm)
    centered = 0.5 * t * (t - 1.0) * behind + (1.0 - t * t) * c0 + 0.5 * t * (t + 1.0) * ahead
    biased = 0.5 * (t - 1.0) * (t - 2.0) * c0 - t * (t - 2.0) * ahead + 0.5 * t * (t - 1.0) * far
    return 0.5 * (centered + biased)


# --------------------------------------------------- velocity diffusion


def velocity_operator(coeffs: CoefficientSet, mu: float, grid: PhaseGrid) -> sp.csr_matrix:
    """Block-diagonal ``a u_yy / (2 mu^2) + (b - lambda y) u_y / mu``, one block per x node.

    Centered differences; Neumann rows at ``|y| = Ymax`` by ghost reflection.
    """
    x, y = grid.xgrid.nodes, grid.ygrid.nodes
    hy = grid.hy
    nx, ny = x.size, y.size
    diff = (coeffs.a(x) / (2.0 * mu**2))[:, None] * np.ones((1, ny))
    drift = (coeffs.b(x)[:, None] - coeffs.lam(x)[:, None] * y[None, :]) / mu
    lower = diff / hy**2 - drift / (2.0 * hy)
    upper = diff / hy**2 + drift / (2.0 * hy)
    diag = -2.0 * diff / hy**2
    # reflection: u_{-1} = u_1, u_{ny} = u_{ny-2}
    upper[:, 0] = 2.0 * diff[:, 0] / hy**2
    lower[:, -1] = 2.0 * diff[:, -1] / hy**2
    lower[:, 0] = 0.0
    upper[:, -1] = 0.0
    n = nx * ny
    sub = lower.ravel()[1:].copy()
    sup = upper.ravel()[:-1].copy()
    return sp.diags([sub, diag.ravel(), sup], [-1, 0, 1], shape=(n, n), format="csr")


# ------------------------------------------------------- kinetic solver


def solve_kinetic(
    coeffs: CoefficientSet,
    mu: float,
    u0: SolutionField,
    T: float,
    dt: float,
    transport: str = "fromm",
    on_step=None,
) -> SolutionField:
    """Strang splitting: half transport in x, Crank–Nicolson in y, half transport.

    ``dt`` is an upper bound; the step actually used is ``T / ceil(T/dt)``.
    ``on_step(k, values)`` is called after every step when given.
    """
    grid = u0.grid
    if not isinstance(grid, PhaseGrid):
        raise GridError("kinetic initial data must live on a PhaseGrid")
    if not mu > 0.0:
        raise AssumptionError("mu > 0", f"got {mu}")
    coeffs.require_positive_friction("the kinetic solver")
    need = required_ymax(coeffs, mu)
    if grid.ymax < need * (1.0 - 1e-12):
        raise GridError(f"Ymax = {grid.ymax:g} is below 8 sqrt(Theta/(2 theta mu)) = {need:g}")
    limit = stable_dt(grid)
    if not (dt > 0.0 and dt <= limit * (1.0 + 1e-12)):
        raise GridError(f"dt = {dt:g} violates the transport CFL bound {limit:g}")
    if transport not in TRANSPORT_SCHEMES:
        raise ValueError(f"unknown transport scheme {transport!r}")
    nsteps = max(1, math.ceil(T / dt - 1e-9))
    step = T / nsteps
    A = velocity_operator(coeffs, mu, grid)
    eye = sp.identity(A.shape[0], format="csr")
    implicit = splu((eye - 0.5 * step * A).tocsc())
    explicit = (eye + 0.5 * step * A).tocsr()
    shift = grid.ygrid.nodes * (0.5 * step) / grid.hx
    u = u0.values.copy()
    shape = u.shape
    for k in range(1, nsteps + 1):
        u = _transport(u, shift, transport)
        u = implicit.solve(explicit @ u.ravel()).reshape(shape)
        u = _transport(u, shift, transport)
        if not np.all(np.isfinite(u)):
            raise NumericalError(f"kinetic solver produced non-finite values at step {k}")
        if on_step is not None:
            on_step(k, u)
    return SolutionField(grid, u, time=u0.time + T)


def constant_phase_field(grid: PhaseGrid, value: float) -> SolutionField:
    return SolutionField(grid, np.full(grid.shape, float(value)))


def lift_initial(grid: PhaseGrid, u0) -> SolutionField:
    """Velocity-independent initial data ``u(x, y) = u0(x)``."""
    values = np.asarray(u0(grid.xgrid.nodes), dtype=float)
    return SolutionField(grid, np.repeat(values[:, None], grid.ygrid.size, axis=1))


def zero_velocity_slice(u: SolutionField) -> np.ndarray:
    y = u.grid.ygrid.nodes
    j = int(np.argmin(np.abs(y)))
    if abs(y[j]) > 1e-12 * u.grid.ymax:
        raise GridError("velocity grid has no node at y = 0")
    return u.values[:, j]


# ------------------------------------------------------- limit solver


def limit_operator(coeffs: CoefficientSet, grid: Grid1D) -> sp.csr_matrix:
    """``a (u_x/lambda)_x / (2 lambda)`` in flux form plus upwinded ``(b/lambda) u_x``.

    Face friction is the average of the two nodal values; Neumann closure
    by even reflection.
    """
    x, h = grid.nodes, grid.h
    lam = coeffs.lam(x)
    face = 0.5 * (lam[1:] + lam[:-1])
    weight = coeffs.a(x) / (2.0 * lam)
    speed = coeffs.b(x) / lam
    n = x.size
    inv = 1.0 / face
    to_right = np.concatenate((inv, [0.0]))
    to_left = np.concatenate(([0.0], inv))
    upper = weight * to_right / h**2
    lower = weight * to_left / h**2
    diag = -(upper + lower)
    # reflected ghost: F_{-1/2} = -F_{1/2}, F_{N+1/2} = -F_{N-1/2}
    upper[0] *= 2.0
    diag[0] = -upper[0]
    lower[-1] *= 2.0
    diag[-1] = -lower[-1]
    fwd = np.maximum(speed, 0.0) / h
    bwd = np.minimum(speed, 0.0) / h
    upper += fwd
    diag -= fwd
    lower -= bwd
    diag += bwd
    # at the edges the reflected neighbour is the inner node
    upper[0] -= bwd[0]
    lower[-1] += fwd[-1]
    return sp.diags([lower[1:], diag, upper[:-1]], [-1, 0, 1], shape=(n, n), format="csr")


def solve_limit_parabolic(
    coeffs: CoefficientSet, u0: SolutionField, T: float, dt: float, on_step=None
) -> SolutionField:
    """Crank–Nicolson for the limit equation; ``dt`` is rounded down to divide ``T``."""
    grid = u0.grid
    if not isinstance(grid, Grid1D):
        raise GridError("limit initial data must live on a Grid1D")
    coeffs.require_positive_friction("the limit parabolic solver")
    if not dt > 0.0:
        raise GridError(f"dt must be positive, got {dt}")
    nsteps = max(1, math.ceil(T / dt - 1e-9))
    step = T / nsteps
    A = limit_operator(coeffs, grid)
    eye = sp.identity(grid.size, format="csr")
    implicit = splu((eye - 0.5 * step * A).tocsc())
    explicit = (eye + 0.5 * step * A).tocsr()
    u = u0.values.copy()
    for k in range(1, nsteps + 1):
        u = implicit.solve(explicit @ u)
        if not np.all(np.isfinite(u)):
            raise NumericalError(f"limit solver produced non-finite values at step {k}")
        if on_step is not None:
            on_step(k, u)
    return SolutionField(grid, u, time=u0.time + T)


# --------------------------------------------------------- correctors


@dataclass(frozen=True)
class CorrectorSet:
    v: SolutionField
    w: SolutionField


def correctors(u: SolutionField, coeffs: CoefficientSet) -> CorrectorSet:
    """First corrector ``v = D u`` and second ``w = lambda D(v / lambda) / 2``."""
    grid = u.grid
    if not isinstance(grid, Grid1D) or grid.size < 5:
        raise GridError("correctors need a 1D grid with at least 5 nodes")
    lam = coeffs.lam(grid.nodes)
    v = grid_derivative(u.values, grid.h)
    w = 0.5 * lam * grid_derivative(v / lam, grid.h)
    return CorrectorSet(SolutionField(grid, v, u.time), SolutionField(grid, w, u.time))


def expansion_residual(
    coeffs: CoefficientSet,
    mu: float,
    u: SolutionField,
    probe: tuple[float, float] | None = None,
    y_probe: np.ndarray | None = None,
) -> float:
    """Max over the probe of ``|U_t - L^mu U|`` for ``U = u + mu y v/lambda + mu^2 y^2 w/lambda^2``.

    ``u_t`` is taken from the limit equation, ``u_t = a w/lambda^2 + b v/lambda``,
    and so are the time derivatives of the correctors.  x-derivatives use
    the same grid stencil as :func:`correctors`; y-derivatives are exact.
    Default probe: nodes at least 5 cells from the window edges, ``|y| <= 1``.
    """
    grid = u.grid
    x, h = grid.nodes, grid.h
    lam, a, b = coeffs.lam(x), coeffs.a(x), coeffs.b(x)
    cor = correctors(u, coeffs)
    v, w = cor.v.values, cor.w.values
    ut = a * w / lam**2 + b * v / lam
    vt = grid_derivative(ut, h)
    wt = 0.5 * lam * grid_derivative(vt / lam, h)
    p1, p2 = v / lam, w / lam**2
    dx_u, dx_p1, dx_p2 = grid_derivative(u.values, h), grid_derivative(p1, h), grid_derivative(p2, h)
    if probe is None:
        keep = np.zeros(x.size, dtype=bool)
        keep[5:-5] = True
    else:
        keep = (x >= probe[0] - 1e-12) & (x <= probe[1] + 1e-12)
    y = np.linspace(-1.0, 1.0, 21) if y_probe is None else np.asarray(y_probe, dtype=float)
    X = (slice(None), None)
    Y = y[None, :]
    U_t = ut[X] + mu * Y * (vt / lam)[X] + mu**2 * Y**2 * (wt / lam**2)[X]
    U_y = mu * p1[X] + 2.0 * mu**2 * Y * p2[X]
    U_yy = 2.0 * mu**2 * p2[X] * np.ones_like(Y)
    U_x = dx_u[X] + mu * Y * dx_p1[X] + mu**2 * Y**2 * dx_p2[X]
    L = a[X] * U_yy / (2.0 * mu**2) + (b[X] - lam[X] * Y) * U_y / mu + Y * U_x
    return float(np.max(np.abs(U_t - L)[keep]))


# ----------------------------------------------------------- Lyapunov


@dataclass(frozen=True)
class LyapunovResult:
    C: float
    c: float
    ok: bool
    worst_excess: float
    worst_node: tuple[float, float]


def lyapunov_generator(coeffs: CoefficientSet, mu: float, x, y):
    """``L^mu p`` for ``p = <x> + y^2/2`` with ``<x> = sqrt(1 + x^2)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return coeffs.a(x) / (2.0 * mu**2) + (coeffs.b(x) - coeffs.lam(x) * y) * y / mu + y * x / np.sqrt(1.0 + x * x)


def lyapunov_check(
    coeffs: CoefficientSet, mu: float, x_sample, y_sample, densify: int = 10
) -> LyapunovResult:
    """Constants ``(C, c)`` with ``L^mu p <= C - c y^2``, ``c = theta / (2 mu)``.

    For fixed ``x`` the left side plus ``c y^2`` is a concave quadratic in
    ``y``, maximized in closed form.  ``C`` is the largest of these maxima
    over the x-sample plus the linear-interpolation error bound
    ``max |second difference| / 8`` as a margin for points between
    samples.  The bound is then verified on a tensor sample ``densify``
    times finer in both directions.
    """
    coeffs.require_positive_friction("the Lyapunov bound")
    xs = np.sort(np.asarray(x_sample, dtype=float))
    ys = np.sort(np.asarray(y_sample, dtype=float))
    c = coeffs.theta / (2.0 * mu)
    sup_y = _sup_over_y(coeffs, mu, c, xs)
    margin = float(np.max(np.abs(np.diff(sup_y, 2)))) / 8.0 if xs.size > 2 else 0.0
    XS, YS = np.meshgrid(xs, ys, indexing="ij")
    sampled = float(np.max(lyapunov_generator(coeffs, mu, XS, YS) + c * YS**2))
    C = max(float(np.max(sup_y)) + margin, sampled)
    if not math.isfinite(C):
        raise NumericalError("Lyapunov constant is not finite")
    dense_x = _densify(xs, densify)
    dense_y = _densify(ys, densify)
    DX, DY = np.meshgrid(dense_x, dense_y, indexing="ij")
    excess = lyapunov_generator(coeffs, mu, DX, DY) + c * DY**2 - C
    k = np.unravel_index(int(np.argmax(excess)), excess.shape)
    worst = float(excess[k])
    node = (float(DX[k]), float(DY[k]))
    ok = worst <= 1e-12 * max(1.0, abs(C))
    if not ok:
        raise NumericalError(f"Lyapunov bound fails at (x, y) = {node} by {worst:.3e}")
    return LyapunovResult(C, c, ok, worst, node)


def _sup_over_y(coeffs, mu, c, x):
    curvature = coeffs.lam(x) / mu - c  # >= theta / (2 mu) > 0
    slope = coeffs.b(x) / mu + x / np.sqrt(1.0 + x * x)
    return coeffs.a(x) / (2.0 * mu**2) + slope**2 / (4.0 * curvature)


def _densify(values: np.ndarray, factor: int) -> np.ndarray:
    if values.size < 2:
        return values
    t = np.linspace(0.0, values.size - 1.0, factor * (values.size - 1) + 1)
    return np.interp(t, np.arange(values.size), values)


# ---------------------------------------------------- convergence sweep


KINETIC_COLUMNS = ["mu", "nx", "ny", "T", "dt", "error_abs", "error_rel"]


def gaussian_profile(width: float = 0.5, center: float = 0.0):
    return lambda x: np.exp(-((np.asarray(x) - center) ** 2) / (2.0 * width))


def kinetic_convergence_sweep(
    coeffs: CoefficientSet,
    mu_schedule,
    initial=None,
    T: float = 0.5,
    x_window: tuple[float, float] = (-4.0, 4.0),
    probe: tuple[float, float] = (-2.0, 2.0),
    nx: int = 160,
    resolution: float = 4.0,
    transport: str = "fromm",
    final_rel_tol: float | None = 0.05,
) -> ConvergenceTable:
    """Zero-velocity slice of the kinetic solution against the limit solution at time ``T``.

    The reference limit solution is computed on a grid four times finer
    with a small Crank–Nicolson step and sampled at the kinetic nodes.
    """
    mus = [float(m) for m in mu_schedule]
    if np.any(np.diff(mus) >= 0):
        raise AssumptionError("schedule", "schedule not decreasing")
    initial = gaussian_profile() if initial is None else initial
    coarse = Grid1D.uniform(x_window[0], x_window[1], nx)
    if probe[0] < coarse.lo + 5 * coarse.h - 1e-12 or probe[1] > coarse.hi - 5 * coarse.h + 1e-12:
        raise GridError("probe window must stay 5 cells away from the x-window edges")
    fine = coarse.refined(4)
    ref0 = SolutionField(fine, initial(fine.nodes))
    ref = solve_limit_parabolic(coeffs, ref0, T, min(fine.h, T / 400.0))
    limit = ref.values[::4]
    keep = (coarse.nodes >= probe[0] - 1e-12) & (coarse.nodes <= probe[1] + 1e-12)
    scale = float(np.max(np.abs(limit[keep])))
    table = ConvergenceTable("mu", list(KINETIC_COLUMNS))
    with keeping_rows(table):
        for mu in mus:
            grid = phase_grid(coeffs, mu, x_window, nx, resolution=resolution)
            dt = stable_dt(grid)
            u = solve_kinetic(coeffs, mu, lift_initial(grid, initial), T, dt, transport)
            err = float(np.max(np.abs(zero_velocity_slice(u) - limit)[keep]))
            used = T / max(1, math.ceil(T / dt - 1e-9))
            table.add_row(mu, grid.xgrid.size, grid.ygrid.size, T, used, err, err / scale)
    errs = table.column("error_rel")
    table.checks.append(
        check_flag("kinetic", "solve_kinetic", "probe error decreasing in mu", bool(np.all(np.diff(errs) < 0)),
                   measured=float(errs[-1]), tolerance=float(errs[0]))
    )
    if final_rel_tol is not None:
        table.checks.append(check_le("kinetic", "solve_kinetic", "relative probe error at smallest mu", errs[-1],
                                     final_rel_tol))
    return table
