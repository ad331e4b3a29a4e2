"""Coefficient fields, friction profiles, interval geometry and grids.

All spatial work in the PDE modules is one-dimensional.  Coefficient
fields are vectorised callables ``f(x) -> ndarray``; catalog entries also
carry analytic first and second derivatives so solvers never have to
difference a closed-form field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy import integrate

from .errors import AssumptionError, CatalogError, GridError

Field = Callable[[np.ndarray], np.ndarray]

#: Number of points used by the structural sweep run on every built set.
SWEEP_POINTS = 1000
# The extrema sample is a 4x refinement of the sweep sample, so every sweep
# point is also an extrema point and measured bounds can never be exceeded.
_EXTREMA_REFINE = 4


def _const(value: float) -> Field:
    def f(x):
        return np.full(np.shape(x), float(value))

    return f


def grid_derivative(values: np.ndarray, h: float) -> np.ndarray:
    """Centered differences inside, second-order one-sided at both ends."""
    return np.gradient(np.asarray(values, dtype=float), h, edge_order=2)


# ---------------------------------------------------------------- grids


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid; build it with :meth:`uniform`."""

    nodes: np.ndarray
    h: float

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise GridError("a grid needs at least two nodes")
        steps = np.diff(nodes)
        if np.any(steps <= 0):
            raise GridError("grid nodes must be strictly increasing")
        h = (nodes[-1] - nodes[0]) / (nodes.size - 1)
        if np.max(np.abs(steps - h)) > 1e-9 * h:
            raise GridError("grid nodes are not uniformly spaced")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "h", float(h))

    @classmethod
    def uniform(cls, lo: float, hi: float, n_cells: int) -> "Grid1D":
        if n_cells < 1 or not hi > lo:
            raise GridError(f"invalid grid [{lo}, {hi}] with {n_cells} cells")
        nodes = np.linspace(lo, hi, int(n_cells) + 1)
        return cls(nodes, (hi - lo) / n_cells)

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def n_cells(self) -> int:
        return self.nodes.size - 1

    @property
    def lo(self) -> float:
        return float(self.nodes[0])

    @property
    def hi(self) -> float:
        return float(self.nodes[-1])

    @property
    def faces(self) -> np.ndarray:
        """Cell midpoints ``x_{k+1/2}``."""
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])

    def refined(self, factor: int = 2) -> "Grid1D":
        return Grid1D.uniform(self.lo, self.hi, self.n_cells * factor)

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.size, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w


@dataclass(frozen=True)
class PhaseGrid:
    """Tensor grid in (x, y); the velocity grid is symmetric about zero."""

    xgrid: Grid1D
    ygrid: Grid1D

    def __post_init__(self):
        if not self.ygrid.hi > 0 or abs(self.ygrid.lo + self.ygrid.hi) > 1e-12 * self.ygrid.hi:
            raise GridError("velocity grid must be [-Ymax, Ymax] with Ymax > 0")

    @property
    def hy(self) -> float:
        return self.ygrid.h

    @property
    def hx(self) -> float:
        return self.xgrid.h

    @property
    def ymax(self) -> float:
        return self.ygrid.hi

    @property
    def shape(self) -> tuple[int, int]:
        return (self.xgrid.size, self.ygrid.size)


# ------------------------------------------------------------ geometry


@dataclass(frozen=True)
class DomainGeometry:
    """``U = (-LU, LU)`` containing the dead zone ``V = (-LV, LV)``."""

    LU: float
    LV: float

    def __post_init__(self):
        if not (0.0 < self.LV < self.LU):
            raise AssumptionError(
                "closure of V inside U", f"need 0 < LV < LU, got LV={self.LV}, LU={self.LU}"
            )

    def signed_distance(self, x):
        """Distance to the dead-zone boundary, negative inside the zone."""
        return np.abs(x) - self.LV

    @property
    def length(self) -> float:
        return 2.0 * self.LU

    def in_dead_zone(self, x, slack: float = 1e-12):
        """Mask of points in the closed dead zone."""
        return np.abs(x) <= self.LV * (1.0 + slack)


def signed_distance(geom: DomainGeometry, x):
    return geom.signed_distance(x)


# ------------------------------------------------------ friction profile


@dataclass(frozen=True)
class FrictionProfile:
    """One-sided profile ``lambda0`` with the growth bound ``r lambda0'(r) <= C0 lambda0(r)``.

    ``derivative``, ``primitive`` and ``first_moment`` are optional closed
    forms.  Without them the derivative falls back to centered differences
    and the integrals to adaptive quadrature.
    """

    lambda0: Field
    C0: float
    delta0: float = math.inf
    derivative_fn: Field | None = None
    primitive_fn: Field | None = None
    first_moment_fn: Field | None = None
    label: str = "custom"

    def __call__(self, r):
        return self.lambda0(np.asarray(r, dtype=float))

    def derivative(self, r, step: float = 1e-6):
        r = np.asarray(r, dtype=float)
        if self.derivative_fn is not None:
            return self.derivative_fn(r)
        return (self.lambda0(r + step) - self.lambda0(r - step)) / (2.0 * step)

    def _quad(self, weight: Callable[[float], float], r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        for i, ri in enumerate(r.flat):
            if ri <= 0.0:
                out.flat[i] = 0.0
            else:
                out.flat[i] = integrate.quad(weight, 0.0, ri, epsabs=1e-14, epsrel=1e-12)[0]
        return out

    def primitive(self, r):
        """``Lambda0(r)``: integral of the profile from 0 to ``r`` (zero for r <= 0)."""
        if self.primitive_fn is not None:
            return self.primitive_fn(np.asarray(r, dtype=float))
        return self._quad(lambda t: float(self.lambda0(np.array(t))), r).reshape(np.shape(r))

    def first_moment(self, r):
        """Integral of ``t * lambda0(t)`` from 0 to ``r``."""
        if self.first_moment_fn is not None:
            return self.first_moment_fn(np.asarray(r, dtype=float))
        return self._quad(lambda t: t * float(self.lambda0(np.array(t))), r).reshape(np.shape(r))

    def barrier_integral(self, r, K: float, eps: float):
        """``int_0^r (lambda0(t) + eps)(1 - K t) dt`` for any real ``r``.

        The profile vanishes on the negative axis, so only the ``eps`` part
        survives there.
        """
        r = np.asarray(r, dtype=float)
        profile_part = self.primitive(r) - K * self.first_moment(r)
        return profile_part + eps * (r - 0.5 * K * r * r)


def power_profile(power: float = 3.0, scale: float = 1.0, delta0: float = math.inf) -> FrictionProfile:
    """``scale * max(r, 0)**power``; satisfies the growth bound with ``C0 = power``."""
    if power < 1.0 or scale <= 0.0:
        raise AssumptionError("friction profile", f"need power >= 1 and scale > 0, got {power}, {scale}")
    p = float(power)
    s = float(scale)

    def lam0(r):
        return s * np.maximum(r, 0.0) ** p

    def dlam0(r):
        return s * p * np.maximum(r, 0.0) ** (p - 1.0)

    def prim(r):
        return s * np.maximum(r, 0.0) ** (p + 1.0) / (p + 1.0)

    def moment(r):
        return s * np.maximum(r, 0.0) ** (p + 2.0) / (p + 2.0)

    return FrictionProfile(lam0, p, delta0, dlam0, prim, moment, label=f"power-{p:g}")


@dataclass(frozen=True)
class ProfileReport:
    samples: int
    min_increment: float
    max_growth_excess: float
    tolerance: float
    ok: bool


def check_profile(
    profile: FrictionProfile, r_max: float, n: int = SWEEP_POINTS, seed: int = 0, analytic: bool = True
) -> ProfileReport:
    """Random-sample check of monotonicity and of the growth bound on ``(0, r_max]``.

    With ``analytic=False`` the derivative is always taken by centered
    differences, which loosens the tolerance to 1e-6.
    """
    rng = np.random.default_rng(seed)
    r = np.sort(r_max * (1.0 - rng.random(n)))  # samples in (0, r_max]
    values = profile(r)
    if analytic:
        slope, tol = profile.derivative(r), 1e-12
    else:
        step = 1e-6
        slope, tol = (profile(r + step) - profile(r - step)) / (2 * step), 1e-6
    scale = max(1.0, float(np.max(np.abs(values))))
    min_inc = float(np.min(np.diff(values))) if n > 1 else 0.0
    excess = float(np.max(r * slope - profile.C0 * values))
    ok = bool(np.all(values > 0) and min_inc >= -tol * scale and excess <= tol * scale)
    return ProfileReport(n, min_inc, excess, tol * scale, ok)


# --------------------------------------------------------- coefficients


@dataclass(frozen=True)
class CoefficientSet:
    """The fields ``a, b, sigma, lambda`` plus the measured bounds ``theta, Theta``.

    ``theta``/``Theta`` bound ``a`` and, when the friction is strictly
    positive, also ``lambda``.  ``lam_min``/``lam_max`` are stored
    separately so solvers can tell the two regimes apart.
    """

    name: str
    a: Field
    b: Field
    sigma: Field
    lam: Field
    da: Field
    d2a: Field
    db: Field
    dlam: Field
    theta: float
    Theta: float
    lam_min: float
    lam_max: float
    sample_domain: tuple[float, float]
    params: tuple = ()
    geometry: DomainGeometry | None = None
    profile: FrictionProfile | None = None

    @property
    def positive_friction(self) -> bool:
        return self.lam_min > 0.0

    @property
    def has_dead_zone(self) -> bool:
        return self.geometry is not None and self.profile is not None and self.lam_min == 0.0

    def require_positive_friction(self, who: str) -> None:
        if not self.positive_friction:
            raise AssumptionError(
                "friction bound theta <= lambda",
                f"{who} needs friction bounded away from zero; {self.name} has min lambda = {self.lam_min:g}",
            )

    def param(self, key: str, default=None):
        return dict(self.params).get(key, default)


def _extrema_sample(lo: float, hi: float) -> np.ndarray:
    return np.linspace(lo, hi, _EXTREMA_REFINE * (SWEEP_POINTS - 1) + 1)


def _assemble(
    name: str,
    a: Field,
    b: Field,
    lam: Field,
    da: Field,
    d2a: Field,
    db: Field,
    dlam: Field,
    domain: tuple[float, float],
    params: Mapping,
    geometry: DomainGeometry | None = None,
    profile: FrictionProfile | None = None,
) -> CoefficientSet:
    xs = _extrema_sample(*domain)
    av, lv = a(xs), lam(xs)
    if not (np.all(np.isfinite(av)) and np.all(np.isfinite(lv)) and np.all(np.isfinite(b(xs)))):
        raise AssumptionError("bounded coefficients", f"{name} has non-finite values on {domain}")
    if np.min(av) <= 0.0:
        k = int(np.argmin(av))
        raise AssumptionError(
            "ellipticity theta <= a", f"{name}: a({xs[k]:.6g}) = {av[k]:.6g} is not positive"
        )
    if np.min(lv) < 0.0:
        k = int(np.argmin(lv))
        raise AssumptionError(
            "friction bound 0 <= lambda", f"{name}: lambda({xs[k]:.6g}) = {lv[k]:.6g} is negative"
        )
    lam_min, lam_max = float(np.min(lv)), float(np.max(lv))
    theta = float(np.min(av))
    if lam_min > 0.0:
        theta = min(theta, lam_min)
    Theta = max(float(np.max(av)), lam_max)

    def sigma(x):
        return np.sqrt(a(x))

    cs = CoefficientSet(
        name=name,
        a=a,
        b=b,
        sigma=sigma,
        lam=lam,
        da=da,
        d2a=d2a,
        db=db,
        dlam=dlam,
        theta=theta,
        Theta=Theta,
        lam_min=lam_min,
        lam_max=lam_max,
        sample_domain=(float(domain[0]), float(domain[1])),
        params=tuple(sorted((k, _freeze(v)) for k, v in params.items())),
        geometry=geometry,
        profile=profile,
    )
    validate_coefficients(cs)
    return cs


def _freeze(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return tuple(float(t) for t in v)
    return v


def validate_coefficients(cs: CoefficientSet, n: int = SWEEP_POINTS) -> int:
    """Sweep ``n`` points of the sample domain and check every structural bound.

    Returns the number of points checked; raises :class:`AssumptionError`
    naming the first violated assumption.
    """
    xs = np.linspace(*cs.sample_domain, n)
    av, lv, sv = cs.a(xs), cs.lam(xs), cs.sigma(xs)
    tol = 1e-12 * max(1.0, cs.Theta)

    def fail(assumption, mask, values):
        k = int(np.flatnonzero(mask)[0])
        raise AssumptionError(assumption, f"{cs.name}: violated at x={xs[k]:.6g} (value {values[k]:.6g})")

    bad = (av < cs.theta - tol) | (av > cs.Theta + tol)
    if bad.any():
        fail("ellipticity theta <= a <= Theta", bad, av)
    bad = np.abs(av - sv * sv) > 1e-12 * np.maximum(1.0, av)
    if bad.any():
        fail("a = sigma^2", bad, av - sv * sv)
    if cs.positive_friction:
        bad = (lv < cs.theta - tol) | (lv > cs.Theta + tol)
        if bad.any():
            fail("friction bound theta <= lambda <= Theta", bad, lv)
    else:
        bad = (lv < 0.0) | (lv > cs.Theta + tol)
        if bad.any():
            fail("friction bound 0 <= lambda <= Theta", bad, lv)
    if cs.geometry is not None and cs.profile is not None:
        inside = cs.geometry.in_dead_zone(xs)
        bad = inside & (lv != 0.0)
        if bad.any():
            fail("lambda vanishes on the closed dead zone", bad, lv)
        bad = ~inside & (lv <= 0.0)
        if bad.any():
            fail("lambda positive outside the dead zone", bad, lv)
        d = cs.geometry.signed_distance(xs)
        near = np.abs(d) < cs.profile.delta0
        bad = near & (np.abs(lv - cs.profile(d)) > tol)
        if bad.any():
            fail("lambda = lambda0(d) near the dead-zone boundary", bad, lv)
    return n


# ------------------------------------------------------------- catalog

CATALOG = ("constant", "linear-drift", "sinusoidal-friction", "smooth-bump-friction", "tabulated")

_DEFAULT_PARAMS: dict[str, dict] = {
    "constant": {"a": 1.0, "b": 0.0, "lam": 1.0, "x_lo": -5.0, "x_hi": 5.0},
    "linear-drift": {"a": 1.0, "b0": 0.0, "b1": -1.0, "lam": 1.0, "x_lo": -5.0, "x_hi": 5.0},
    "sinusoidal-friction": {"lam0": 2.0, "lam1": 1.0, "a": 1.0, "b": 0.0, "x_lo": -5.0, "x_hi": 5.0},
    "smooth-bump-friction": {
        "LU": 1.5,
        "LV": 0.5,
        "power": 3.0,
        "scale": 1.0,
        "a0": 1.0,
        "a1": 0.0,
        "a2": 0.0,
        "b0": 0.0,
        "b1": 0.0,
    },
    "tabulated": {"nodes": None, "a": None, "b": None, "lam": None},
}


def catalog_defaults(name: str) -> dict:
    if name not in _DEFAULT_PARAMS:
        raise CatalogError(f"unknown catalog name {name!r} (key 'catalog'); known: {', '.join(CATALOG)}")
    return dict(_DEFAULT_PARAMS[name])


def builtin_coefficients(name: str, params: Mapping | None = None) -> CoefficientSet:
    """Build a catalog coefficient set, filling unspecified parameters with defaults.

    Catalog entries:

    ``constant``
        ``a, b, lam`` constants on ``[x_lo, x_hi]``.
    ``linear-drift``
        ``b(x) = b0 + b1 x`` with constant ``a, lam``.
    ``sinusoidal-friction``
        ``lambda(x) = lam0 + lam1 sin x`` with constant ``a, b``.
    ``smooth-bump-friction``
        ``lambda(x) = scale * max(|x| - LV, 0)**power`` on ``[-LU, LU]``,
        ``a = a0 + a1 x + a2 x^2``, ``b = b0 + b1 x``.
    ``tabulated``
        arrays ``nodes, a, b, lam`` interpolated linearly.
    """
    merged = catalog_defaults(name)
    for key, value in (params or {}).items():
        if key not in merged:
            raise CatalogError(f"unknown parameter {key!r} for catalog {name!r}")
        merged[key] = value
    return _BUILDERS[name](merged)


def _build_constant(p):
    a, b, lam = float(p["a"]), float(p["b"]), float(p["lam"])
    zero = _const(0.0)
    return _assemble(
        "constant", _const(a), _const(b), _const(lam), zero, zero, zero, zero, (p["x_lo"], p["x_hi"]), p
    )


def _build_linear_drift(p):
    a, b0, b1, lam = float(p["a"]), float(p["b0"]), float(p["b1"]), float(p["lam"])
    zero = _const(0.0)
    return _assemble(
        "linear-drift",
        _const(a),
        lambda x: b0 + b1 * np.asarray(x, dtype=float),
        _const(lam),
        zero,
        zero,
        _const(b1),
        zero,
        (p["x_lo"], p["x_hi"]),
        p,
    )


def _build_sinusoidal(p):
    l0, l1, a, b = float(p["lam0"]), float(p["lam1"]), float(p["a"]), float(p["b"])
    zero = _const(0.0)
    return _assemble(
        "sinusoidal-friction",
        _const(a),
        _const(b),
        lambda x: l0 + l1 * np.sin(x),
        zero,
        zero,
        zero,
        lambda x: l1 * np.cos(x),
        (p["x_lo"], p["x_hi"]),
        p,
    )


def _build_smooth_bump(p):
    geom = DomainGeometry(float(p["LU"]), float(p["LV"]))
    prof = power_profile(float(p["power"]), float(p["scale"]))
    a0, a1, a2 = float(p["a0"]), float(p["a1"]), float(p["a2"])
    b0, b1 = float(p["b0"]), float(p["b1"])
    LV = geom.LV

    def lam(x):
        return prof(np.abs(x) - LV)

    def dlam(x):
        x = np.asarray(x, dtype=float)
        return np.sign(x) * prof.derivative(np.abs(x) - LV)

    return _assemble(
        "smooth-bump-friction",
        lambda x: a0 + a1 * np.asarray(x, dtype=float) + a2 * np.asarray(x, dtype=float) ** 2,
        lambda x: b0 + b1 * np.asarray(x, dtype=float),
        lam,
        lambda x: a1 + 2.0 * a2 * np.asarray(x, dtype=float),
        _const(2.0 * a2),
        _const(b1),
        dlam,
        (-geom.LU, geom.LU),
        p,
        geometry=geom,
        profile=prof,
    )


def _build_tabulated(p):
    missing = [k for k in ("nodes", "a", "b", "lam") if p[k] is None]
    if missing:
        raise CatalogError(f"tabulated catalog needs arrays for {', '.join(missing)}")
    nodes = np.asarray(p["nodes"], dtype=float)
    tables = {k: np.asarray(p[k], dtype=float) for k in ("a", "b", "lam")}
    if nodes.ndim != 1 or nodes.size < 3 or np.any(np.diff(nodes) <= 0):
        raise GridError("tabulated nodes must be strictly increasing with at least 3 entries")
    for k, v in tables.items():
        if v.shape != nodes.shape:
            raise GridError(f"tabulated field {k!r} has {v.size} values for {nodes.size} nodes")
    step = 1e-3 * float(np.min(np.diff(nodes)))

    def interp(vals):
        return lambda x: np.interp(x, nodes, vals)

    def central(f):
        return lambda x: (f(np.asarray(x) + step) - f(np.asarray(x) - step)) / (2.0 * step)

    def central2(f):
        return lambda x: (f(np.asarray(x) + step) - 2.0 * f(np.asarray(x)) + f(np.asarray(x) - step)) / step**2

    a, b, lam = interp(tables["a"]), interp(tables["b"]), interp(tables["lam"])
    return _assemble(
        "tabulated", a, b, lam, central(a), central2(a), central(b), central(lam), (nodes[0], nodes[-1]), p
    )


_BUILDERS = {
    "constant": _build_constant,
    "linear-drift": _build_linear_drift,
    "sinusoidal-friction": _build_sinusoidal,
    "smooth-bump-friction": _build_smooth_bump,
    "tabulated": _build_tabulated,
}


def with_overrides(cs: CoefficientSet, **fields) -> CoefficientSet:
    """Copy of ``cs`` with some fields replaced and no re-validation.

    Used to build degenerate variants (for example zero noise) for
    deterministic consistency checks of the SDE integrators.
    """
    from dataclasses import replace

    return replace(cs, **fields)


__all__ = [
    "CATALOG",
    "CoefficientSet",
    "DomainGeometry",
    "FrictionProfile",
    "Grid1D",
    "PhaseGrid",
    "ProfileReport",
    "builtin_coefficients",
    "catalog_defaults",
    "check_profile",
    "grid_derivative",
    "power_profile",
    "signed_distance",
    "validate_coefficients",
    "with_overrides",
]
