"""Experiment configuration: one TOML file per experiment, flat keys.

Every key except ``experiment`` has a documented default.  Catalog
parameters go in an optional ``[params]`` table.  Loading fills in the
defaults and records which keys were filled, so a report can show the
complete configuration that actually ran.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import tomli_w

from .coeffs import CATALOG, CoefficientSet, builtin_coefficients
from .errors import CatalogError, ConfigError, KramersLabError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

EXPERIMENTS = ("sk-sde", "sk-pde", "friction-elliptic", "friction-adjoint", "verify-all")
STOCHASTIC = ("sk-sde",)
DEFAULT_OUTPUT = "kramers_lab_output"
DEFAULT_SEED = 2024

_GEOMETRIC = [2.0**-k for k in range(1, 13)]


@dataclass(frozen=True)
class Key:
    kind: str  # float, int, bool, str, floats, pair
    default: Any
    doc: str
    positive: bool = False


_SHARED = {
    "catalog": Key("str", None, "coefficient catalog entry"),
    "output_dir": Key("str", DEFAULT_OUTPUT, "directory for CSV tables and the report"),
}

SCHEMA: dict[str, dict[str, Key]] = {
    "sk-sde": {
        "mu_schedule": Key("floats", [1e-1, 1e-2, 1e-3], "masses, strictly decreasing", True),
        "T": Key("float", 1.0, "time horizon", True),
        "delta": Key("float", 0.25, "deviation threshold"),
        "npaths": Key("int", 2000, "Monte Carlo paths per mass", True),
        "seed": Key("int", None, "master seed (required)"),
        "x0": Key("floats", [0.0], "initial position"),
        "p0": Key("floats", [0.0], "initial velocity"),
        "dt": Key("floats", None, "time step per mass; default mu/(8 Theta) rounded to divide T", True),
        "workers": Key("int", 1, "threads for path blocks", True),
        "block": Key("int", 500, "paths per block", True),
        "final_estimate_tol": Key("float", 0.05, "bound on the estimate at the smallest mass"),
    },
    "sk-pde": {
        "mu_schedule": Key("floats", [0.1, 0.05, 0.02], "masses, strictly decreasing", True),
        "T": Key("float", 0.5, "time horizon", True),
        "x_window": Key("pair", [-4.0, 4.0], "computational x-window"),
        "probe": Key("pair", [-2.0, 2.0], "x-window of the error metric"),
        "nx": Key("int", 160, "x cells", True),
        "resolution": Key("float", 4.0, "velocity cells per narrowest velocity spread", True),
        "transport": Key("str", "fromm", "x transport scheme: fromm or upwind"),
        "initial_width": Key("float", 0.5, "variance of the Gaussian initial datum", True),
        "final_rel_tol": Key("float", 0.05, "relative probe error bound at the smallest mass"),
        "expansion_mu": Key("pair", [0.1, 0.05], "mass pair for the expansion residual ratio"),
        "expansion_cells": Key("int", 320, "x cells of the limit solution used by the expansion check", True),
        "ratio_band": Key("pair", [1.6, 2.4], "accepted residual ratio"),
    },
    "friction-elliptic": {
        "eps_schedule": Key("floats", _GEOMETRIC, "regularizations, strictly decreasing", True),
        "n_cells": Key("int", 300, "grid cells on [-LU, LU]", True),
        "g_left": Key("float", 0.0, "Dirichlet value at -LU"),
        "g_right": Key("float", 1.0, "Dirichlet value at LU"),
        "LU": Key("float", None, "outer half-width; default from the catalog", True),
        "LV": Key("float", None, "dead-zone half-width; default from the catalog", True),
        "osc_slack": Key("float", 1e-10, "allowed increase of osc_V between steps"),
        "final_osc_tol": Key("float", 1e-3, "osc_V bound at the smallest eps"),
        "final_distance_tol": Key("float", 1e-2, "distance-to-limit bound at the smallest eps"),
        "barrier_cells": Key("int", 6000, "grid cells for the barrier check", True),
        "gamma0": Key("float", 0.2, "reference gamma for the Dirichlet constant", True),
        "dirichlet_gammas": Key("floats", [0.1, 0.05], "gammas checked against the fitted constant", True),
    },
    "friction-adjoint": {
        "eps_schedule": Key("floats", _GEOMETRIC, "regularizations, strictly decreasing", True),
        "n_cells": Key("int", 300, "grid cells on [-LU, LU]", True),
        "LU": Key("float", None, "outer half-width; default from the catalog", True),
        "LV": Key("float", None, "dead-zone half-width; default from the catalog", True),
        "iterative": Key("bool", True, "also run the monotone iteration"),
        "r": Key("float", 1.0, "shift of the iterated problem", True),
        "tol": Key("float", 1e-10, "iteration stopping tolerance", True),
        "maxiter": Key("int", 200000, "iteration cap", True),
        "iterative_min_eps": Key("float", 0.05, "smallest eps at which the iteration runs", True),
        "final_tol_factor": Key("float", 10.0, "final distance bound, in units of h^2 max(m)", True),
    },
    "verify-all": {
        "seed": Key("int", DEFAULT_SEED, "master seed of the stochastic checks"),
        "npaths": Key("int", 2000, "Monte Carlo paths per mass", True),
    },
}

DEFAULT_CATALOG = {
    "sk-sde": "constant",
    "sk-pde": "sinusoidal-friction",
    "friction-elliptic": "smooth-bump-friction",
    "friction-adjoint": "smooth-bump-friction",
    "verify-all": None,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    catalog: str | None
    params: dict
    settings: dict
    output_dir: str
    defaulted: tuple[str, ...] = ()
    source: str | None = None

    def __getitem__(self, key: str):
        return self.settings[key]

    def canonical(self) -> dict:
        """Everything that determines the results (the output directory does not)."""
        return {"experiment": self.experiment, "catalog": self.catalog, "params": self.params, **self.settings}

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), default=_jsonable)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def coefficients(self) -> CoefficientSet:
        if self.catalog is None:
            raise ConfigError("key 'catalog': no catalog selected")
        return builtin_coefficients(self.catalog, self.params)

    def with_output_dir(self, path: str) -> "ExperimentConfig":
        return ExperimentConfig(self.experiment, self.catalog, self.params, self.settings, str(path),
                                self.defaulted, self.source)

    def to_toml(self) -> str:
        doc = {"experiment": self.experiment}
        if self.catalog is not None:
            doc["catalog"] = self.catalog
        doc["output_dir"] = self.output_dir
        doc.update({k: v for k, v in self.settings.items() if v is not None})
        if self.params:
            doc["params"] = {k: v.tolist() if hasattr(v, "tolist") else v for k, v in self.params.items()}
        return tomli_w.dumps(doc)


def _jsonable(v):
    if hasattr(v, "tolist"):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v).__name__}")


# -------------------------------------------------------------- loading


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate an experiment file; errors carry the line and the key."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror or exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    return build_config(raw, source=str(path), text=text)


def build_config(raw: dict, source: str | None = None, text: str | None = None) -> ExperimentConfig:
    def fail(key: str, constraint: str):
        where = source or "<config>"
        line = _line_of(text, key)
        if line is not None:
            where = f"{where}:{line}"
        raise ConfigError(f"{where}: key '{key}': {constraint}")

    raw = dict(raw)
    experiment = raw.pop("experiment", None)
    if experiment is None:
        fail("experiment", "required; one of " + ", ".join(EXPERIMENTS))
    if experiment not in EXPERIMENTS:
        fail("experiment", f"unknown experiment {experiment!r}; one of " + ", ".join(EXPERIMENTS))
    schema = SCHEMA[experiment]
    params = raw.pop("params", {})
    if not isinstance(params, dict):
        fail("params", "must be a table of catalog parameters")
    defaulted = []
    catalog = raw.pop("catalog", None)
    if catalog is None:
        catalog = DEFAULT_CATALOG[experiment]
        defaulted.append("catalog")
    elif not isinstance(catalog, str) or catalog not in CATALOG:
        fail("catalog", f"unknown catalog {catalog!r}; one of " + ", ".join(CATALOG))
    if params and catalog is None:
        fail("params", "catalog parameters need a catalog")
    output_dir = raw.pop("output_dir", None)
    if output_dir is None:
        output_dir = DEFAULT_OUTPUT
        defaulted.append("output_dir")
    elif not isinstance(output_dir, str):
        fail("output_dir", "must be a string")
    for key in raw:
        if key not in schema:
            fail(key, f"unknown key for experiment {experiment!r}")
    settings = {}
    for key, spec in schema.items():
        if key in raw:
            settings[key] = _coerce(raw[key], spec, lambda c, k=key: fail(k, c))
        else:
            settings[key] = spec.default if not isinstance(spec.default, list) else list(spec.default)
            defaulted.append(key)
    coeffs = None
    if catalog is not None:
        try:
            coeffs = builtin_coefficients(catalog, params)
        except CatalogError as exc:
            bad = re.search(r"parameter '([^']+)'", str(exc))
            fail(f"params.{bad.group(1)}" if bad else "catalog", str(exc))
        except (KramersLabError, ValueError, TypeError) as exc:
            fail("params", str(exc))
    _validate(experiment, settings, coeffs, defaulted, fail)
    return ExperimentConfig(experiment, catalog, dict(params), settings, output_dir, tuple(defaulted), source)


def _line_of(text: str | None, key: str) -> int | None:
    if not text:
        return None
    name = key.split(".")[-1]
    pattern = re.compile(rf'^\s*(?:params\.)?"?{re.escape(name)}"?\s*=')
    for k, line in enumerate(text.splitlines(), start=1):
        if pattern.match(line):
            return k
    return None


def _coerce(value, spec: Key, fail):
    kind = spec.kind

    def number(v, integer=False):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            fail(f"expected a {'integer' if integer else 'number'}, got {v!r}")
        if integer and not isinstance(v, int):
            fail(f"expected an integer, got {v!r}")
        if not math.isfinite(v):
            fail("must be finite")
        if spec.positive and not v > 0:
            fail(f"must be positive, got {v!r}")
        return int(v) if integer else float(v)

    if kind == "float":
        return number(value)
    if kind == "int":
        return number(value, integer=True)
    if kind == "bool":
        if not isinstance(value, bool):
            fail(f"expected true or false, got {value!r}")
        return value
    if kind == "str":
        if not isinstance(value, str):
            fail(f"expected a string, got {value!r}")
        return value
    if kind in ("floats", "pair"):
        if isinstance(value, (int, float)) and not isinstance(value, bool) and kind == "floats":
            value = [value]
        if not isinstance(value, list) or not value:
            fail(f"expected a non-empty array, got {value!r}")
        out = [number(v) for v in value]
        if kind == "pair" and len(out) != 2:
            fail(f"expected two numbers, got {len(out)}")
        return out
    raise AssertionError(kind)


def _decreasing(values) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def _validate(experiment, s, coeffs, defaulted, fail):
    for key in ("mu_schedule", "eps_schedule", "dirichlet_gammas"):
        if key in s and not _decreasing(s[key]):
            fail(key, "schedule not decreasing")
    if experiment == "sk-sde":
        _validate_sde(s, coeffs, defaulted, fail)
    elif experiment == "sk-pde":
        _validate_pde(s, coeffs, fail)
    elif experiment in ("friction-elliptic", "friction-adjoint"):
        _validate_interval(s, coeffs, fail)
        if experiment == "friction-elliptic":
            if not s["gamma0"] < 1.0 or not s["gamma0"] < s["LU"] - s["LV"]:
                fail("gamma0", "must satisfy gamma0 < min(1, LU - LV)")
            if s["dirichlet_gammas"][0] >= s["gamma0"]:
                fail("dirichlet_gammas", "every gamma must be below gamma0")
    if experiment in STOCHASTIC and s.get("seed") is None:
        fail("seed", "a seed is required for stochastic experiments")


def _validate_sde(s, coeffs, defaulted, fail):
    from .sde import default_dt

    if s["delta"] < 0:
        fail("delta", "must be nonnegative")
    if s["npaths"] < 100:
        fail("npaths", "must be at least 100")
    if len(s["p0"]) not in (1, len(s["x0"])):
        fail("p0", "must have the dimension of x0")
    if coeffs.theta <= 0:
        fail("catalog", f"{coeffs.name} has vanishing friction; the Langevin experiment needs theta > 0")
    mus = s["mu_schedule"]
    if s["dt"] is None:
        s["dt"] = [default_dt(coeffs, mu, s["T"]) for mu in mus]
        defaulted[defaulted.index("dt")] = "dt (mu/(8 Theta) rule)"
        return
    dts = s["dt"] * len(mus) if len(s["dt"]) == 1 else s["dt"]
    if len(dts) != len(mus):
        fail("dt", "needs one value, or one per entry of mu_schedule")
    for mu, dt in zip(mus, dts):
        if dt > mu / (4.0 * coeffs.Theta) * (1 + 1e-12):
            fail("dt", f"dt={dt:g} exceeds mu/(4 Theta)={mu / (4.0 * coeffs.Theta):g} at mu={mu:g}")
        n = round(s["T"] / dt)
        if n < 1 or abs(n * dt - s["T"]) > 1e-9 * s["T"]:
            fail("dt", f"T/dt = {s['T'] / dt:.12g} is not an integer at mu={mu:g}")
    s["dt"] = dts


def _validate_pde(s, coeffs, fail):
    if s["transport"] not in ("fromm", "upwind"):
        fail("transport", "must be 'fromm' or 'upwind'")
    lo, hi = s["x_window"]
    plo, phi = s["probe"]
    if not lo < hi:
        fail("x_window", "must be increasing")
    h = (hi - lo) / s["nx"]
    if not (lo + 5 * h <= plo + 1e-12 and phi <= hi - 5 * h + 1e-12 and plo < phi):
        fail("probe", "must be increasing and stay 5 cells inside x_window")
    if coeffs.theta <= 0:
        fail("catalog", f"{coeffs.name} has vanishing friction; the kinetic experiment needs theta > 0")
    m1, m2 = s["expansion_mu"]
    if not m1 > m2 > 0:
        fail("expansion_mu", "must be two decreasing positive masses")
    if not s["ratio_band"][0] < s["ratio_band"][1]:
        fail("ratio_band", "must be increasing")


def _validate_interval(s, coeffs, fail):
    geom = coeffs.geometry
    if s["LU"] is None:
        s["LU"] = geom.LU if geom is not None else 1.5
    if s["LV"] is None:
        s["LV"] = geom.LV if geom is not None else 0.5
    if not 0 < s["LV"] < s["LU"]:
        fail("LV", "must satisfy 0 < LV < LU")
    lo, hi = coeffs.sample_domain
    if -s["LU"] < lo - 1e-12 or s["LU"] > hi + 1e-12:
        fail("LU", f"[-LU, LU] leaves the coefficient domain [{lo:g}, {hi:g}]")


# ------------------------------------------------------------- defaults


def default_config(experiment: str, catalog: str | None = None) -> ExperimentConfig:
    raw: dict = {"experiment": experiment}
    if catalog is not None:
        raw["catalog"] = catalog
    if experiment in STOCHASTIC:
        raw["seed"] = DEFAULT_SEED
    return build_config(raw)


def render_defaults(experiment: str | None = None) -> str:
    """Commented TOML for every experiment (or one), with defaults filled in."""
    names = EXPERIMENTS if experiment is None else (experiment,)
    parts = []
    for name in names:
        cfg = default_config(name)
        lines = [f"# ---- {name}"]
        for key, spec in SCHEMA[name].items():
            lines.append(f"# {key}: {spec.doc}")
        parts.append("\n".join(lines) + "\n" + cfg.to_toml())
    return "\n".join(parts)
