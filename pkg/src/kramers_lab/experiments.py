"""Experiment runner: wires the solvers into sweeps, collects the declared
assertions and writes CSV tables plus a plain-text report.

Every output of one experiment lands in ``<output_dir>/<experiment>/``:
one CSV per table and ``report.txt``.  CSV content depends only on the
configuration, so identical configurations give byte-identical tables.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .adjoint import adjoint_convergence_sweep
from .coeffs import CoefficientSet, Grid1D, builtin_coefficients
from .config import SCHEMA, ExperimentConfig, build_config
from .elliptic import (
    flux_convergence,
    lemma_suite,
    oracle_convergence,
    problem_from_coefficients,
    sweep_epsilon,
)
from .errors import ConfigError, KramersLabError
from .fields import SolutionField
from .kinetic import (
    expansion_residual,
    gaussian_profile,
    kinetic_convergence_sweep,
    lyapunov_check,
    solve_limit_parabolic,
)
from .sde import estimate_sup_deviation
from .table import (
    Check,
    ConvergenceTable,
    atomic_write,
    check_flag,
    check_le,
    format_number,
    keeping_rows,
    render_csv,
    skipped,
)

# Problems of the default verification battery.  ``asymmetric`` has a
# nonzero drift, so its regularized densities really move with eps.
SMOOTH = ("smooth-bump-friction", {})
CURVED = ("smooth-bump-friction", {"a2": 0.5})
ASYMMETRIC = ("smooth-bump-friction", {"a1": 0.25, "a2": 0.5, "b0": 0.5, "b1": 0.25})
LYAPUNOV_INSTANCES = (("constant", {}, 1.0), ("sinusoidal-friction", {}, 0.05), ("linear-drift", {}, 0.1))


@dataclass
class Section:
    """Tables and free-standing checks produced by one part of an experiment."""

    tables: dict[str, ConvergenceTable] = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    constants: dict[str, float] = field(default_factory=dict)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    tables: dict[str, ConvergenceTable] = field(default_factory=dict)
    loose_checks: list[Check] = field(default_factory=list)
    constants: dict[str, float] = field(default_factory=dict)
    error: KramersLabError | None = None
    aborted_table: str | None = None
    report: str = ""
    files: list[Path] = field(default_factory=list)
    runtimes: dict[str, float] = field(default_factory=dict)

    @property
    def checks(self) -> list[Check]:
        out = [c for t in self.tables.values() for c in t.checks]
        return out + self.loose_checks

    @property
    def failed(self) -> list[Check]:
        return [c for c in self.checks if c.passed is False]

    @property
    def table(self) -> ConvergenceTable | None:
        return next(iter(self.tables.values()), None)

    @property
    def exit_code(self) -> int:
        if self.error is not None:
            return 3
        return 1 if self.failed else 0

    def absorb(self, prefix: str, section: Section) -> None:
        for name, table in section.tables.items():
            key = "_".join(part for part in dict.fromkeys((prefix, name)) if part)
            self.tables[key] = table
        self.loose_checks.extend(section.checks)
        self.constants.update({f"{prefix}.{k}" if prefix else k: v for k, v in section.constants.items()})


# ------------------------------------------------------------- sections


def sde_section(coeffs: CoefficientSet, s: dict) -> Section:
    table = ConvergenceTable("mu", ["mu", "delta", "estimate", "halfwidth", "npaths", "dt", "seed"])
    table.provenance["catalog"] = coeffs.name
    with keeping_rows(table):
        for mu, dt in zip(s["mu_schedule"], s["dt"]):
            est = estimate_sup_deviation(coeffs, mu, s["x0"], s["p0"], s["T"], s["delta"], dt, s["npaths"],
                                         s["seed"], block=s["block"], workers=s["workers"])
            table.add_row(mu, s["delta"], est.value, est.halfwidth, est.npaths, dt, s["seed"])
    values, half = table.column("estimate"), table.column("halfwidth")
    rises = values[1:] - values[:-1] - np.maximum(half[1:], half[:-1])
    table.checks.append(
        check_le("sde", "estimate_sup_deviation", "estimate non-increasing in mu within one half-width",
                 float(rises.max(initial=-np.inf)), 0.0)
    )
    table.checks.append(
        check_flag("sde", "estimate_sup_deviation", "estimate at the smallest mu below bound",
                   values[-1] < s["final_estimate_tol"], measured=values[-1], tolerance=s["final_estimate_tol"])
    )
    return Section({"": table})


def kinetic_section(coeffs: CoefficientSet, s: dict) -> Section:
    initial = gaussian_profile(s["initial_width"])
    sweep = kinetic_convergence_sweep(
        coeffs, s["mu_schedule"], initial, s["T"], tuple(s["x_window"]), tuple(s["probe"]), s["nx"],
        s["resolution"], s["transport"], s["final_rel_tol"],
    )
    grid = Grid1D.uniform(s["x_window"][0], s["x_window"][1], s["expansion_cells"])
    u = solve_limit_parabolic(coeffs, SolutionField(grid, initial(grid.nodes)), s["T"], grid.h)
    table = ConvergenceTable("mu", ["mu", "expansion_residual"])
    for mu in s["expansion_mu"]:
        table.add_row(mu, expansion_residual(coeffs, mu, u, tuple(s["probe"])))
    res = table.column("expansion_residual")
    ratio = float(res[0] / res[1]) if res[1] > 0 else float("inf")
    lo, hi = s["ratio_band"]
    if np.all(res == 0.0):
        table.checks.append(check_le("kinetic", "expansion_residual", "residual of a constant solution", 0.0, 0.0))
    else:
        table.checks.append(
            check_flag("kinetic", "expansion_residual", f"residual ratio in [{lo:g}, {hi:g}]", lo <= ratio <= hi,
                       measured=ratio, tolerance=lo, detail=f"upper bound {hi:g}")
        )
    return Section({"kinetic": sweep, "expansion": table}, constants={"expansion_ratio": ratio})


def lyapunov_section(instances) -> Section:
    table = ConvergenceTable("instance", ["instance", "mu", "C", "c", "worst_excess"])
    xs, ys = np.linspace(-5.0, 5.0, 101), np.linspace(-5.0, 5.0, 101)
    names = []
    for k, (coeffs, mu) in enumerate(instances, start=1):
        lo, hi = coeffs.sample_domain
        res = lyapunov_check(coeffs, mu, np.clip(xs, lo, hi), ys)
        table.add_row(k, mu, res.C, res.c, res.worst_excess)
        names.append(f"{k}={coeffs.name}")
        table.checks.append(
            check_le("kinetic", "lyapunov_check", f"L p <= C - c y^2 on the dense sample, {coeffs.name} mu={mu:g}",
                     res.worst_excess, 0.0, f"worst node {res.worst_node}")
        )
    table.provenance["instances"] = ", ".join(names)
    return Section({"lyapunov": table})


def _problem(coeffs: CoefficientSet, s: dict | None = None):
    s = s or {}
    return problem_from_coefficients(coeffs, (s.get("g_left", 0.0), s.get("g_right", 1.0)), 0.0,
                                     s.get("LU"), s.get("LV"))


def elliptic_section(coeffs: CoefficientSet, s: dict, include_extras: bool = True) -> Section:
    """The eps sweep; with ``include_extras`` also the refinement studies and the lemma suite."""
    prob = _problem(coeffs, s)
    sec = Section()
    sec.tables["sweep"] = sweep_epsilon(prob, prob.grid(s["n_cells"]), s["eps_schedule"], s["osc_slack"],
                                        s["final_osc_tol"], s["final_distance_tol"])
    if not include_extras:
        return sec
    sec.tables["oracle"] = oracle_convergence(prob)
    sec.tables["flux"] = flux_convergence(prob)
    if coeffs.profile is not None:
        suite = lemma_suite(prob, s["barrier_cells"], gamma0=s["gamma0"], gammas=tuple(s["dirichlet_gammas"]))
        sec.tables["barriers"] = suite.barriers
        sec.tables["dirichlet"] = suite.dirichlet
        sec.checks.extend(suite.checks)
        sec.constants.update(suite.constants)
    else:
        sec.checks.append(skipped("elliptic", "verify_barriers", "barrier and Dirichlet lemmas",
                                  f"{coeffs.name} has no friction profile"))
    return sec


def adjoint_section(coeffs: CoefficientSet, s: dict) -> Section:
    prob = _problem(coeffs, s)
    table = adjoint_convergence_sweep(prob, prob.grid(s["n_cells"]), s["eps_schedule"], s["iterative"], s["r"],
                                      s["tol"], s["maxiter"], s["iterative_min_eps"], s["final_tol_factor"])
    return Section({"": table})


# --------------------------------------------------------------- battery


def _defaults(experiment: str, cfg: ExperimentConfig | None = None, **overrides) -> dict:
    """Default settings of ``experiment``, for the catalog of ``cfg`` when it names one."""
    raw = {"experiment": experiment, **overrides}
    if cfg is not None and cfg.catalog is not None:
        raw["catalog"] = cfg.catalog
        if cfg.params:
            raw["params"] = cfg.params
    return build_config(raw).settings


def battery(cfg: ExperimentConfig) -> list[tuple[str, Callable[[], Section]]]:
    """The verification battery as named, lazily run sections.

    Without a catalog every check runs on the problem it was designed for;
    with one, each check runs on that catalog's default instance when it
    applies and is reported as skipped otherwise.
    """
    seed, npaths = cfg["seed"], cfg["npaths"]
    if cfg.catalog is None:
        sde_c = builtin_coefficients("constant")
        kin_c = builtin_coefficients("sinusoidal-friction")
        lyap = [(builtin_coefficients(n, p), mu) for n, p, mu in LYAPUNOV_INSTANCES]
        oracle = [(label, builtin_coefficients(*spec)) for label, spec in
                  (("smooth", SMOOTH), ("curved", CURVED), ("asymmetric", ASYMMETRIC))]
        sweep_c = builtin_coefficients(*SMOOTH)
        flux_c = adjoint_c = builtin_coefficients(*ASYMMETRIC)
        lemma_c = builtin_coefficients(*SMOOTH)
        name = None
    else:
        name = cfg.catalog
        c = cfg.coefficients()
        sde_c = kin_c = c if c.positive_friction else None
        lyap = [(c, 0.1)] if c.positive_friction else []
        oracle = [(name, c)]
        sweep_c = flux_c = adjoint_c = c
        lemma_c = c if c.profile is not None else None

    def need_friction(label, c, run):
        if c is None:
            return lambda: Section(checks=[skipped(label, "all", "positive friction required",
                                                   f"{name} has vanishing friction")])
        return run

    def oracle_run():
        return Section({label: oracle_convergence(_problem(c), label=label) for label, c in oracle})

    def flux_run():
        return Section({"": flux_convergence(_problem(flux_c))})

    def sweep_run():
        s = _defaults("friction-elliptic", cfg)
        return elliptic_section(sweep_c, s, include_extras=False)

    def lemma_run():
        if lemma_c is None:
            return Section(checks=[skipped("elliptic", "verify_barriers", "barrier and Dirichlet lemmas",
                                           f"{name} has no friction profile")])
        suite = lemma_suite(_problem(lemma_c))
        return Section({"barriers": suite.barriers, "dirichlet": suite.dirichlet}, suite.checks, suite.constants)

    # the friction-dependent defaults only make sense where the friction is positive
    fallback = cfg if sde_c is not None else None
    sde_s = _defaults("sk-sde", fallback, seed=seed, npaths=npaths)
    kin_s = _defaults("sk-pde", fallback)
    adj_s = _defaults("friction-adjoint", cfg)
    return [
        ("sde", need_friction("sde", sde_c, lambda: sde_section(sde_c, sde_s))),
        ("kinetic", need_friction("kinetic", kin_c, lambda: kinetic_section(kin_c, kin_s))),
        ("lyapunov", need_friction("kinetic", kin_c, lambda: lyapunov_section(lyap))),
        ("oracle", oracle_run),
        ("elliptic", sweep_run),
        ("flux", flux_run),
        ("adjoint", lambda: adjoint_section(adjoint_c, adj_s)),
        ("lemmas", lemma_run),
    ]


# ---------------------------------------------------------------- runner


def plan(cfg: ExperimentConfig) -> list[tuple[str, Callable[[], Section]]]:
    if cfg.experiment == "verify-all":
        return battery(cfg)
    coeffs = cfg.coefficients()
    s = cfg.settings
    run = {
        "sk-sde": lambda: sde_section(coeffs, s),
        "sk-pde": lambda: kinetic_section(coeffs, s),
        "friction-elliptic": lambda: elliptic_section(coeffs, s),
        "friction-adjoint": lambda: adjoint_section(coeffs, s),
    }[cfg.experiment]
    return [("", run)]


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run every section; a numerical failure stops the run but keeps what was computed."""
    result = ExperimentResult(cfg)
    for prefix, run in plan(cfg):
        start = time.perf_counter()
        try:
            section = run()
        except ConfigError:
            raise
        except KramersLabError as exc:
            result.error = exc
            partial = getattr(exc, "partial_table", None)
            if partial is not None:
                key = prefix or cfg.experiment
                result.tables[key] = partial
                result.aborted_table = key
            result.runtimes[prefix or cfg.experiment] = time.perf_counter() - start
            break
        result.runtimes[prefix or cfg.experiment] = time.perf_counter() - start
        result.absorb(prefix, section)
    result.report = render_report(result)
    if write:
        write_outputs(result)
    return result


def table_files(result: ExperimentResult) -> dict[str, Path]:
    base = Path(result.config.output_dir) / result.config.experiment
    return {name: base / f"{name or result.config.experiment}.csv" for name in result.tables}


def write_outputs(result: ExperimentResult) -> None:
    files = table_files(result)
    for name, table in result.tables.items():
        failure = None
        if name == result.aborted_table:
            failure = f"aborted: {type(result.error).__name__}: {result.error}"
        elif table.failed:
            failure = table.failed[0].describe()
        atomic_write(files[name], render_csv(table, failure))
        result.files.append(files[name])
    report = Path(result.config.output_dir) / result.config.experiment / "report.txt"
    atomic_write(report, result.report)
    result.files.append(report)


def render_report(result: ExperimentResult) -> str:
    cfg = result.config
    checks = result.checks
    passed = sum(c.passed is True for c in checks)
    failed = sum(c.passed is False for c in checks)
    skipped_n = sum(c.passed is None for c in checks)
    lines = [
        f"kramers-lab {__version__}  experiment={cfg.experiment}  config_hash={cfg.config_hash}",
        f"source: {cfg.source or '<defaults>'}",
        f"catalog: {cfg.catalog or 'battery defaults'}",
        "defaults filled: " + (", ".join(cfg.defaulted) if cfg.defaulted else "none"),
        "",
        "[config]",
        cfg.to_toml().rstrip(),
        "",
        "[tables]",
    ]
    files = table_files(result)
    for name, table in result.tables.items():
        prov = "; ".join(f"{k}={v}" for k, v in table.provenance.items())
        lines.append(f"{files[name]}  rows={len(table.rows)}" + (f"  ({prov})" if prov else ""))
    if result.constants:
        lines += ["", "[constants]"]
        lines += [f"{k} = {format_number(v)}" for k, v in result.constants.items()]
    lines += ["", "[checks]"]
    lines += [c.describe() for c in checks]
    lines += ["", "[runtime seconds]"]
    lines += [f"{k} = {v:.2f}" for k, v in result.runtimes.items()]
    lines += ["", f"summary: {passed} passed, {failed} failed, {skipped_n} skipped"]
    if result.error is not None:
        lines.append(f"aborted: {type(result.error).__name__}: {result.error}")
    elif result.failed:
        lines.append("first failure: " + result.failed[0].describe())
    lines.append(f"exit code: {result.exit_code}")
    return "\n".join(lines) + "\n"


def verify_all_config(catalog: str | None = None, base: ExperimentConfig | None = None) -> ExperimentConfig:
    raw = {"experiment": "verify-all"}
    if base is not None:
        if base.experiment != "verify-all":
            raise ConfigError(f"key 'experiment': verify-all needs a verify-all config, got {base.experiment!r}")
        raw.update({k: v for k, v in base.settings.items() if k in SCHEMA["verify-all"]})
        raw["output_dir"] = base.output_dir
        if base.catalog is not None:
            raw["catalog"] = base.catalog
        if base.params:
            raw["params"] = base.params
    if catalog is not None:
        if raw.get("catalog") != catalog:
            raw.pop("params", None)
        raw["catalog"] = catalog
    return build_config(raw, source=base.source if base else None)
