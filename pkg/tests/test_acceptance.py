"""Acceptance criteria 1-10, one test each; each prints a PASS/FAIL line."""

import time

import numpy as np

from conftest import ASYMMETRIC, record
from kramers_lab import cli
from kramers_lab.adjoint import adjoint_convergence_sweep, solve_adjoint_iterative, solve_shifted_direct
from kramers_lab.coeffs import builtin_coefficients
from kramers_lab.elliptic import (
    flux_convergence,
    lemma_suite,
    oracle_convergence,
    problem_from_coefficients,
    sweep_epsilon,
)
from kramers_lab.fields import SolutionField
from kramers_lab.kinetic import (
    expansion_residual,
    gaussian_profile,
    kinetic_convergence_sweep,
    lyapunov_check,
    solve_limit_parabolic,
)
from kramers_lab.coeffs import Grid1D
from kramers_lab.sde import default_dt, estimate_sup_deviation

GEOMETRIC = [2.0**-k for k in range(1, 13)]


def _all_pass(checks):
    failed = [c.describe() for c in checks if c.passed is False]
    return not failed, "; ".join(failed)


def test_criterion_01_sup_deviation_decay():
    cs = builtin_coefficients("constant")
    start = time.perf_counter()
    est = [estimate_sup_deviation(cs, mu, [0.0], [0.0], 1.0, 0.25, default_dt(cs, mu, 1.0), 2000, 2024)
           for mu in (1e-1, 1e-2, 1e-3)]
    elapsed = time.perf_counter() - start
    values = [e.value for e in est]
    monotone = all(b <= a + max(ea.halfwidth, eb.halfwidth)
                   for (a, ea), (b, eb) in zip(zip(values, est), zip(values[1:], est[1:])))
    ok = monotone and values[-1] < 0.05 and elapsed <= 120
    record(1, "sup-deviation estimates non-increasing, final < 0.05", ok,
           f"estimates {values}, {elapsed:.1f} s")
    assert ok


def test_criterion_02_kinetic_to_limit():
    cs = builtin_coefficients("sinusoidal-friction")
    start = time.perf_counter()
    table = kinetic_convergence_sweep(cs, [0.1, 0.05, 0.02])
    elapsed = time.perf_counter() - start
    errs = table.column("error_rel")
    ok = bool(np.all(np.diff(errs) < 0) and errs[-1] < 0.05 and elapsed <= 300)
    record(2, "kinetic probe error decreasing in mu, < 5% at mu=0.02", ok,
           f"relative errors {np.round(errs, 5).tolist()}, {elapsed:.1f} s")
    assert ok


def test_criterion_03_expansion_residual_order():
    cs = builtin_coefficients("sinusoidal-friction")
    start = time.perf_counter()
    grid = Grid1D.uniform(-4.0, 4.0, 320)
    init = gaussian_profile(0.5)
    u = solve_limit_parabolic(cs, SolutionField(grid, init(grid.nodes)), 0.5, grid.h)
    r1, r2 = (expansion_residual(cs, mu, u, (-2.0, 2.0)) for mu in (0.1, 0.05))
    elapsed = time.perf_counter() - start
    ratio = r1 / r2
    ok = 1.6 <= ratio <= 2.4 and elapsed <= 30
    record(3, "expansion residual ratio in [1.6, 2.4] when mu halves", ok, f"ratio {ratio:.4f}, {elapsed:.1f} s")
    assert ok


def test_criterion_04_oracle_equivalence():
    start = time.perf_counter()
    orders = []
    checks = []
    for params in ({}, {"a2": 0.5}, ASYMMETRIC):
        prob = problem_from_coefficients(builtin_coefficients("smooth-bump-friction", params))
        table = oracle_convergence(prob, (1.0, 0.1, 0.01), (150, 300, 600))
        checks += table.checks
        orders += [c.measured for c in table.checks]
    elapsed = time.perf_counter() - start
    ok, failed = _all_pass(checks)
    ok = ok and min(orders) >= 1.8 and elapsed <= 30
    record(4, "FD vs quadrature oracle order >= 1.8 on 3 problems", ok,
           f"min order {min(orders):.4f}, {elapsed:.1f} s {failed}")
    assert ok


def test_criterion_05_vanishing_friction_limit(smooth_problem):
    start = time.perf_counter()
    table = sweep_epsilon(smooth_problem, smooth_problem.grid(300), GEOMETRIC, 1e-10, 1e-3, 1e-2)
    elapsed = time.perf_counter() - start
    oscs = table.column("osc_V")
    dist = table.column("sup_distance_to_limit")[-1]
    ok, failed = _all_pass(table.checks)
    ok = ok and bool(np.all(np.diff(oscs) <= 1e-10)) and oscs[-1] < 1e-3 and dist < 1e-2 and elapsed <= 60
    record(5, "osc_V decreasing to < 1e-3, distance < 1e-2, balance < 1e-8 scale", ok,
           f"osc {oscs[-1]:.3e}, distance {dist:.3e}, {elapsed:.2f} s {failed}")
    assert ok


def test_criterion_06_flux_identity(asymmetric_problem):
    start = time.perf_counter()
    table = flux_convergence(asymmetric_problem, 0.01, (150, 300, 600), band=(3.0, 5.0))
    sweep = sweep_epsilon(asymmetric_problem, asymmetric_problem.grid(300), GEOMETRIC)
    elapsed = time.perf_counter() - start
    res = table.column("flux_residual")
    ratios = res[:-1] / res[1:]
    scale = asymmetric_problem.scale
    disc = max(sweep.column("flux_residual_discrete").max(), table.column("flux_residual_discrete").max())
    ok = bool(np.all(np.abs(ratios - 4.0) <= 1.0)) and disc <= 1e-10 * scale and elapsed <= 30
    record(6, "flux residual ratio about 4 per halving, discrete identity <= 1e-10 scale", ok,
           f"ratios {np.round(ratios, 3).tolist()}, discrete max {disc:.2e}, {elapsed:.2f} s")
    assert ok


def test_criterion_07_adjoint_suite(asymmetric_problem):
    start = time.perf_counter()
    grid = asymmetric_problem.grid(300)
    table = adjoint_convergence_sweep(asymmetric_problem, grid, GEOMETRIC, iterative=True, r=1.0)
    # the iteration at a small shift, with a positive bump as source
    pe = asymmetric_problem.with_epsilon(0.1)
    f = 0.1 * np.exp(-4.0 * grid.nodes**2)
    f /= np.sum(grid.trapezoid_weights() * f) / 0.1
    trace = solve_adjoint_iterative(pe, grid, 0.1, f, maxiter=200000, tol=1e-10, store_every=1000)
    direct = solve_shifted_direct(pe, grid, 0.1, f)
    elapsed = time.perf_counter() - start
    monotone = all(np.all(b.values >= a.values - 1e-12) for a, b in zip(trace.iterates, trace.iterates[1:]))
    mass_ok = bool(np.all(trace.masses <= trace.mass_bound + 1e-10))
    fixed = trace.fixed_point.sup_distance(direct)
    ok, failed = _all_pass(table.checks)
    ok = ok and monotone and trace.min_increment >= -1e-12 and mass_ok and fixed <= 1e-9 and elapsed <= 60
    record(7, "adjoint mass, positivity, monotone trace, mass bound, fixed point, decreasing distance", ok,
           f"fixed point gap {fixed:.2e}, iterations {trace.iterations}, {elapsed:.1f} s {failed}")
    assert ok


def test_criterion_08_barrier_and_dirichlet(smooth_problem):
    start = time.perf_counter()
    suite = lemma_suite(smooth_problem, barrier_cells=6000, gamma0=0.2, gammas=(0.1, 0.05))
    elapsed = time.perf_counter() - start
    ok, failed = _all_pass(suite.checks)
    ok = ok and elapsed <= 30
    record(8, "barrier inequalities on the strip, Dirichlet bounds with C fitted at gamma=0.2", ok,
           f"K={suite.constants['K']:g}, C={suite.constants['C']:.6f}, {elapsed:.2f} s {failed}")
    assert ok


def test_criterion_09_lyapunov_bound():
    start = time.perf_counter()
    xs = np.linspace(-5.0, 5.0, 101)
    ys = np.linspace(-5.0, 5.0, 101)
    results = [lyapunov_check(builtin_coefficients(name), mu, xs, ys)
               for name, mu in (("constant", 1.0), ("sinusoidal-friction", 0.05), ("linear-drift", 0.1))]
    elapsed = time.perf_counter() - start
    ok = all(r.ok and r.worst_excess <= 0 for r in results) and elapsed <= 10
    record(9, "Lyapunov bound on the dense sample for 3 instances", ok,
           f"C = {[round(r.C, 4) for r in results]}, {elapsed:.2f} s")
    assert ok


def test_criterion_10_reproducibility(tmp_path, monkeypatch):
    codes, contents = [], []
    for run in ("first", "second"):
        monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / run))
        codes.append(cli.main(["verify-all"]))
        base = tmp_path / run / "verify-all"
        contents.append({p.name: p.read_bytes() for p in sorted(base.glob("*.csv"))})
    identical = contents[0] == contents[1] and len(contents[0]) > 0
    ok = identical and codes == [0, 0]
    record(10, "verify-all twice: byte-identical CSVs, exit code 0", ok,
           f"exit codes {codes}, {len(contents[0])} CSV files identical={identical}")
    assert ok
