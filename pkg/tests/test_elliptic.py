import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import ASYMMETRIC
from kramers_lab.coeffs import Grid1D, builtin_coefficients, with_overrides
from kramers_lab.elliptic import (
    barrier_psi,
    choose_barrier_constants,
    discrete_flux_residual,
    dirichlet_gamma,
    flux_identity_residual,
    interior_operator,
    max_principle_excess,
    oracle_quadrature,
    osc_dead_zone,
    problem_from_coefficients,
    solve_limit,
    solve_regularized,
    sweep_epsilon,
    verify_barriers,
)
from kramers_lab.adjoint import solve_adjoint_direct
from kramers_lab.errors import AssumptionError
from kramers_lab.quadrature import side_profile

GEOMETRIC = [2.0**-k for k in range(1, 13)]


def test_linear_solution_exact_for_constant_coefficients():
    cs = builtin_coefficients("constant", {"lam": 0.0})
    prob = problem_from_coefficients(cs, (0.0, 1.0), 1.0, LU=1.0, LV=0.5)
    grid = prob.grid(40)
    u = solve_regularized(prob, grid)
    np.testing.assert_allclose(u.values, (grid.nodes + 1) / 2, atol=1e-14)


def test_equal_boundary_values_give_constant(smooth_problem):
    prob = problem_from_coefficients(smooth_problem.coeffs, (0.3, 0.3), 0.01)
    u = solve_regularized(prob, prob.grid(100))
    assert np.all(u.values == 0.3)


def test_regularized_solver_rejects_zero_epsilon(smooth_problem):
    with pytest.raises(AssumptionError, match="epsilon > 0"):
        solve_regularized(smooth_problem, smooth_problem.grid(50))


def test_quadrature_oracle_polynomial_friction():
    cs = with_overrides(builtin_coefficients("constant"), lam=lambda x: 1.0 + np.asarray(x) ** 2)
    x = np.linspace(0.0, 1.0, 21)
    prof = side_profile(cs, 0.0, x)
    np.testing.assert_allclose(prof.solution(0.0, 1.0), (x + x**3 / 3) / (4.0 / 3.0), atol=1e-12)
    np.testing.assert_allclose(prof.solution(0.7, 0.7), 0.7, atol=0)


def test_quadrature_oracle_linear_and_constant(unit_problem):
    grid = unit_problem.grid(20)
    u = oracle_quadrature(unit_problem, grid)
    np.testing.assert_allclose(u.values, (grid.nodes + 1) / 2, atol=1e-14)


def test_quadrature_oracle_rejects_vanishing_friction(smooth_problem):
    grid = smooth_problem.grid(60)
    with pytest.raises(AssumptionError):
        oracle_quadrature(smooth_problem, grid, interval=(-0.4, 0.4), values=(0.0, 1.0))


@pytest.mark.parametrize("eps", [1.0, 0.1, 0.01])
def test_fd_matches_oracle_at_second_order(asymmetric_problem, eps):
    prob = asymmetric_problem.with_epsilon(eps)
    errors = []
    for n in (150, 300):
        grid = prob.grid(n)
        errors.append(solve_regularized(prob, grid).sup_distance(oracle_quadrature(prob, grid)))
    assert np.log2(errors[0] / errors[1]) >= 1.8


def test_recurrence_agrees_with_banded(asymmetric_problem):
    prob = asymmetric_problem.with_epsilon(0.1)
    grid = prob.grid(200)
    u1 = solve_regularized(prob, grid)
    u2 = solve_regularized(prob, grid, method="banded")
    assert u1.sup_distance(u2) < 1e-10


@settings(max_examples=20, deadline=None)
@given(eps=st.floats(1e-6, 2.0), gL=st.floats(-2, 2), gR=st.floats(-2, 2), b0=st.floats(-1, 1))
def test_discrete_maximum_principle(eps, gL, gR, b0):
    cs = builtin_coefficients("smooth-bump-friction", {"b0": b0})
    prob = problem_from_coefficients(cs, (gL, gR), eps)
    u = solve_regularized(prob, prob.grid(120))
    assert max_principle_excess(u, prob) <= 1e-12 * (1 + abs(gL) + abs(gR))


def test_interior_operator_annihilates_constants(asymmetric_problem):
    grid = asymmetric_problem.grid(50)
    L = interior_operator(asymmetric_problem, grid, 0.1)
    assert np.max(np.abs((L @ np.ones(grid.size))[1:-1])) < 1e-12


def test_symmetric_limit_constant_is_half(smooth_problem):
    for params in ({}, {"a2": 0.5}):
        prob = problem_from_coefficients(builtin_coefficients("smooth-bump-friction", params))
        lim = solve_limit(prob, prob.grid(300))
        assert lim.cV == pytest.approx(0.5, abs=1e-12)
        assert lim.balance_residual <= 1e-8 * prob.scale
        inside = prob.geom.in_dead_zone(prob.grid(300).nodes)
        assert np.all(lim.u.values[inside] == lim.cV)


def test_limit_with_equal_data():
    prob = problem_from_coefficients(builtin_coefficients("smooth-bump-friction", ASYMMETRIC), (0.4, 0.4))
    lim = solve_limit(prob, prob.grid(100))
    assert lim.cV == 0.4 and lim.balance_residual == 0.0 and np.all(lim.u.values == 0.4)


def test_limit_constant_matches_vanishing_friction(asymmetric_problem):
    grid = asymmetric_problem.grid(300)
    lim = solve_limit(asymmetric_problem, grid)
    ue = solve_regularized(asymmetric_problem.with_epsilon(GEOMETRIC[-1]), grid)
    centre = grid.size // 2
    osc = osc_dead_zone(ue, asymmetric_problem.geom)
    assert abs(ue.values[centre] - lim.cV) <= 2e-3
    assert osc < 1e-3
    assert abs(lim.cV - 0.5) > 1e-2  # genuinely asymmetric


def test_sweep_osc_decreasing(smooth_problem):
    table = sweep_epsilon(smooth_problem, smooth_problem.grid(300), GEOMETRIC)
    osc = table.column("osc_V")
    assert np.all(np.diff(osc) <= 1e-10)
    assert not table.failed


def test_sweep_without_dead_zone_is_epsilon_independent():
    cs = builtin_coefficients("constant")
    prob = problem_from_coefficients(cs, (0.0, 1.0), 0.0, LU=1.0, LV=0.5)
    grid = prob.grid(50)
    values = [solve_regularized(prob.with_epsilon(e), grid).values for e in (0.5, 0.01)]
    np.testing.assert_allclose(values[0], values[1], atol=1e-14)


def test_refinement_at_fixed_epsilon_quarter_error(smooth_problem):
    prob = smooth_problem.with_epsilon(0.05)
    err = []
    for n in (150, 300, 600):
        grid = prob.grid(n)
        err.append(solve_regularized(prob, grid).sup_distance(oracle_quadrature(prob, grid)))
    ratios = np.array(err[:-1]) / np.array(err[1:])
    assert np.all(np.abs(ratios - 4.0) < 0.5)


def test_flux_identity_trivial_cases(unit_problem):
    prob = unit_problem.with_epsilon(0.5)
    grid = prob.grid(40)
    m = solve_adjoint_direct(prob, grid).m
    const = problem_from_coefficients(prob.coeffs, (0.2, 0.2), 0.5, LU=1.0, LV=0.5)
    assert flux_identity_residual(solve_regularized(const, grid), m, const) == 0.0
    assert flux_identity_residual(solve_regularized(prob, grid), m, prob) < 1e-13


def test_discrete_flux_identity_to_rounding(asymmetric_problem):
    grid = asymmetric_problem.grid(300)
    for eps in (0.5, 1e-3):
        prob = asymmetric_problem.with_epsilon(eps)
        ue, me = solve_regularized(prob, grid), solve_adjoint_direct(prob, grid).m
        assert discrete_flux_residual(ue, me, prob) <= 1e-10 * prob.scale


def test_barrier_psi_values(smooth_problem):
    grid = Grid1D.uniform(-1.5, 1.5, 3000)
    psi = barrier_psi(smooth_problem, grid, 1.0, 0.45, 0.0)
    d = smooth_problem.geom.signed_distance(grid.nodes)
    k = int(np.argmin(np.abs(d - 0.2)))
    assert d[k] == pytest.approx(0.2, abs=1e-12)
    assert psi.values[k] == pytest.approx(0.2**4 / 4 - 0.2**5 / 5, rel=1e-10)
    assert np.all(psi.values[psi.mask & (d <= 0)] == 0.0)
    zero = int(np.argmin(np.abs(d)))
    assert psi.values[zero] == pytest.approx(0.0, abs=1e-15)
    # with eps > 0 psi is negative inside the zone
    assert np.all(barrier_psi(smooth_problem, grid, 1.0, 0.45, 0.1).values[psi.mask & (d < 0)] < 0)


def test_barrier_psi_rejects_large_k_delta(smooth_problem):
    with pytest.raises(AssumptionError, match="K \\* delta"):
        barrier_psi(smooth_problem, smooth_problem.grid(100), 2.0, 0.3, 0.0)


def test_barriers_hold_at_measured_and_doubled_k(smooth_problem):
    grid = smooth_problem.grid(6000)
    consts = choose_barrier_constants(smooth_problem, 0.5)
    for K in (consts.K, 2 * consts.K):
        delta = min(consts.delta, 0.5 / K)
        report = verify_barriers(smooth_problem, grid, K, delta, (0.5, 0.1, 0.01, 0.001))
        assert report.ok, report.max_violation


def test_dirichlet_bounds_and_range(smooth_problem):
    grid = smooth_problem.grid(3000)
    sol = dirichlet_gamma(smooth_problem, 0.1, grid)
    vals = sol.v.defined()
    assert vals.min() >= 0.0 and vals.max() <= 1.0 + 1e-15
    with pytest.raises(AssumptionError):
        dirichlet_gamma(smooth_problem, 1.5, grid)


def test_dirichlet_constant_friction_gives_ramp():
    cs = builtin_coefficients("constant")
    prob = problem_from_coefficients(cs, LU=1.5, LV=0.5)
    grid = prob.grid(300)
    v = dirichlet_gamma(prob, 0.25, grid).v
    right = grid.nodes >= 0.75 - 1e-12
    np.testing.assert_allclose(v.values[right], (grid.nodes[right] - 0.75) / 0.75, atol=1e-12)
