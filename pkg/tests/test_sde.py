import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from kramers_lab.coeffs import builtin_coefficients, with_overrides
from kramers_lab.errors import AssumptionError, GridError
from kramers_lab.sde import (
    MCEstimate,
    brownian_increments,
    default_dt,
    estimate_sup_deviation,
    integrate_langevin,
    integrate_limit,
    langevin_position_variance,
    max_deviations,
    simulate_coupled,
)


def _quiet(name="constant", **params):
    cs = builtin_coefficients(name, params)
    return with_overrides(cs, sigma=lambda x: np.zeros_like(np.asarray(x, dtype=float)))


def test_deterministic_friction_decay():
    cs = _quiet()
    dt = 1.0 / 400
    pair = simulate_coupled(cs, 1.0, [0.0], [1.0], 1.0, dt, seed=0)
    assert pair.xmu[-1, 0] == pytest.approx(1 - math.exp(-1), abs=dt)


def test_limit_with_unit_drift():
    cs = _quiet(b=1.0)
    pair = simulate_coupled(cs, 0.1, [0.3], [0.0], 2.0, 0.02, seed=0)
    assert pair.xlim[-1, 0] == pytest.approx(2.3, abs=1e-12)


def test_limit_variance_is_brownian():
    cs = builtin_coefficients("constant")
    n, steps, T = 10000, 100, 1.0
    dW = np.stack([brownian_increments(7, i, steps, 1, T / steps)[:, 0] for i in range(n)], axis=1)
    x = integrate_limit(cs, 0.0, T / steps, dW)[-1]
    var = x.var(ddof=1)
    assert abs(var - 1.0) <= 3 * math.sqrt(2.0 / (n - 1))


def test_langevin_variance_matches_integrated_ou():
    cs = builtin_coefficients("constant")
    mu, T, n = 0.1, 1.0, 10000
    dt = default_dt(cs, mu, T, 32.0)
    steps = round(T / dt)
    dW = np.stack([brownian_increments(11, i, steps, 1, dt)[:, 0] for i in range(n)], axis=1)
    x, _ = integrate_langevin(cs, mu, 0.0, 0.0, dt, dW)
    exact = langevin_position_variance(T, mu)
    se = exact * math.sqrt(2.0 / (n - 1))
    assert abs(x[-1].var(ddof=1) - exact) <= 3 * se


def test_integrated_ou_variance_limits():
    assert langevin_position_variance(1.0, 1e-8) == pytest.approx(1.0, rel=1e-7)
    # short times: ballistic growth t^3 / (3 mu^2)
    assert langevin_position_variance(1e-3, 1.0) == pytest.approx(1e-9 / 3, rel=1e-2)


def test_zero_noise_matches_ode_reference():
    cs = _quiet("sinusoidal-friction", b=0.5)
    mu, T = 0.2, 1.0
    dt = default_dt(cs, mu, T)
    pair = simulate_coupled(cs, mu, [0.1], [0.5], T, dt, seed=0)

    def rhs(t, z):
        x, y = z
        return [y, (0.5 - cs.lam(x) * y) / mu]

    ref = solve_ivp(rhs, (0, T), [0.1, 0.5], t_eval=pair.times, rtol=1e-12, atol=1e-12)
    rel = np.max(np.abs(pair.xmu[:, 0] - ref.y[0])) / np.max(np.abs(ref.y[0]))
    assert rel <= 10 * dt


def test_limit_step_halving():
    cs = builtin_coefficients("linear-drift")
    T, coarse, fine_factor, n = 1.0, 0.05, 64, 200
    fine_dt = coarse / fine_factor
    steps = round(T / fine_dt)
    dW = np.stack([brownian_increments(3, i, steps, 1, fine_dt)[:, 0] for i in range(n)], axis=1)
    ref = integrate_limit(cs, 0.5, fine_dt, dW)[-1]

    def coarse_error(k):
        summed = dW.reshape(steps // k, k, n).sum(axis=1)
        return np.mean(np.abs(integrate_limit(cs, 0.5, fine_dt * k, summed)[-1] - ref))

    assert coarse_error(fine_factor) / coarse_error(fine_factor // 2) >= 1.7


def test_sup_deviation_deterministic_cases():
    cs = _quiet()
    est = estimate_sup_deviation(cs, 0.01, [0.0], [1.0], 1.0, 0.5, default_dt(cs, 0.01, 1.0), 200, seed=1)
    assert est.value == 0.0
    noisy = builtin_coefficients("constant")
    est = estimate_sup_deviation(noisy, 0.1, [0.0], [0.0], 1.0, 0.0, default_dt(noisy, 0.1, 1.0), 200, seed=1)
    assert est.value == 1.0


def test_results_independent_of_workers_and_blocks():
    cs = builtin_coefficients("sinusoidal-friction")
    args = (cs, 0.05, [0.0], [0.0], 0.5, 0.1, default_dt(cs, 0.05, 0.5), 300, 99)
    a = estimate_sup_deviation(*args)
    b = estimate_sup_deviation(*args, block=70, workers=4)
    assert a == b
    whole = max_deviations(cs, 0.05, [0.0], [0.0], 0.5, args[6], 99, range(0, 10))
    parts = np.concatenate([max_deviations(cs, 0.05, [0.0], [0.0], 0.5, args[6], 99, r)
                            for r in (range(0, 3), range(3, 10))])
    assert np.array_equal(whole, parts)
    p1 = simulate_coupled(cs, 0.05, [0.0], [0.0], 0.5, args[6], 99, 4)
    p2 = simulate_coupled(cs, 0.05, [0.0], [0.0], 0.5, args[6], 99, 4)
    assert np.array_equal(p1.xmu, p2.xmu) and np.array_equal(p1.xlim, p2.xlim)


def test_streaming_deviation_matches_paths():
    cs = builtin_coefficients("sinusoidal-friction")
    dt = default_dt(cs, 0.05, 0.5)
    devs = max_deviations(cs, 0.05, [0.2], [0.1], 0.5, dt, 5, range(3))
    for i in range(3):
        assert devs[i] == pytest.approx(simulate_coupled(cs, 0.05, [0.2], [0.1], 0.5, dt, 5, i).max_deviation, abs=1e-14)


def test_two_dimensional_paths():
    cs = builtin_coefficients("constant")
    pair = simulate_coupled(cs, 0.1, [0.0, 1.0], [0.0, 0.0], 0.1, default_dt(cs, 0.1, 0.1), seed=2)
    assert pair.xmu.shape == pair.xlim.shape == (pair.times.size, 2)


def test_rejections():
    cs = builtin_coefficients("constant")
    with pytest.raises(GridError, match="mu/\\(4 Theta\\)"):
        simulate_coupled(cs, 0.01, [0.0], [0.0], 1.0, 0.01, seed=0)
    with pytest.raises(GridError, match="integer"):
        simulate_coupled(cs, 1.0, [0.0], [0.0], 1.0, 0.03, seed=0)
    with pytest.raises(AssumptionError, match="mu > 0"):
        simulate_coupled(cs, 0.0, [0.0], [0.0], 1.0, 0.01, seed=0)
    with pytest.raises(AssumptionError, match="theta <= lambda"):
        bump = builtin_coefficients("smooth-bump-friction")
        simulate_coupled(bump, 0.1, [0.0], [0.0], 1.0, 0.001, seed=0)
    with pytest.raises(AssumptionError, match="npaths"):
        estimate_sup_deviation(cs, 0.1, [0.0], [0.0], 1.0, 0.1, 0.0125, 50, 0)


def test_default_dt_divides_horizon():
    cs = builtin_coefficients("sinusoidal-friction")
    dt = default_dt(cs, 0.01, 1.0)
    assert dt <= 0.01 / (8 * cs.Theta) and abs(round(1.0 / dt) * dt - 1.0) < 1e-12


def test_confidence_interval():
    est = MCEstimate.from_count(50, 200)
    assert est.value == 0.25 and est.halfwidth == pytest.approx(1.96 * math.sqrt(0.25 * 0.75 / 200))
