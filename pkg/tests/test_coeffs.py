import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kramers_lab.coeffs import (
    CATALOG,
    DomainGeometry,
    Grid1D,
    PhaseGrid,
    builtin_coefficients,
    check_profile,
    grid_derivative,
    power_profile,
    signed_distance,
)
from kramers_lab.errors import AssumptionError, CatalogError, GridError


def test_constant_catalog_fields():
    cs = builtin_coefficients("constant", {"a": 1.0, "b": 0.0, "lam": 1.0})
    x = np.linspace(-5, 5, 11)
    assert np.all(cs.a(x) == 1.0) and np.all(cs.b(x) == 0.0) and np.all(cs.lam(x) == 1.0)
    assert cs.theta == cs.Theta == 1.0
    assert cs.lam_min == cs.lam_max == 1.0


def test_smooth_bump_values():
    cs = builtin_coefficients("smooth-bump-friction", {"LV": 0.5})
    assert cs.lam(np.array(0.0)) == 0.0
    assert cs.lam(np.array(1.0)) == pytest.approx(0.125, abs=1e-15)
    assert cs.has_dead_zone and not cs.positive_friction


def test_power_profile_growth_ratio_is_three():
    prof = power_profile(3.0)
    r = np.linspace(0.01, 3.0, 50)
    np.testing.assert_allclose(r * prof.derivative(r) / prof(r), 3.0, rtol=1e-13)
    assert prof.C0 == 3.0


@pytest.mark.parametrize("x, expected", [(0.5, 0.0), (0.0, -0.5), (1.25, 0.75)])
def test_signed_distance(x, expected):
    assert signed_distance(DomainGeometry(1.5, 0.5), x) == pytest.approx(expected, abs=0)


def test_profile_property_sweep():
    prof = power_profile(3.0)
    LU = 1.5
    assert check_profile(prof, 2 * LU, n=1000).ok
    loose = check_profile(prof, 2 * LU, n=1000, analytic=False)
    assert loose.ok and loose.tolerance >= 1e-6


def test_profile_with_wrong_constant_fails():
    prof = power_profile(3.0)
    bad = type(prof)(prof.lambda0, 2.0, derivative_fn=prof.derivative_fn)
    assert not check_profile(bad, 3.0).ok


def test_profile_quadrature_fallback_matches_closed_form():
    prof = power_profile(3.0)
    numeric = type(prof)(prof.lambda0, 3.0)
    r = np.array([0.1, 0.4, 1.0])
    np.testing.assert_allclose(numeric.primitive(r), prof.primitive(r), rtol=1e-10)
    np.testing.assert_allclose(numeric.first_moment(r), prof.first_moment(r), rtol=1e-10)


def test_every_catalog_entry_builds():
    for name in CATALOG:
        if name == "tabulated":
            continue
        cs = builtin_coefficients(name)
        assert cs.theta > 0 and cs.Theta >= cs.theta


def test_tabulated_fields_and_rejections():
    nodes = [-1.0, 0.0, 1.0]
    cs = builtin_coefficients("tabulated", {"nodes": nodes, "a": [1, 2, 1], "b": [0, 0, 0], "lam": [1, 1, 1]})
    assert cs.a(np.array(0.5)) == pytest.approx(1.5)
    with pytest.raises(AssumptionError, match="theta <= a"):
        builtin_coefficients("tabulated", {"nodes": nodes, "a": [1, -1, 1], "b": [0, 0, 0], "lam": [1, 1, 1]})
    with pytest.raises(CatalogError):
        builtin_coefficients("tabulated")
    with pytest.raises(GridError):
        builtin_coefficients("tabulated", {"nodes": [0, 0, 1], "a": [1, 1, 1], "b": [0, 0, 0], "lam": [1, 1, 1]})


def test_nonpositive_diffusion_rejected():
    with pytest.raises(AssumptionError, match="a"):
        builtin_coefficients("constant", {"a": 0.0})


def test_unknown_names_rejected():
    with pytest.raises(CatalogError, match="catalog"):
        builtin_coefficients("bogus")
    with pytest.raises(CatalogError, match="unknown parameter"):
        builtin_coefficients("constant", {"nope": 1})


def test_geometry_requires_nested_zone():
    with pytest.raises(AssumptionError):
        DomainGeometry(1.0, 1.0)


def test_grid_invariants():
    g = Grid1D.uniform(-1.0, 1.0, 4)
    assert g.size == 5 and g.h == 0.5 and g.lo == -1.0 and g.hi == 1.0
    assert g.trapezoid_weights().sum() == pytest.approx(2.0)
    assert g.refined().n_cells == 8
    with pytest.raises(GridError):
        Grid1D(np.array([0.0, 1.0, 3.0]), 1.0)
    with pytest.raises(GridError):
        PhaseGrid(g, Grid1D.uniform(0.0, 1.0, 4))


def test_grid_derivative_exact_for_quadratics():
    g = Grid1D.uniform(0.0, 1.0, 10)
    np.testing.assert_allclose(grid_derivative(g.nodes**2, g.h), 2 * g.nodes, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    LV=st.floats(0.2, 0.8),
    gap=st.floats(0.3, 1.5),
    power=st.floats(1.0, 5.0),
    scale=st.floats(0.1, 5.0),
)
def test_smooth_bump_invariants(LV, gap, power, scale):
    cs = builtin_coefficients("smooth-bump-friction", {"LV": LV, "LU": LV + gap, "power": power, "scale": scale})
    x = np.linspace(-LV, LV, 101)
    assert np.all(cs.lam(x) == 0.0)
    r = np.linspace(0.0, gap, 101)
    np.testing.assert_allclose(cs.lam(LV + r), scale * r**power, rtol=1e-12, atol=1e-300)
    assert check_profile(cs.profile, 2 * (LV + gap), n=200).ok
    assert math.isclose(cs.lam_max, scale * gap**power, rel_tol=1e-9)
