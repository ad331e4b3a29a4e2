"""Shared fixtures; prints the acceptance criteria at the end of the run."""

import numpy as np
import pytest

from kramers_lab.coeffs import builtin_coefficients
from kramers_lab.elliptic import problem_from_coefficients

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}

ASYMMETRIC = {"a1": 0.25, "a2": 0.5, "b0": 0.5, "b1": 0.25}


def record(criterion: int, title: str, ok: bool, detail: str = "") -> None:
    detail = detail.strip()
    ACCEPTANCE[criterion] = (title, bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {title} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")


@pytest.fixture
def smooth_problem():
    return problem_from_coefficients(builtin_coefficients("smooth-bump-friction"))


@pytest.fixture
def asymmetric_problem():
    return problem_from_coefficients(builtin_coefficients("smooth-bump-friction", ASYMMETRIC))


@pytest.fixture
def unit_problem():
    """a = 1, b = 0, lambda = 1 on U = (-1, 1)."""
    return problem_from_coefficients(builtin_coefficients("constant"), (0.0, 1.0), 1.0, LU=1.0, LV=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
