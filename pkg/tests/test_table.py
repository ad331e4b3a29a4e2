import numpy as np
import pytest
from hypothesis import given, strategies as st

from kramers_lab.errors import KramersLabError, NumericalError
from kramers_lab.table import (
    ConvergenceTable,
    atomic_write,
    check_le,
    emit_csv,
    format_number,
    keeping_rows,
    render_csv,
    skipped,
)


def _table(n=3):
    t = ConvergenceTable("eps", ["eps", "error", "count"])
    for k in range(n):
        t.add_row(2.0**-k, 1.0 / 3.0**k, k)
    return t


def test_format_number():
    assert format_number(1.0 / 3.0) == "0.333333333333"
    assert format_number(7) == "7"
    assert format_number(0.0) == "0"
    assert format_number(1e-12) == "0.000000000001"
    assert format_number(float("nan")) == "nan"
    assert format_number(True) == "true"


@given(st.floats(allow_nan=False, allow_infinity=False, min_value=-1e12, max_value=1e12))
def test_format_number_round_trips_to_12_digits(v):
    text = format_number(v)
    assert "e" not in text.lower()
    assert float(text) == pytest.approx(v, rel=1e-11, abs=0)


def test_header_only_and_rows(tmp_path):
    empty = ConvergenceTable("mu", ["mu", "x"])
    assert render_csv(empty) == "mu,x\n"
    text = render_csv(_table())
    assert text.endswith("\n") and len(text.splitlines()) == 4


def test_identical_bytes(tmp_path):
    emit_csv(_table(), tmp_path / "a.csv")
    emit_csv(_table(), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_failed_marker_row():
    text = render_csv(_table(2), failure="boom")
    assert text.splitlines()[-1].startswith("FAILED")


def test_parameter_must_be_monotone_and_cells_present():
    t = _table(2)
    with pytest.raises(ValueError, match="monotone"):
        t.add_row(1.0, 0.0, 0)
    with pytest.raises(ValueError, match="missing"):
        t.add_row(0.1, None, 0)
    with pytest.raises(ValueError):
        t.add_row(0.1, 0.0)


def test_keeping_rows_attaches_partial_table():
    t = _table(1)
    with pytest.raises(NumericalError) as info:
        with keeping_rows(t):
            raise NumericalError("stop")
    assert info.value.partial_table is t


def test_atomic_write_replaces_and_reports_path(tmp_path):
    p = tmp_path / "out.txt"
    atomic_write(p, "one\n")
    atomic_write(p, "two\n")
    assert p.read_text() == "two\n"
    assert sorted(q.name for q in tmp_path.iterdir()) == ["out.txt"]
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(KramersLabError, match="cannot write .*out.txt"):
        atomic_write(blocker / "out.txt", "x")


def test_checks():
    assert check_le("m", "op", "inv", 1.0, 2.0).passed is True
    assert check_le("m", "op", "inv", 3.0, 2.0).passed is False
    assert skipped("m", "op", "inv", "why").passed is None
    assert "SKIP" in skipped("m", "op", "inv", "why").describe()
    assert np.isnan(skipped("m", "op", "inv", "why").measured)
