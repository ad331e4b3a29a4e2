"""Sweep records, assertion records and deterministic CSV output."""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import KramersLabError

SIGNIFICANT_DIGITS = 12


@dataclass(frozen=True)
class Check:
    """Outcome of one declared assertion.

    ``passed`` is ``None`` for a check skipped because it does not apply to
    the selected coefficient set.
    """

    module: str
    operation: str
    invariant: str
    measured: float
    tolerance: float
    passed: bool | None
    detail: str = ""

    def describe(self) -> str:
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[self.passed]
        text = (
            f"{status} {self.module}/{self.operation} [{self.invariant}] "
            f"measured={format_number(self.measured)} tolerance={format_number(self.tolerance)}"
        )
        return f"{text} ({self.detail})" if self.detail else text


def check_le(module, operation, invariant, measured, tolerance, detail="") -> Check:
    measured = float(measured)
    return Check(module, operation, invariant, measured, float(tolerance), bool(measured <= tolerance), detail)


def check_flag(module, operation, invariant, ok, measured=0.0, tolerance=0.0, detail="") -> Check:
    return Check(module, operation, invariant, float(measured), float(tolerance), bool(ok), detail)


def skipped(module, operation, invariant, reason) -> Check:
    return Check(module, operation, invariant, math.nan, math.nan, None, reason)


@dataclass
class ConvergenceTable:
    """Parameter sweep: one row per parameter value, fixed column order.

    The first column is the swept parameter.  ``checks`` collects the
    assertions evaluated on the sweep; ``provenance`` carries the config
    hash and package version for the report.
    """

    parameter: str
    columns: list[str]
    rows: list[tuple] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)

    def __post_init__(self):
        if not self.columns or self.columns[0] != self.parameter:
            raise ValueError("the first column must be the swept parameter")

    def add_row(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"row has {len(values)} cells, table has {len(self.columns)} columns")
        for v in values:
            if v is None:
                raise ValueError("missing cell")
        if self.rows:
            prev, new = self.rows[-1][0], values[0]
            if isinstance(prev, (int, float)) and isinstance(new, (int, float)):
                direction = self._direction()
                if new == prev or (direction is not None and (new - prev) * direction < 0):
                    raise ValueError(f"parameter column {self.parameter!r} must be strictly monotone")
        self.rows.append(tuple(values))

    def _direction(self):
        if len(self.rows) < 2:
            return None
        return 1.0 if self.rows[1][0] > self.rows[0][0] else -1.0

    def column(self, name: str) -> np.ndarray:
        k = self.columns.index(name)
        return np.array([row[k] for row in self.rows], dtype=float)

    @property
    def failed(self) -> list[Check]:
        return [c for c in self.checks if c.passed is False]


def format_number(value) -> str:
    """12-significant-digit positional notation; integers stay integers."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if v == 0.0:
        return "0"
    return np.format_float_positional(v, precision=SIGNIFICANT_DIGITS, unique=False, fractional=False, trim="-")


def render_csv(table: ConvergenceTable, failure: str | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([format_number(v) for v in row])
    if failure is not None:
        marker = ["FAILED", failure] + [""] * (len(table.columns) - 2)
        writer.writerow(marker[: max(len(table.columns), 2)])
    return buf.getvalue()


def atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and an atomic rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise KramersLabError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_csv(table: ConvergenceTable, path: str | os.PathLike, failure: str | None = None) -> None:
    """Write the table as CSV; ``failure`` appends a FAILED marker row."""
    atomic_write(path, render_csv(table, failure))


@contextmanager
def keeping_rows(table: ConvergenceTable):
    """Attach the rows gathered so far to any package error raised inside the block."""
    try:
        yield table
    except KramersLabError as exc:
        exc.partial_table = table
        raise
