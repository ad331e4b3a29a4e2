"""Grid-sampled scalar functions shared by every solver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coeffs import Grid1D, PhaseGrid
from .errors import GridError, NumericalError


@dataclass(frozen=True)
class SolutionField:
    """Samples of a scalar function on a grid.

    ``mask`` optionally marks the nodes where the function is defined
    (a barrier on a boundary strip, a Dirichlet solution outside a hole);
    values elsewhere are filler and should be ignored.
    """

    grid: Grid1D | PhaseGrid
    values: np.ndarray
    time: float = 0.0
    mask: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        expected = (self.grid.size,) if isinstance(self.grid, Grid1D) else self.grid.shape
        if values.shape != expected:
            raise GridError(f"field has shape {values.shape}, grid expects {expected}")
        if not np.all(np.isfinite(values)):
            raise NumericalError("field contains non-finite values")
        object.__setattr__(self, "values", values)
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != expected:
                raise GridError("mask shape does not match grid")
            object.__setattr__(self, "mask", mask)

    @property
    def nodes(self) -> np.ndarray:
        if isinstance(self.grid, PhaseGrid):
            raise GridError("phase-space field has no 1D node array")
        return self.grid.nodes

    def defined(self) -> np.ndarray:
        """Values restricted to the mask (all values when unmasked)."""
        return self.values if self.mask is None else self.values[self.mask]

    def sup_distance(self, other: "SolutionField") -> float:
        if self.values.shape != other.values.shape:
            raise GridError("fields live on different grids")
        return float(np.max(np.abs(self.values - other.values)))
