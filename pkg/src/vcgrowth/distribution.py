"""Distributional statistics derived from 100-centile income grids.

A grid holds the mean income of each population centile for one country-year.
All shape statistics (Lorenz curve, Gini, Theil, poverty headcount, quintile
means) treat the 100 cells as atomic equal-population blocks.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    MissingColumn,
    NonFiniteValue,
    ZeroIncomeCell,
    ZeroQuintileIncome,
    ZeroTotalIncome,
)

#: number of equal-population cells per grid
N_CELLS = 100

#: descents smaller than this are treated as float noise, not data errors
SORT_TOLERANCE = 1e-9

#: grid CSV centile column names, c001 (poorest) through c100 (richest)
CENTILE_COLUMNS = tuple(f"c{i:03d}" for i in range(1, N_CELLS + 1))


@dataclass(frozen=True)
class IncomeGrid:
    """Mean income per population centile for one country-year.

    Centiles are stored sorted nondecreasing. Inputs that are unsorted beyond
    ``SORT_TOLERANCE`` are re-sorted with a warning rather than rejected.
    """

    country: str
    year: int
    pop: float
    centiles: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        c = np.asarray(self.centiles, dtype=float)
        if c.shape != (N_CELLS,):
            raise ValueError(f"grid {self.country}/{self.year}: expected {N_CELLS} centiles, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise NonFiniteValue(f"grid {self.country}/{self.year}: non-finite centile value")
        if not (np.isfinite(self.pop) and self.pop > 0):
            raise ValueError(f"grid {self.country}/{self.year}: population must be positive")
        if np.any(c < 0):
            raise ValueError(f"grid {self.country}/{self.year}: negative centile income")
        if np.any(np.diff(c) < -SORT_TOLERANCE):
            warnings.warn(
                f"grid {self.country}/{self.year}: centiles not sorted; re-sorting",
                UserWarning,
                stacklevel=2,
            )
            c = np.sort(c)
        elif np.any(np.diff(c) < 0):
            c = np.sort(c)  # silent fix-up of sub-tolerance float noise
        if c.sum() <= 0:
            raise ZeroTotalIncome(f"grid {self.country}/{self.year}: total income is zero")
        c.flags.writeable = False
        object.__setattr__(self, "centiles", c)


@dataclass(frozen=True)
class LorenzCurve:
    """Piecewise-linear cumulative income share at knots p = 0, 0.01, ..., 1."""

    points: np.ndarray = field(repr=False)

    def share_below(self, p: float) -> float:
        """Cumulative income share of the poorest fraction ``p``.

        Exact at knots (p a multiple of 0.01); linear in between.
        """
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"population share must lie in [0, 1], got {p}")
        knots = np.arange(N_CELLS + 1) / N_CELLS
        return float(np.interp(p, knots, self.points))


def lorenz(grid: IncomeGrid) -> LorenzCurve:
    """Lorenz curve of the grid: G_j = (sum of poorest j cells) / total."""
    cum = np.cumsum(grid.centiles)
    total = cum[-1]
    if total <= 0:
        raise ZeroTotalIncome(f"grid {grid.country}/{grid.year}: total income is zero")
    points = np.concatenate([[0.0], cum / total])
    return LorenzCurve(points=points)


def gini(grid: IncomeGrid) -> float:
    """Gini index as 1 - 2 * (area under the Lorenz curve).

    The area is the exact trapezoid sum over the 101 knots, which for atomic
    equal-population cells coincides with the pairwise mean-absolute-difference
    definition.
    """
    pts = lorenz(grid).points
    area = ((pts[:-1] + pts[1:]) / 2.0).sum() / N_CELLS
    return 1.0 - 2.0 * area


def theil(grid: IncomeGrid) -> float:
    """Theil entropy index (1/N) * sum (x/mu) log(x/mu); needs x > 0."""
    x = grid.centiles
    if np.any(x <= 0):
        raise ZeroIncomeCell(
            f"grid {grid.country}/{grid.year}: Theil index requires strictly positive centiles"
        )
    ratio = x / x.mean()
    return float(np.mean(ratio * np.log(ratio)))


def poverty_headcount(grid: IncomeGrid, line: float, cpi_factor: float = 1.0) -> float:
    """Fraction of population strictly below an annualized poverty line.

    ``line`` is income per person per day; the threshold compared against the
    annual centile incomes is ``line * 365 * cpi_factor``. Cells are atomic:
    the headcount moves in steps of 0.01, and a cell exactly at the threshold
    is not poor.
    """
    threshold = line * 365.0 * cpi_factor
    return float(np.count_nonzero(grid.centiles < threshold)) / N_CELLS


def middle_class_share(grid: IncomeGrid) -> float:
    """Income share of the 20th-80th population centiles: G(0.8) - G(0.2)."""
    pts = lorenz(grid).points
    return float(pts[80] - pts[20])


def total_income(grid: IncomeGrid) -> float:
    """Aggregate income: population times mean centile income."""
    return grid.pop * float(grid.centiles.mean())


def quintile_log_mean(grid: IncomeGrid, which: str, cpi_factor: float = 1.0) -> float:
    """Log mean income of the bottom or top population quintile.

    bottom: ln(cpi * total * G(0.2) / (0.2 * pop))
    top:    ln(cpi * total * (1 - G(0.8)) / (0.2 * pop))
    """
    pts = lorenz(grid).points
    if which == "bottom":
        share = float(pts[20])
    elif which == "top":
        share = 1.0 - float(pts[80])
    else:
        raise ValueError(f"quintile selector must be 'bottom' or 'top', got {which!r}")
    value = cpi_factor * total_income(grid) * share / (0.2 * grid.pop)
    if value <= 0:
        raise ZeroQuintileIncome(
            f"grid {grid.country}/{grid.year}: {which} quintile has zero income"
        )
    return math.log(value)


def read_grid_csv(path) -> list[IncomeGrid]:
    """Load income grids from a CSV with columns country, year, pop, c001..c100.

    Each row becomes one validated IncomeGrid; grid-level problems (negative
    cells, zero totals, unsorted beyond tolerance) surface through the grid's
    own validation.
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    required = ("country", "year", "pop") + CENTILE_COLUMNS
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise MissingColumn(
            f"grid file {path} lacks columns {missing[:4]}"
            + ("..." if len(missing) > 4 else "")
        )
    cells = frame[list(CENTILE_COLUMNS)].to_numpy(dtype=float)
    return [
        IncomeGrid(
            country=str(frame["country"].iloc[i]),
            year=int(frame["year"].iloc[i]),
            pop=float(frame["pop"].iloc[i]),
            centiles=cells[i],
        )
        for i in range(len(frame))
    ]
