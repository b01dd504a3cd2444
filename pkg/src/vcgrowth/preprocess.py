"""Raw-series preprocessing: trend extraction, imputation, model columns.

GDP per worker and the investment share are logged and trend-filtered;
educational attainment arrives on a sparse (typically 5-yearly) grid and is
interpolated to every panel year; population growth enters through
ln(depreciation + growth) with depreciation fixed at 5% per year.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.interpolate import CubicSpline
from scipy.linalg import solveh_banded

from .errors import (
    DuplicateRow,
    MissingColumn,
    MissingSeries,
    NonFiniteInput,
    NonPositiveForLog,
    SeriesTooShort,
    TooFewKnots,
)

#: variable tags expected in raw long-format inputs
VAR_GDP = "gdp_pw"
VAR_POP_GROWTH = "pop_growth"
VAR_INV_SHARE = "inv_share"
VAR_ATTAIN = "attain"
REQUIRED_VARIABLES = (VAR_GDP, VAR_POP_GROWTH, VAR_INV_SHARE, VAR_ATTAIN)

#: capital depreciation rate added to population growth before logging
DEPRECIATION = 0.05


@dataclass(frozen=True)
class RawSeries:
    """One country's yearly (or sparser) series for a single variable."""

    country: str
    variable: str
    values: dict[int, float] = field(repr=False)

    def years(self) -> list[int]:
        return sorted(self.values)

    def array(self, years: Sequence[int]) -> np.ndarray:
        missing = [y for y in years if y not in self.values]
        if missing:
            raise MissingSeries(
                f"{self.country}/{self.variable}: missing years {missing[:5]}"
                + ("..." if len(missing) > 5 else "")
            )
        return np.array([self.values[y] for y in years], dtype=float)


@dataclass(frozen=True)
class HpConfig:
    """Trend-filter configuration; 6.25 is the standard annual-data penalty."""

    smoothing: float = 6.25


def hp_trend(series: np.ndarray, cfg: HpConfig = HpConfig()) -> np.ndarray:
    """Penalized least-squares trend of a series.

    Minimizes sum((x - tau)^2) + smoothing * sum((second difference of tau)^2)
    by solving the pentadiagonal system (I + smoothing * D'D) tau = x exactly,
    where D is the second-difference operator.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D series, got shape {x.shape}")
    if x.size < 3:
        raise SeriesTooShort(f"trend filter needs at least 3 points, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("trend filter input contains NaN or infinity")
    lam = cfg.smoothing
    if lam < 0:
        raise ValueError(f"smoothing penalty must be >= 0, got {lam}")
    if lam == 0:
        return x.copy()

    T = x.size
    ones = np.ones(T - 2)
    D = sparse.diags([ones, -2.0 * ones, ones], offsets=[0, 1, 2], shape=(T - 2, T))
    A = sparse.eye(T) + lam * (D.T @ D)
    # upper banded storage for the symmetric positive definite solve
    ab = np.zeros((3, T))
    ab[0, 2:] = A.diagonal(2)
    ab[1, 1:] = A.diagonal(1)
    ab[2, :] = A.diagonal(0)
    tau = solveh_banded(ab, x, lower=False)
    # two passes of iterative refinement keep the solution accurate when a
    # huge penalty makes the system badly conditioned; the residual must be
    # formed as differences first, penalty scaling second, or the penalty
    # magnifies the rounding of the matrix product and hides the true residual
    for _ in range(2):
        r = (x - tau) - D.T @ (lam * (D @ tau))
        tau = tau + solveh_banded(ab, r, lower=False)
    return tau


def spline_impute(series: RawSeries, years: Iterable[int]) -> RawSeries:
    """Natural cubic spline through the knot years, evaluated yearly.

    Knot values are reproduced exactly; years outside the knot span take the
    value of the nearest knot instead of extrapolating the end polynomials.
    """
    knot_years = np.array(series.years(), dtype=float)
    if knot_years.size < 3:
        raise TooFewKnots(
            f"{series.country}/{series.variable}: spline needs >= 3 knot years, "
            f"got {knot_years.size}"
        )
    knot_values = np.array([series.values[int(y)] for y in knot_years], dtype=float)
    if not np.all(np.isfinite(knot_values)):
        raise NonFiniteInput(f"{series.country}/{series.variable}: non-finite knot value")
    spline = CubicSpline(knot_years, knot_values, bc_type="natural")
    target = np.array(sorted(set(int(y) for y in years)), dtype=float)
    clamped = np.clip(target, knot_years[0], knot_years[-1])
    dense = spline(clamped)
    return RawSeries(
        country=series.country,
        variable=series.variable,
        values={int(y): float(v) for y, v in zip(target, dense)},
    )


def _log_or_raise(values: np.ndarray, country: str, what: str) -> np.ndarray:
    if np.any(values <= 0):
        bad = float(values[values <= 0][0])
        raise NonPositiveForLog(f"{country}/{what}: value {bad} is not > 0, cannot take log")
    return np.log(values)


def build_variables(
    raw: Iterable[RawSeries],
    cpi: Mapping[tuple[str, int], float],
    years: Sequence[int],
    hp: HpConfig = HpConfig(),
    filter_on_logs: bool = True,
) -> pd.DataFrame:
    """Model columns (y, lnn, lnsk, lnattain) per country-year.

    Expects yearly coverage of gdp_pw, pop_growth, inv_share and attain for
    every country over ``years`` (attainment already imputed). GDP levels are
    rebased by the CPI factor for their country-year before logging; a missing
    CPI entry is an error, never a silent factor of 1.

    With ``filter_on_logs`` (default) the trend filter runs on the log of GDP
    and of the investment share, so rescaling a level series shifts the output
    uniformly; the alternative filters levels first and logs the trend.
    """
    years = [int(y) for y in years]
    by_country: dict[str, dict[str, RawSeries]] = {}
    for s in raw:
        by_country.setdefault(s.country, {})[s.variable] = s

    frames = []
    for country in sorted(by_country):
        have = by_country[country]
        for var in REQUIRED_VARIABLES:
            if var not in have:
                raise MissingSeries(f"{country}: variable {var!r} not supplied")
        factors = np.empty(len(years))
        for j, year in enumerate(years):
            try:
                factors[j] = cpi[(country, year)]
            except KeyError:
                raise MissingSeries(f"CPI entry missing for ({country}, {year})") from None

        gdp = have[VAR_GDP].array(years) * factors
        if filter_on_logs:
            y = hp_trend(_log_or_raise(gdp, country, VAR_GDP), hp)
        else:
            y = _log_or_raise(hp_trend(gdp, hp), country, "trend of " + VAR_GDP)
        growth = have[VAR_POP_GROWTH].array(years)
        lnn = _log_or_raise(DEPRECIATION + growth, country, f"{DEPRECIATION} + {VAR_POP_GROWTH}")
        share = have[VAR_INV_SHARE].array(years)
        if filter_on_logs:
            lnsk = hp_trend(_log_or_raise(share, country, VAR_INV_SHARE), hp)
        else:
            lnsk = _log_or_raise(hp_trend(share, hp), country, "trend of " + VAR_INV_SHARE)
        lnattain = _log_or_raise(have[VAR_ATTAIN].array(years), country, VAR_ATTAIN)

        frames.append(
            pd.DataFrame(
                {
                    "country": country,
                    "year": years,
                    "y": y,
                    "lnn": lnn,
                    "lnsk": lnsk,
                    "lnattain": lnattain,
                }
            )
        )
    if not frames:
        raise MissingSeries("no raw series supplied")
    return pd.concat(frames, ignore_index=True)


def _require_columns(frame: pd.DataFrame, required: Sequence[str], path) -> None:
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise MissingColumn(f"{path} lacks columns {missing}")


def read_raw_csv(path) -> list[RawSeries]:
    """Load long-format raw series (columns country, variable, year, value).

    Rows are grouped into one RawSeries per (country, variable); a repeated
    (country, variable, year) triple is rejected rather than silently
    overwritten.
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    _require_columns(frame, ("country", "variable", "year", "value"), path)
    keys = frame[["country", "variable", "year"]]
    if keys.duplicated().any():
        first = keys[keys.duplicated()].iloc[0]
        raise DuplicateRow(
            f"{path}: repeated row for "
            f"({first['country']}, {first['variable']}, {int(first['year'])})"
        )
    out: list[RawSeries] = []
    for (country, variable), block in frame.groupby(
        ["country", "variable"], sort=True
    ):
        values = {
            int(y): float(v) for y, v in zip(block["year"], block["value"])
        }
        out.append(RawSeries(country=str(country), variable=str(variable), values=values))
    return out


def read_cpi_csv(path) -> dict[tuple[str, int], float]:
    """Load per-(country, year) CPI factors from columns country, year, cpi."""
    frame = pd.read_csv(path, float_precision="round_trip")
    _require_columns(frame, ("country", "year", "cpi"), path)
    keys = frame[["country", "year"]]
    if keys.duplicated().any():
        first = keys[keys.duplicated()].iloc[0]
        raise DuplicateRow(
            f"{path}: repeated CPI row for ({first['country']}, {int(first['year'])})"
        )
    return {
        (str(c), int(y)): float(v)
        for c, y, v in zip(frame["country"], frame["year"], frame["cpi"])
    }
