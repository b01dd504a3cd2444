"""Balanced country-year panel storage and lag alignment.

A panel holds one row per (country, year) with the dependent variables,
regressors, and distribution drivers. Panels are strictly balanced: every
country covers every year of a contiguous range, and rows are normalized to
country-major, year-minor order so all downstream array layouts are stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

from .errors import (
    DuplicateRow,
    InvalidValue,
    LagTooDeep,
    MissingColumn,
    NonFiniteValue,
    UnbalancedPanel,
)

#: canonical field names; the ingestion schema maps these to file columns
KEY_COLUMNS = ("country", "year", "group")
VALUE_COLUMNS = (
    "y",
    "lnn",
    "lnsk",
    "lnattain",
    "pov",
    "gini",
    "middleclass",
    "y_poor",
    "y_rich",
)
PANEL_COLUMNS = KEY_COLUMNS + VALUE_COLUMNS

REGRESSORS = ("lnn", "lnsk", "lnattain")
DRIVERS = ("pov", "gini", "middleclass")
DEP_CHOICES = ("y", "y_poor", "y_rich")

DEFAULT_SCHEMA: dict[str, str] = {name: name for name in PANEL_COLUMNS}


@dataclass(frozen=True)
class Panel:
    """Validated balanced panel with normalized row order."""

    countries: tuple[str, ...]
    years: tuple[int, ...]
    group_of: dict[str, str]
    data: pd.DataFrame = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.countries)

    @property
    def T(self) -> int:
        return len(self.years)

    def array(self, column: str) -> np.ndarray:
        """Column values as an (n, T) array in (country, year) order."""
        return self.data[column].to_numpy().reshape(self.n, self.T)


@dataclass(frozen=True)
class AlignedPanel:
    """Dependent values paired with lagged regressors and drivers.

    Row r pairs the dependent variable at year t with its own value and the
    regressor/driver measurements at year t - lag, in country-major,
    year-minor order. ``years`` lists the dependent-side years.
    """

    countries: tuple[str, ...]
    years: tuple[int, ...]
    dep_name: str
    lag: int
    group_of: dict[str, str]
    dep: np.ndarray = field(repr=False)
    dep_lag: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    drivers: np.ndarray = field(repr=False)
    row_index: tuple[tuple[str, int], ...] = field(repr=False)
    regressor_names: tuple[str, ...] = REGRESSORS
    driver_names: tuple[str, ...] = DRIVERS

    @property
    def n_rows(self) -> int:
        return self.dep.shape[0]


def _validate_values(df: pd.DataFrame) -> None:
    def address(mask: np.ndarray) -> str:
        row = df[mask].iloc[0]
        return f"({row['country']}, {row['year']})"

    values = df[list(VALUE_COLUMNS)].to_numpy()
    finite = np.isfinite(values)
    if not finite.all():
        bad_row, bad_col = np.argwhere(~finite)[0]
        row = df.iloc[bad_row]
        raise NonFiniteValue(
            f"non-finite {VALUE_COLUMNS[bad_col]} at ({row['country']}, {row['year']})"
        )

    checks = [
        ("pov", (df["pov"] < 0) | (df["pov"] > 1), "pov outside [0, 1]"),
        ("gini", (df["gini"] < 0) | (df["gini"] >= 1), "gini outside [0, 1)"),
        (
            "middleclass",
            (df["middleclass"] <= 0) | (df["middleclass"] >= 1),
            "middleclass outside (0, 1)",
        ),
        ("y_poor", df["y_poor"] > df["y_rich"], "y_poor exceeds y_rich"),
    ]
    for _, mask, message in checks:
        mask = mask.to_numpy()
        if mask.any():
            raise InvalidValue(f"{message} at {address(mask)}")


def _build_panel(df: pd.DataFrame) -> Panel:
    if df.duplicated(subset=["country", "year"]).any():
        dup = df[df.duplicated(subset=["country", "year"])].iloc[0]
        raise DuplicateRow(f"duplicate row for ({dup['country']}, {dup['year']})")

    _validate_values(df)

    countries = tuple(sorted(df["country"].unique()))
    years = tuple(int(y) for y in sorted(df["year"].unique()))
    if len(years) >= 2 and any(b - a != 1 for a, b in zip(years, years[1:])):
        raise UnbalancedPanel(f"years are not contiguous: {years}")

    expected = {(c, y) for c in countries for y in years}
    present = set(zip(df["country"], (int(y) for y in df["year"])))
    missing = sorted(expected - present)
    if missing:
        raise UnbalancedPanel(f"missing (country, year) pairs: {missing[:10]}")

    groups = df.groupby("country")["group"].nunique()
    if (groups > 1).any():
        bad = groups[groups > 1].index[0]
        raise InvalidValue(f"group label not constant within country {bad}")
    group_of = dict(df.drop_duplicates("country")[["country", "group"]].to_numpy())

    data = (
        df[list(PANEL_COLUMNS)]
        .sort_values(["country", "year"], kind="mergesort")
        .reset_index(drop=True)
    )
    data["year"] = data["year"].astype(int)
    return Panel(countries=countries, years=years, group_of=group_of, data=data)


def ingest_panel(path: str | Path, schema: Mapping[str, str] | None = None) -> Panel:
    """Read and validate a panel CSV.

    ``schema`` maps each canonical field name to its column in the file;
    omitted entries default to the canonical name itself.
    """
    resolved = dict(DEFAULT_SCHEMA)
    if schema is not None:
        resolved.update(schema)
    df = pd.read_csv(path, float_precision="round_trip")
    missing = [resolved[name] for name in PANEL_COLUMNS if resolved[name] not in df.columns]
    if missing:
        raise MissingColumn(f"{path}: missing columns {missing}")
    df = df.rename(columns={resolved[name]: name for name in PANEL_COLUMNS})
    return _build_panel(df)


def from_frame(df: pd.DataFrame) -> Panel:
    """Validate an in-memory frame that already uses canonical columns."""
    missing = [name for name in PANEL_COLUMNS if name not in df.columns]
    if missing:
        raise MissingColumn(f"frame missing columns {missing}")
    return _build_panel(df.copy())


def export_panel(panel: Panel, path: str | Path) -> None:
    """Write the canonical CSV form; ingest(export(p)) round-trips exactly."""
    panel.data.to_csv(path, index=False)


def lag_align(panel: Panel, dep: str = "y", lag: int = 1) -> AlignedPanel:
    """Pair each dependent value with regressors and drivers lag years back.

    Produces n * (T - lag) rows. The lag must leave at least one usable
    period: 1 <= lag <= T - 2.
    """
    if dep not in DEP_CHOICES:
        raise ValueError(f"dep must be one of {DEP_CHOICES}, got {dep!r}")
    if not 1 <= lag <= panel.T - 2:
        raise LagTooDeep(
            f"lag {lag} invalid for T = {panel.T}; need 1 <= lag <= {panel.T - 2}"
        )

    dep_arr = panel.array(dep)
    n, T = dep_arr.shape
    keep = T - lag
    x = np.stack([panel.array(name)[:, :keep] for name in REGRESSORS], axis=-1)
    drivers = np.stack([panel.array(name)[:, :keep] for name in DRIVERS], axis=-1)

    years = panel.years[lag:]
    row_index = tuple(
        (country, year) for country in panel.countries for year in years
    )
    return AlignedPanel(
        countries=panel.countries,
        years=years,
        dep_name=dep,
        lag=lag,
        group_of=dict(panel.group_of),
        dep=dep_arr[:, lag:].reshape(-1),
        dep_lag=dep_arr[:, :keep].reshape(-1),
        x=x.reshape(n * keep, len(REGRESSORS)),
        drivers=drivers.reshape(n * keep, len(DRIVERS)),
        row_index=row_index,
    )
