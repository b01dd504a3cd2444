"""Shared fixture builders for the test suite."""

from __future__ import annotations

import numpy as np

from vcgrowth.panel import AlignedPanel


def synthetic_aligned(n=4, periods=6, seed=0, driver_fn=None):
    """Hand-built aligned panel with controllable driver paths."""
    rng = np.random.default_rng(seed)
    countries = tuple(f"C{i:02d}" for i in range(n))
    years = tuple(range(1980, 1980 + periods))
    N = n * periods
    if driver_fn is None:
        drivers = np.column_stack(
            [
                rng.uniform(0.0, 0.6, N),
                rng.uniform(0.2, 0.7, N),
                rng.uniform(0.2, 0.8, N),
            ]
        )
    else:
        drivers = driver_fn(rng, N)
    return AlignedPanel(
        countries=countries,
        years=years,
        dep_name="y",
        lag=1,
        group_of={c: "Other" for c in countries},
        dep=rng.normal(8.0, 1.0, N),
        dep_lag=rng.normal(8.0, 1.0, N),
        x=rng.normal(0.0, 1.0, (N, 3)) + np.array([-2.6, -1.6, 1.6]),
        drivers=drivers,
        row_index=tuple((c, y) for c in countries for y in years),
    )
