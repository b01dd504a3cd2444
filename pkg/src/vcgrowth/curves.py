"""Coefficient curves and per-observation coefficient summaries.

Each regressor's coefficient is a polynomial in the distributional drivers.
This module evaluates that polynomial along one driver while holding the
others at their pooled sample means (a coefficient curve with a pointwise
confidence band), tabulates the fitted coefficient for every observation,
and reduces those observations to five-number summaries by country group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .design import basis_matrix
from .errors import DimensionMismatch, NotConvergedFit, UnknownDriver, UnmappedCountry
from .estimator import FitResult
from .panel import AlignedPanel

GRID_POINTS = 200


@dataclass(frozen=True)
class CoefficientCurve:
    """One regressor's coefficient as a function of a single driver."""

    regressor: str
    driver: str
    grid: np.ndarray
    beta: np.ndarray
    band_halfwidth: np.ndarray
    level: float
    held_fixed: dict[str, float]
    converged: bool

    @property
    def lower(self) -> np.ndarray:
        return self.beta - self.band_halfwidth

    @property
    def upper(self) -> np.ndarray:
        return self.beta + self.band_halfwidth

    @property
    def max_band_width(self) -> float:
        return float(2.0 * self.band_halfwidth.max())


@dataclass(frozen=True)
class GroupStats:
    """Five-number summary of fitted coefficients within a country group."""

    group: str
    regressor: str
    count: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float


def _driver_column(aligned: AlignedPanel, name: str) -> np.ndarray:
    try:
        idx = aligned.driver_names.index(name)
    except ValueError:
        raise UnknownDriver(
            f"driver {name!r} not in panel drivers {aligned.driver_names}"
        ) from None
    return aligned.drivers[:, idx]


def _basis_driver_values(fit: FitResult, aligned: AlignedPanel) -> np.ndarray:
    """Panel driver columns reordered to the fit's basis driver order."""
    return np.column_stack([_driver_column(aligned, d) for d in fit.basis.drivers])


def _check_compatible(fit: FitResult, aligned: AlignedPanel) -> None:
    expected = len(aligned.regressor_names) * fit.basis_size
    if len(fit.gamma) != expected:
        raise DimensionMismatch(
            f"fit has {len(fit.gamma)} varying coefficients, panel implies {expected}"
        )


def eval_curve(
    fit: FitResult,
    regressor: int,
    driver: str,
    aligned: AlignedPanel,
    level: float = 0.95,
    allow_nonconverged: bool = False,
) -> CoefficientCurve:
    """Evaluate coefficient ``regressor`` (1-based) along one driver.

    The curve is computed on a 200-point grid spanning the observed range
    of ``driver`` in the aligned panel, with every other basis driver held
    at its pooled sample mean.  The pointwise band uses the fit's stored
    covariance for the regressor's coefficient block.
    """
    if not fit.converged and not allow_nonconverged:
        raise NotConvergedFit(
            "fit did not converge; pass allow_nonconverged=True to evaluate anyway"
        )
    if not 1 <= regressor <= len(aligned.regressor_names):
        raise ValueError(
            f"regressor index {regressor} out of range 1..{len(aligned.regressor_names)}"
        )
    if driver not in fit.basis.drivers:
        raise UnknownDriver(f"driver {driver!r} not in basis drivers {fit.basis.drivers}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    _check_compatible(fit, aligned)

    observed = _driver_column(aligned, driver)
    grid = np.linspace(observed.min(), observed.max(), GRID_POINTS)
    held = {
        d: float(_driver_column(aligned, d).mean())
        for d in fit.basis.drivers
        if d != driver
    }

    z = np.empty((GRID_POINTS, len(fit.basis.drivers)))
    for j, d in enumerate(fit.basis.drivers):
        z[:, j] = grid if d == driver else held[d]
    zt = basis_matrix(z, fit.basis)

    k = regressor - 1
    beta = zt @ fit.gamma[k * fit.basis_size : (k + 1) * fit.basis_size]
    vk = fit.gamma_block_covariance(k)
    variance = np.einsum("ij,jk,ik->i", zt, vk, zt)
    crit = float(stats.norm.ppf(0.5 * (1.0 + level)))
    halfwidth = crit * np.sqrt(np.clip(variance, 0.0, None))

    return CoefficientCurve(
        regressor=aligned.regressor_names[k],
        driver=driver,
        grid=grid,
        beta=beta,
        band_halfwidth=halfwidth,
        level=level,
        held_fixed=held,
        converged=fit.converged,
    )


def observation_betas(fit: FitResult, aligned: AlignedPanel) -> pd.DataFrame:
    """Fitted coefficient of every regressor at every observation.

    Returns a tidy frame with columns (country, year, regressor, beta),
    ordered observation-major with regressors in panel order within each
    observation.
    """
    _check_compatible(fit, aligned)
    zt = basis_matrix(_basis_driver_values(fit, aligned), fit.basis)
    K = len(aligned.regressor_names)
    B = fit.basis_size
    betas = np.column_stack([zt @ fit.gamma[k * B : (k + 1) * B] for k in range(K)])
    return pd.DataFrame(
        {
            "country": np.repeat([c for c, _ in aligned.row_index], K),
            "year": np.repeat([y for _, y in aligned.row_index], K),
            "regressor": list(aligned.regressor_names) * aligned.n_rows,
            "beta": betas.ravel(),
        }
    )


def group_boxstats(
    betas: pd.DataFrame, group_of: dict[str, str]
) -> list[GroupStats]:
    """Five-number summaries of fitted coefficients by country group.

    Quartiles use half-offset plotting positions, (j - 0.5) / m, with
    linear interpolation between order statistics.
    """
    unmapped = sorted(set(betas["country"]) - set(group_of))
    if unmapped:
        raise UnmappedCountry(f"countries missing from the group map: {unmapped}")
    frame = betas.assign(group=betas["country"].map(group_of))
    regressor_order = list(dict.fromkeys(betas["regressor"]))
    out: list[GroupStats] = []
    for group in sorted(frame["group"].unique()):
        for regressor in regressor_order:
            sample = frame.loc[
                (frame["group"] == group) & (frame["regressor"] == regressor), "beta"
            ].to_numpy()
            if sample.size == 0:
                continue
            q1, median, q3 = np.quantile(sample, [0.25, 0.5, 0.75], method="hazen")
            out.append(
                GroupStats(
                    group=group,
                    regressor=regressor,
                    count=int(sample.size),
                    minimum=float(sample.min()),
                    q1=float(q1),
                    median=float(median),
                    q3=float(q3),
                    maximum=float(sample.max()),
                )
            )
    return out
