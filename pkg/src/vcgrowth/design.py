"""Stacked design matrices for the varying-coefficient dynamic panel.

Each regressor's coefficient is a polynomial in the distribution drivers, so
the stacked system regresses the dependent variable on its own lag, country
dummies, and regressor-scaled copies of the driver basis. With K regressors
and a basis of size B the interaction block has M = K * B columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonFiniteDriver, UnknownDriver
from .panel import AlignedPanel


@dataclass(frozen=True)
class BasisSpec:
    """Polynomial driver basis: optional intercept, then per-driver powers."""

    drivers: tuple[str, ...] = ("pov", "gini", "middleclass")
    degree: int = 2
    include_intercept: bool = True

    def __post_init__(self) -> None:
        if self.degree < 0:
            raise ValueError(f"degree must be >= 0, got {self.degree}")
        if not self.drivers and self.degree > 0:
            raise ValueError("positive degree requires at least one driver")

    @property
    def size(self) -> int:
        return int(self.include_intercept) + self.degree * len(self.drivers)

    def element_names(self) -> tuple[str, ...]:
        names: list[str] = ["1"] if self.include_intercept else []
        for d in self.drivers:
            names.extend(d if p == 1 else f"{d}^{p}" for p in range(1, self.degree + 1))
        return tuple(names)


def basis_matrix(z: np.ndarray, spec: BasisSpec = BasisSpec()) -> np.ndarray:
    """Evaluate the basis on rows of driver values: (N, D) -> (N, B)."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] != len(spec.drivers):
        raise DimensionMismatch(
            f"driver array has shape {z.shape}, expected (*, {len(spec.drivers)})"
        )
    if not np.all(np.isfinite(z)):
        raise NonFiniteDriver("driver values contain NaN or infinity")
    cols: list[np.ndarray] = []
    if spec.include_intercept:
        cols.append(np.ones(z.shape[0]))
    for j in range(len(spec.drivers)):
        for p in range(1, spec.degree + 1):
            cols.append(z[:, j] ** p)
    if not cols:
        return np.empty((z.shape[0], 0))
    return np.column_stack(cols)


def basis_eval(z: np.ndarray, spec: BasisSpec = BasisSpec()) -> np.ndarray:
    """Evaluate the basis for a single observation's driver values."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise DimensionMismatch(f"expected a 1-D driver vector, got shape {z.shape}")
    return basis_matrix(z[None, :], spec)[0]


@dataclass(frozen=True)
class StackedDesign:
    """Stacked system y = rho * y_lag + C eta + W gamma + u."""

    y: np.ndarray = field(repr=False)
    y_lag: np.ndarray = field(repr=False)
    C: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)
    row_index: tuple[tuple[str, int], ...] = field(repr=False)
    countries: tuple[str, ...]
    regressor_names: tuple[str, ...]
    basis: BasisSpec
    gamma_names: tuple[str, ...]

    @property
    def n_rows(self) -> int:
        return self.y.shape[0]

    @property
    def n_effects(self) -> int:
        return self.C.shape[1]

    @property
    def K(self) -> int:
        return len(self.regressor_names)

    @property
    def B(self) -> int:
        return self.basis.size

    @property
    def M(self) -> int:
        return self.W.shape[1]

    def full_matrix(self) -> np.ndarray:
        """Regressor matrix [y_lag | C | W] in coefficient order."""
        return np.column_stack([self.y_lag, self.C, self.W])


def build_stacked(
    aligned: AlignedPanel,
    spec: BasisSpec = BasisSpec(),
    include_fixed_effects: bool = True,
) -> StackedDesign:
    """Assemble the stacked system from an aligned panel.

    Block k of W holds the basis columns scaled by regressor k, so column
    k * B + b is x_k * basis_b evaluated at the lagged dates. Row order is
    inherited from the aligned panel (country-major, year-minor).
    """
    unknown = [d for d in spec.drivers if d not in aligned.driver_names]
    if unknown:
        raise UnknownDriver(
            f"basis drivers {unknown} not among panel drivers {aligned.driver_names}"
        )
    N = aligned.n_rows
    if not (aligned.dep.shape == aligned.dep_lag.shape == (N,)) or aligned.x.shape[0] != N:
        raise DimensionMismatch("aligned panel arrays have inconsistent row counts")

    sel = [aligned.driver_names.index(d) for d in spec.drivers]
    Z = basis_matrix(aligned.drivers[:, sel], spec)
    K = aligned.x.shape[1]
    B = spec.size
    W = np.empty((N, K * B))
    for k in range(K):
        W[:, k * B : (k + 1) * B] = aligned.x[:, k : k + 1] * Z

    n = len(aligned.countries)
    if include_fixed_effects:
        periods = N // n
        C = np.kron(np.eye(n), np.ones((periods, 1)))
    else:
        C = np.empty((N, 0))

    gamma_names = tuple(
        f"{reg}:{elem}" for reg in aligned.regressor_names for elem in spec.element_names()
    )
    return StackedDesign(
        y=aligned.dep.copy(),
        y_lag=aligned.dep_lag.copy(),
        C=C,
        W=W,
        row_index=aligned.row_index,
        countries=aligned.countries if include_fixed_effects else (),
        regressor_names=aligned.regressor_names,
        basis=spec,
        gamma_names=gamma_names,
    )


@dataclass(frozen=True)
class IdentificationReport:
    """Effective-rank check of the full regressor matrix."""

    passed: bool
    rank: int
    expected_rank: int
    deficiency: int
    tolerance: float

    def message(self) -> str:
        if self.passed:
            return f"identification PASS: rank {self.rank} = 1 + n + M"
        return (
            f"identification FAIL: rank {self.rank} < {self.expected_rank} "
            f"(deficient subspace of dimension {self.deficiency})"
        )


def check_identification(d: StackedDesign, rel_tol: float = 1e-10) -> IdentificationReport:
    """Singular-value rank of [y_lag | C | W] against 1 + n + M.

    Singular values below ``rel_tol`` times the largest are treated as zero.
    """
    X = d.full_matrix()
    s = np.linalg.svd(X, compute_uv=False)
    rank = int((s > rel_tol * s[0]).sum()) if s.size and s[0] > 0 else 0
    expected = 1 + d.n_effects + d.M
    return IdentificationReport(
        passed=rank == expected,
        rank=rank,
        expected_rank=expected,
        deficiency=expected - rank,
        tolerance=rel_tol,
    )
