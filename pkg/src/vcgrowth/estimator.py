"""Iterated reweighted least squares for the stacked panel system.

Step 1 fits the stacked system by least squares, step 2 extracts residuals,
step 3 refits with the reciprocal squared residuals as weights; steps 2-3
repeat until the summed squared coefficient change falls below the threshold.
Squared residuals are floored at a small fraction of their mean so no single
observation receives unbounded weight. All solves use orthogonal
decompositions; normal equations appear only in test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .design import BasisSpec, StackedDesign
from .errors import NonPositiveWeight, RankDeficient, SingularMeat


@dataclass(frozen=True)
class FitConfig:
    """Iteration, weighting, and reporting controls.

    ``convergence_threshold`` bounds the summed squared change of the full
    coefficient vector between successive iterations. ``weight_floor`` is the
    fraction of the mean squared residual below which a squared residual is
    clamped before inversion. ``star_thresholds`` are strict upper p-value
    bounds for one, two, and three stars. ``covariance`` selects the
    heteroscedasticity-consistent sandwich (default) or the naive scaled
    inverse cross-product.
    """

    convergence_threshold: float = 0.005
    max_iterations: int = 100
    weight_floor: float = 1e-6
    star_thresholds: tuple[float, float, float] = (0.05, 0.01, 1e-4)
    covariance: str = "sandwich"

    def __post_init__(self) -> None:
        if self.convergence_threshold <= 0:
            raise ValueError("convergence_threshold must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.weight_floor <= 0:
            raise ValueError("weight_floor must be > 0")
        if self.covariance not in ("sandwich", "naive"):
            raise ValueError(f"covariance must be 'sandwich' or 'naive', got {self.covariance!r}")
        a, b, c = self.star_thresholds
        if not (a > b > c > 0):
            raise ValueError("star_thresholds must be strictly decreasing positives")


@dataclass(frozen=True)
class LeastSquaresFit:
    """Solution of one (weighted) least-squares pass."""

    theta: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)
    rank: int = 0


@dataclass(frozen=True)
class FitResult:
    """Converged (or capped) estimate with inference.

    The coefficient vector is ordered (rho, eta_1..eta_n, gamma_1..gamma_M);
    ``covariance``, ``std_errors``, ``p_values`` and ``stars`` follow the same
    order. ``trace`` holds the summed squared coefficient change per weighted
    iteration.
    """

    theta: np.ndarray = field(repr=False)
    coefficient_names: tuple[str, ...] = field(repr=False)
    countries: tuple[str, ...]
    gamma_names: tuple[str, ...] = field(repr=False)
    covariance: np.ndarray = field(repr=False)
    std_errors: np.ndarray = field(repr=False)
    p_values: np.ndarray = field(repr=False)
    stars: tuple[str, ...] = field(repr=False)
    residuals: np.ndarray = field(repr=False)
    final_weights: np.ndarray = field(repr=False)
    iterations: int
    converged: bool
    trace: tuple[float, ...]
    config: FitConfig
    basis: BasisSpec

    @property
    def n_effects(self) -> int:
        return len(self.countries)

    @property
    def rho(self) -> float:
        return float(self.theta[0])

    @property
    def eta(self) -> np.ndarray:
        return self.theta[1 : 1 + self.n_effects]

    @property
    def gamma(self) -> np.ndarray:
        return self.theta[1 + self.n_effects :]

    @property
    def basis_size(self) -> int:
        return self.basis.size

    def gamma_slice(self, k: int) -> slice:
        """Full-vector slice of regressor k's basis coefficients (0-based k)."""
        start = 1 + self.n_effects + k * self.basis_size
        return slice(start, start + self.basis_size)

    def gamma_block_covariance(self, k: int) -> np.ndarray:
        """(B, B) covariance of regressor k's basis coefficients."""
        s = self.gamma_slice(k)
        return self.covariance[s, s]


def assign_stars(p: float, thresholds: tuple[float, float, float]) -> str:
    """Significance stars with strict inequalities at every threshold."""
    one, two, three = thresholds
    if p < three:
        return "***"
    if p < two:
        return "**"
    if p < one:
        return "*"
    return ""


def _solve_ls(X: np.ndarray, y: np.ndarray) -> LeastSquaresFit:
    theta, _, rank, _ = linalg.lstsq(X, y, lapack_driver="gelsy")
    if rank < X.shape[1]:
        raise RankDeficient(
            f"regressor matrix has rank {rank} < {X.shape[1]} columns"
        )
    return LeastSquaresFit(theta=theta, residuals=y - X @ theta, rank=rank)


def ols(d: StackedDesign) -> LeastSquaresFit:
    """Unweighted least squares on [y_lag | C | W] via QR decomposition."""
    return _solve_ls(d.full_matrix(), d.y)


def wls(d: StackedDesign, weights: np.ndarray) -> LeastSquaresFit:
    """Weighted least squares: rows scaled by sqrt(weights), then solved.

    Returned residuals are in the original (unweighted) scale.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (d.n_rows,):
        raise NonPositiveWeight(f"weights shape {w.shape} != ({d.n_rows},)")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise NonPositiveWeight("weights must be finite and strictly positive")
    X = d.full_matrix()
    sw = np.sqrt(w)
    fit = _solve_ls(X * sw[:, None], d.y * sw)
    return LeastSquaresFit(theta=fit.theta, residuals=d.y - X @ fit.theta, rank=fit.rank)


@dataclass(frozen=True)
class InferenceResult:
    covariance: np.ndarray = field(repr=False)
    std_errors: np.ndarray = field(repr=False)
    p_values: np.ndarray = field(repr=False)
    stars: tuple[str, ...] = field(repr=False)


def inference(
    d: StackedDesign,
    theta: np.ndarray,
    weights: np.ndarray,
    cfg: FitConfig = FitConfig(),
) -> InferenceResult:
    """Covariance and p-values at a weighted least-squares solution.

    The default sandwich estimator is (X'WX)^-1 X'W diag(u^2) WX (X'WX)^-1
    with u the unweighted residuals; the naive alternative scales (X'WX)^-1
    by the weighted mean squared residual. Two-sided p-values come from the
    normal approximation; a coefficient with zero standard error gets p = 0
    unless it is itself zero.
    """
    X = d.full_matrix()
    w = np.asarray(weights, dtype=float)
    u = d.y - X @ theta
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    p = X.shape[1]

    R = np.linalg.qr(Xw, mode="r")
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-13 * max(diag.max(), 1e-300):
        raise SingularMeat("weighted cross-product matrix is numerically singular")
    Rinv = linalg.solve_triangular(R, np.eye(p))
    bread_inv = Rinv @ Rinv.T

    if cfg.covariance == "sandwich":
        G = X * (w * u)[:, None]
        meat = G.T @ G
        V = bread_inv @ meat @ bread_inv
    else:
        dof = max(d.n_rows - p, 1)
        s2 = float((w * u**2).sum()) / dof
        V = s2 * bread_inv
    V = (V + V.T) / 2.0

    se = np.sqrt(np.clip(np.diag(V), 0.0, None))
    pvals = np.empty(p)
    nonzero = se > 0
    pvals[nonzero] = 2.0 * stats.norm.sf(np.abs(theta[nonzero]) / se[nonzero])
    pvals[~nonzero] = np.where(theta[~nonzero] == 0.0, 1.0, 0.0)
    stars = tuple(assign_stars(float(pv), cfg.star_thresholds) for pv in pvals)
    return InferenceResult(covariance=V, std_errors=se, p_values=pvals, stars=stars)


def fit_iterated(d: StackedDesign, cfg: FitConfig = FitConfig()) -> FitResult:
    """Iterated reweighted least squares with reciprocal-squared-residual
    weights.

    Starts from the unweighted solution; each iteration floors the squared
    residuals at ``weight_floor`` times their mean, inverts them as weights,
    and refits. Stops when the summed squared coefficient change drops below
    the threshold, when the change grows twice in a row (oscillation), or at
    the iteration cap; the last two leave ``converged`` False. A non-converged
    result is still returned so callers can inspect the trace.
    """
    X = d.full_matrix()
    current = ols(d)
    weights = np.ones(d.n_rows)
    trace: list[float] = []
    converged = False
    iterations = 0

    for _ in range(cfg.max_iterations):
        u = current.residuals
        msr = float(np.mean(u**2))
        if msr == 0.0:
            converged = True
            trace.append(0.0)
            break
        w = 1.0 / np.maximum(u**2, cfg.weight_floor * msr)
        step = wls(d, w)
        delta = float(np.sum((step.theta - current.theta) ** 2))
        trace.append(delta)
        current, weights = step, w
        iterations += 1
        if delta < cfg.convergence_threshold:
            converged = True
            break
        if len(trace) >= 3 and trace[-1] > trace[-2] > trace[-3]:
            break

    inf = inference(d, current.theta, weights, cfg)
    names = ("rho",) + tuple(f"eta:{c}" for c in d.countries) + d.gamma_names
    return FitResult(
        theta=current.theta,
        coefficient_names=names,
        countries=d.countries,
        gamma_names=d.gamma_names,
        covariance=inf.covariance,
        std_errors=inf.std_errors,
        p_values=inf.p_values,
        stars=inf.stars,
        residuals=current.residuals,
        final_weights=weights,
        iterations=iterations,
        converged=converged,
        trace=tuple(trace),
        config=cfg,
        basis=d.basis,
    )
