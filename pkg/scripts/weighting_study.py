"""Variance of the iterated-reweighting estimator versus plain OLS.

Simulates a panel whose error variance is driven by the first regressor only
(coefficient noise on lnn, none on lnsk or lnattain), so cells differ sharply
in noise level while most basis columns stay uncorrelated with that level.
On such data downweighting noisy cells genuinely helps; the script prints the
per-component Monte Carlo variance ratio (weighted / OLS) and a summary.

The weight floor matters: far below 1 the reciprocal-squared-residual weights
chase individual residual draws and the iteration can oscillate; a floor of a
few times the mean squared residual only downweights clearly noisy cells and
is both stable and effective. Try --weight-floor 0.01 to watch it misbehave.
"""

from __future__ import annotations

import argparse

import numpy as np

from vcgrowth.estimator import FitConfig
from vcgrowth.simulate import ArProcess, recovery_study, reference_spec

WIDE_DRIVERS = (
    ArProcess(0.40, 0.16, 0.3, 0.20, (0.01, 0.95)),
    ArProcess(0.45, 0.14, 0.3, 0.15, (0.02, 0.95)),
    ArProcess(0.50, 0.14, 0.3, 0.15, (0.05, 0.95)),
)
SPREAD_X = (
    ArProcess(0.0, 0.5, 0.5, 1.0),
    ArProcess(0.0, 0.6, 0.5, 0.9),
    ArProcess(0.0, 0.5, 0.5, 1.1),
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--replications", type=int, default=200)
    parser.add_argument("--seed", type=int, default=55)
    parser.add_argument("--weight-floor", type=float, default=2.5)
    parser.add_argument("--countries", type=int, default=40)
    args = parser.parse_args()

    spec = reference_spec(
        n=args.countries, T=20, lag=1, seed=args.seed,
        coef_cov=np.diag([0.5, 0.0, 0.0]), sigma2=0.02,
        driver_process=WIDE_DRIVERS, x_process=SPREAD_X,
    )
    result = recovery_study(
        spec, args.replications, FitConfig(weight_floor=args.weight_floor)
    )

    var_weighted = np.nanvar(result.estimates[:, 1:], axis=0, ddof=1)
    var_ols = np.nanvar(result.ols_estimates[:, 1:], axis=0, ddof=1)
    ratios = var_weighted / var_ols
    names = result.coefficient_names[1:]

    print(f"{'component':<28}{'weighted var':>14}{'ols var':>14}{'ratio':>8}")
    for name, vw, vo, r in zip(names, var_weighted, var_ols, ratios):
        print(f"{name:<28}{vw:>14.5f}{vo:>14.5f}{r:>8.3f}")
    wins = int(np.sum(var_weighted <= var_ols))
    print(
        f"\nweighted <= ols on {wins}/{len(ratios)} components; "
        f"median ratio {np.median(ratios):.3f}; "
        f"{result.convergence_failures} of {args.replications} replications "
        f"did not converge"
    )


if __name__ == "__main__":
    main()
