"""Regenerate the committed fixtures under fixtures/.

synthetic81.csv is an 81-country, 31-year panel drawn from a known data
generating process at the headline estimation size: aligning at lag 3
leaves 2268 rows and 103 coefficients. Driver paths are wide and weakly
persistent so the quadratic basis stays well conditioned, and the default
iterated fit converges on it in a handful of iterations.

raw_small.csv, grids_small.csv, cpi_small.csv and groups_small.csv form a
five-country screening exercise for the prepare command: AAA, BBB and CCC
survive, DDD lacks one grid year, and EEE ships raw series but no grids.
The grid rows are lognormal quantiles, so every distribution metric lands
strictly inside its legal range.

The script is self-checking: it refuses to write a synthetic panel whose
default fit does not converge, or small fixtures that prepare cannot turn
into a three-country panel.
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from vcgrowth.cli import main as cli_main
from vcgrowth.design import BasisSpec, build_stacked, check_identification
from vcgrowth.estimator import fit_iterated
from vcgrowth.panel import export_panel, ingest_panel, lag_align
from vcgrowth.simulate import ArProcess, generate_panel, reference_spec

SMALL_YEARS = tuple(range(1970, 1981))

#: per-country lognormal parameters: base income, income growth, spread
SMALL_COUNTRIES = {
    "AAA": (700.0, 0.020, 1.00),
    "BBB": (2500.0, 0.015, 0.80),
    "CCC": (1200.0, 0.025, 1.15),
    "DDD": (900.0, 0.020, 0.95),
    "EEE": (1500.0, 0.010, 0.90),
}
SMALL_GROUPS = {
    "AAA": "Asia",
    "BBB": "High income",
    "CCC": "Other",
    "DDD": "Asia",
    "EEE": "Latin America",
}


def synthetic_spec():
    """Headline-size data generating process behind synthetic81.csv."""
    return reference_spec(
        n=81,
        T=31,
        lag=3,
        seed=2024,
        coef_cov=0.005 * np.eye(3),
        driver_process=(
            ArProcess(0.40, 0.16, 0.3, 0.20, (0.01, 0.95)),
            ArProcess(0.45, 0.14, 0.3, 0.15, (0.02, 0.95)),
            ArProcess(0.50, 0.14, 0.3, 0.15, (0.05, 0.95)),
        ),
    )


def write_synthetic_panel(out_dir: Path) -> Path:
    spec = synthetic_spec()
    panel, _ = generate_panel(spec)
    aligned = lag_align(panel, "y", spec.lag)
    design = build_stacked(aligned, BasisSpec())
    report = check_identification(design)
    if not report.passed:
        raise SystemExit(f"fixture DGP failed identification: {report.message()}")
    fit = fit_iterated(design)
    if not fit.converged:
        raise SystemExit("fixture DGP did not converge under the default fit config")
    path = out_dir / "synthetic81.csv"
    export_panel(panel, path)
    print(
        f"{path}: {panel.n} countries x {panel.T} years, "
        f"fit converged in {fit.iterations} iterations"
    )
    return path


def _centiles(base: float, growth: float, spread: float, t: int) -> np.ndarray:
    mu = np.log(base) + growth * t
    positions = (np.arange(1, 101) - 0.5) / 100.0
    return np.exp(mu + spread * stats.norm.ppf(positions))


def write_small_inputs(out_dir: Path) -> dict[str, Path]:
    rng = np.random.default_rng(7)
    raw_rows = []
    grid_rows = []
    cpi_rows = []
    for country, (base, growth, spread) in SMALL_COUNTRIES.items():
        gdp0 = 8.0 * base
        wiggle = rng.normal(0.0, 0.01, len(SMALL_YEARS))
        for t, year in enumerate(SMALL_YEARS):
            raw_rows.append((country, "gdp_pw", year, gdp0 * np.exp(0.02 * t + wiggle[t])))
            raw_rows.append((country, "pop_growth", year, 0.015 + 0.004 * np.sin(0.7 * t)))
            raw_rows.append((country, "inv_share", year, 0.20 + 0.03 * np.cos(0.5 * t)))
            cpi_rows.append((country, year, round(1.0 + 0.01 * t, 4)))
            if country != "EEE" and not (country == "DDD" and year == 1975):
                row = [country, year, round(10.0 + 0.1 * t, 2)]
                row.extend(np.round(_centiles(base, growth, spread, t), 6))
                grid_rows.append(row)
        for year in (1970, 1975, 1980):
            raw_rows.append((country, "attain", year, 3.0 + 0.2 * (year - 1970) / 5.0))

    paths = {}
    raw = pd.DataFrame(raw_rows, columns=["country", "variable", "year", "value"])
    paths["raw"] = out_dir / "raw_small.csv"
    raw.to_csv(paths["raw"], index=False)

    centile_names = [f"c{i:03d}" for i in range(1, 101)]
    grids = pd.DataFrame(grid_rows, columns=["country", "year", "pop"] + centile_names)
    paths["grids"] = out_dir / "grids_small.csv"
    grids.to_csv(paths["grids"], index=False)

    cpi = pd.DataFrame(cpi_rows, columns=["country", "year", "cpi"])
    paths["cpi"] = out_dir / "cpi_small.csv"
    cpi.to_csv(paths["cpi"], index=False)

    groups = pd.DataFrame(sorted(SMALL_GROUPS.items()), columns=["country", "group"])
    paths["groups"] = out_dir / "groups_small.csv"
    groups.to_csv(paths["groups"], index=False)

    with tempfile.TemporaryDirectory() as scratch:
        code = cli_main(
            [
                "prepare",
                "--raw", str(paths["raw"]),
                "--grids", str(paths["grids"]),
                "--cpi", str(paths["cpi"]),
                "--groups", str(paths["groups"]),
                "--start-year", "1970",
                "--end-year", "1980",
                "--out", scratch,
            ]
        )
        if code != 0:
            raise SystemExit("prepare rejected the small fixtures")
        panel = ingest_panel(Path(scratch) / "panel.csv")
        if panel.countries != ("AAA", "BBB", "CCC"):
            raise SystemExit(f"unexpected survivors {panel.countries}")
    print(f"{paths['raw'].parent}: small prepare inputs ok (AAA, BBB, CCC survive)")
    return paths


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--out-dir",
        default=Path(__file__).resolve().parents[1] / "fixtures",
        type=Path,
    )
    args = parser.parse_args(argv)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_synthetic_panel(args.out_dir)
    write_small_inputs(args.out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
