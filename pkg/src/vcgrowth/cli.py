"""Command-line pipeline driver: prepare, fit, simulate, version.

Each data-producing command writes its outputs plus a run manifest into
--out; exit code 0 means no pipeline error occurred. A JSON config file
can set flag defaults, with explicit flags overriding.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .curves import eval_curve, group_boxstats, observation_betas
from .design import BasisSpec, build_stacked, check_identification
from .distribution import (
    gini,
    middle_class_share,
    poverty_headcount,
    quintile_log_mean,
    read_grid_csv,
)
from .errors import (
    DuplicateRow,
    InvalidSpec,
    InvalidValue,
    MissingColumn,
    MissingSeries,
    NotConvergedFit,
    PipelineError,
    UnmappedCountry,
)
from .estimator import FitConfig, fit_iterated
from .manifest import build_manifest, tool_versions, write_manifest
from .panel import export_panel, from_frame, ingest_panel, lag_align
from .preprocess import (
    REQUIRED_VARIABLES,
    VAR_ATTAIN,
    VAR_GDP,
    VAR_INV_SHARE,
    VAR_POP_GROWTH,
    HpConfig,
    build_variables,
    hp_trend,
    read_cpi_csv,
    read_raw_csv,
    spline_impute,
)
from .simulate import (
    DEFAULT_RHO_GRID,
    fixed_coefficient_spec,
    load_spec,
    nickell_bias_study,
    recovery_study,
    reference_spec,
    spec_to_dict,
    variance_structure_check,
)

#: replication defaults per simulation study
STUDY_REPLICATIONS = {"recovery": 200, "variance": 1000, "nickell": 50}

# keeps thread-pool limits alive for the process lifetime
_THREAD_LIMITER = None


def _limit_threads(count: int) -> None:
    global _THREAD_LIMITER
    import threadpoolctl

    _THREAD_LIMITER = threadpoolctl.threadpool_limits(limits=count)


def read_groups_csv(path) -> dict[str, str]:
    """Load the country-to-group map from columns country, group."""
    frame = pd.read_csv(path)
    missing = [c for c in ("country", "group") if c not in frame.columns]
    if missing:
        raise MissingColumn(f"{path} lacks columns {missing}")
    if frame["country"].duplicated().any():
        dup = frame["country"][frame["country"].duplicated()].iloc[0]
        raise DuplicateRow(f"{path}: repeated group row for {dup}")
    return {str(c): str(g) for c, g in zip(frame["country"], frame["group"])}


def _coefficient_entry(estimate: float, std_error: float, p_value: float, stars: str) -> dict:
    return {
        "estimate": float(estimate),
        "std_error": float(std_error),
        "p_value": float(p_value),
        "stars": stars,
        "label": f"{estimate:.4f}{stars}",
    }


def _write_json(payload: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True, indent=2)
        handle.write("\n")


def _finish(args, config: dict, inputs: list, outputs: list[Path], started: float) -> None:
    out = Path(args.out)
    manifest = build_manifest(
        command=args.command_line,
        config=config,
        input_paths=[str(p) for p in inputs],
        output_paths=[str(p) for p in outputs],
        elapsed_seconds=time.perf_counter() - started,
    )
    write_manifest(manifest, out / "manifest.json")


def _screen_country(country, have, country_grids, years) -> str | None:
    """Reason this candidate cannot enter the panel, or None if usable."""
    grid_gaps = [y for y in years if y not in country_grids]
    if grid_gaps:
        return f"income grids missing {len(grid_gaps)} of {len(years)} years"
    absent = [v for v in REQUIRED_VARIABLES if v not in have]
    if absent:
        return f"raw variables missing: {absent}"
    for var in (VAR_GDP, VAR_POP_GROWTH, VAR_INV_SHARE):
        gaps = [y for y in years if y not in have[var].values]
        if gaps:
            return f"{var} missing {len(gaps)} of {len(years)} years"
    if len(have[VAR_ATTAIN].values) < 3:
        return f"{VAR_ATTAIN} has fewer than 3 knots"
    return None


def run_prepare(args) -> int:
    started = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.end_year - args.start_year + 1 < 3:
        raise InvalidValue(
            f"window {args.start_year}..{args.end_year} spans fewer than 3 years"
        )
    years = list(range(args.start_year, args.end_year + 1))

    raw = read_raw_csv(args.raw)
    grids = read_grid_csv(args.grids)
    cpi = read_cpi_csv(args.cpi)
    groups = read_groups_csv(args.groups)

    raw_by: dict[str, dict] = {}
    for series in raw:
        raw_by.setdefault(series.country, {})[series.variable] = series
    grid_by: dict[str, dict] = {}
    for grid in grids:
        grid_by.setdefault(grid.country, {})[grid.year] = grid

    dropped: dict[str, str] = {}
    for country in set(raw_by) - set(grid_by):
        dropped[country] = "no income grids supplied"
    for country in set(grid_by) - set(raw_by):
        dropped[country] = "no raw series supplied"

    survivors = []
    for country in sorted(set(raw_by) & set(grid_by)):
        reason = _screen_country(country, raw_by[country], grid_by[country], years)
        if reason:
            dropped[country] = reason
        else:
            survivors.append(country)
    if not survivors:
        raise MissingSeries(
            f"no country passed screening; {len(dropped)} dropped"
        )

    unmapped = [c for c in survivors if c not in groups]
    if unmapped:
        raise UnmappedCountry(f"no group mapping for {unmapped}")
    missing_cpi = [
        (c, y) for c in survivors for y in years if (c, y) not in cpi
    ]
    if missing_cpi:
        raise MissingSeries(f"CPI entries missing for {missing_cpi[:5]}")

    series_in = []
    for country in survivors:
        for var in REQUIRED_VARIABLES:
            s = raw_by[country][var]
            series_in.append(spline_impute(s, years) if var == VAR_ATTAIN else s)

    hp = HpConfig(smoothing=args.hp_lambda)
    frame = build_variables(
        series_in, cpi, years, hp=hp, filter_on_logs=not args.filter_levels
    )

    metrics = {name: [] for name in ("pov", "gini", "middleclass", "y_poor", "y_rich")}
    for country in survivors:
        bottom = np.empty(len(years))
        top = np.empty(len(years))
        for j, year in enumerate(years):
            grid = grid_by[country][year]
            factor = cpi[(country, year)]
            metrics["pov"].append(
                poverty_headcount(grid, args.poverty_line, args.poverty_cpi_factor)
            )
            metrics["gini"].append(gini(grid))
            metrics["middleclass"].append(middle_class_share(grid))
            bottom[j] = quintile_log_mean(grid, "bottom", factor)
            top[j] = quintile_log_mean(grid, "top", factor)
        metrics["y_poor"].extend(hp_trend(bottom, hp))
        metrics["y_rich"].extend(hp_trend(top, hp))

    # build_variables outputs sorted-country, year-minor rows, matching the
    # survivor iteration above, so the metric columns align positionally
    for name, values in metrics.items():
        frame[name] = values
    frame["group"] = frame["country"].map(groups)

    panel = from_frame(frame)
    panel_path = out / "panel.csv"
    export_panel(panel, panel_path)
    dropped_path = out / "dropped.json"
    _write_json(dropped, dropped_path)

    for country in sorted(dropped):
        print(f"dropped {country}: {dropped[country]}")
    print(f"kept {panel.n} countries x {panel.T} years -> {panel_path}")

    config = {
        "start_year": args.start_year,
        "end_year": args.end_year,
        "hp_lambda": args.hp_lambda,
        "poverty_line": args.poverty_line,
        "poverty_cpi_factor": args.poverty_cpi_factor,
        "filter_on_logs": not args.filter_levels,
    }
    _finish(
        args,
        config,
        [args.raw, args.grids, args.cpi, args.groups],
        [panel_path, dropped_path],
        started,
    )
    return 0


def run_fit(args) -> int:
    started = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    panel = ingest_panel(args.panel)
    aligned = lag_align(panel, args.dep, args.lag)
    basis = BasisSpec(degree=args.degree)
    design = build_stacked(aligned, basis)

    report = check_identification(design)
    ident_path = out / "identification.json"
    _write_json(dataclasses.asdict(report) | {"message": report.message()}, ident_path)

    config = {
        "dep": args.dep,
        "lag": args.lag,
        "degree": args.degree,
        "level": args.level,
        "max_iterations": args.max_iterations,
        "convergence_threshold": args.threshold,
        "weight_floor": args.weight_floor,
        "covariance": "naive" if args.naive_covariance else "sandwich",
        "allow_nonconverged": args.allow_nonconverged,
    }
    if not report.passed:
        print(report.message(), file=sys.stderr)
        _finish(args, config, [args.panel], [ident_path], started)
        return 1

    cfg = FitConfig(
        convergence_threshold=args.threshold,
        max_iterations=args.max_iterations,
        weight_floor=args.weight_floor,
        covariance=config["covariance"],
    )
    fit = fit_iterated(design, cfg)

    n = fit.n_effects
    document = {
        "dep": args.dep,
        "lag": args.lag,
        "n_countries": n,
        "n_rows": design.n_rows,
        "n_coefficients": len(fit.theta),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "trace": list(fit.trace),
        "band_level": args.level,
        "config": config,
        "identification": dataclasses.asdict(report),
        "rho": _coefficient_entry(
            fit.theta[0], fit.std_errors[0], fit.p_values[0], fit.stars[0]
        ),
        "effects": {
            country: _coefficient_entry(
                fit.theta[1 + i],
                fit.std_errors[1 + i],
                fit.p_values[1 + i],
                fit.stars[1 + i],
            )
            for i, country in enumerate(fit.countries)
        },
        "coefficients": {
            name: _coefficient_entry(
                fit.theta[1 + n + j],
                fit.std_errors[1 + n + j],
                fit.p_values[1 + n + j],
                fit.stars[1 + n + j],
            )
            for j, name in enumerate(fit.gamma_names)
        },
    }
    fit_path = out / "fit.json"
    _write_json(document, fit_path)
    outputs = [ident_path, fit_path]

    if not fit.converged and not args.allow_nonconverged:
        print(
            f"error: NotConvergedFit: no convergence in {fit.iterations} iterations "
            f"(final change {fit.trace[-1]:.3g}); rerun with --allow-nonconverged "
            "to write curves anyway",
            file=sys.stderr,
        )
        _finish(args, config, [args.panel], outputs, started)
        return 1

    for k, regressor in enumerate(aligned.regressor_names, start=1):
        for driver in basis.drivers:
            curve = eval_curve(
                fit,
                k,
                driver,
                aligned,
                level=args.level,
                allow_nonconverged=args.allow_nonconverged,
            )
            path = out / f"curve_{regressor}_{driver}.csv"
            pd.DataFrame(
                {
                    "grid": curve.grid,
                    "beta": curve.beta,
                    "lower": curve.lower,
                    "upper": curve.upper,
                }
            ).to_csv(path, index=False)
            outputs.append(path)

    betas = observation_betas(fit, aligned)
    betas_path = out / "betas.csv"
    betas.to_csv(betas_path, index=False)
    outputs.append(betas_path)

    stats = group_boxstats(betas, aligned.group_of)
    box_path = out / "boxstats.csv"
    pd.DataFrame([dataclasses.asdict(s) for s in stats]).to_csv(box_path, index=False)
    outputs.append(box_path)

    status = "converged" if fit.converged else "NOT converged"
    print(
        f"fit {args.dep} lag={args.lag}: {status} after {fit.iterations} iterations, "
        f"rho = {document['rho']['label']}"
    )
    print(f"wrote {len(outputs)} files -> {out}")
    _finish(args, config, [args.panel], outputs, started)
    return 0


def _parse_rho_grid(text: str) -> tuple[float, ...]:
    try:
        grid = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise InvalidSpec(f"rho grid {text!r} is not a comma-separated float list") from exc
    if not grid:
        raise InvalidSpec("rho grid is empty")
    return grid


def run_simulate(args) -> int:
    started = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.spec is not None:
        spec = load_spec(args.spec)
    elif args.study == "nickell":
        spec = fixed_coefficient_spec()
    else:
        spec = reference_spec()
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    replications = (
        args.replications
        if args.replications is not None
        else STUDY_REPLICATIONS[args.study]
    )

    config = {
        "study": args.study,
        "replications": replications,
        "spec": spec_to_dict(spec),
    }
    inputs = [args.spec] if args.spec is not None else []
    outputs: list[Path] = []

    if args.study == "recovery":
        result = recovery_study(spec, replications)
        rep_path = out / "replications.csv"
        result.replication_frame().to_csv(rep_path, index=False)
        summary_path = out / "summary.csv"
        result.summary.to_csv(summary_path, index=False)
        payload = {
            "study": "recovery",
            "replications": replications,
            "coefficient_names": list(result.coefficient_names),
            "truth": [float(v) for v in result.truth],
            "convergence_failures": result.convergence_failures,
            "errors": [{"rep": rep, "message": msg} for rep, msg in result.errors],
        }
        failures = len(result.errors)
        print(
            f"recovery: {replications} replications, {failures} failed, "
            f"{result.convergence_failures} unconverged"
        )
        outputs += [rep_path, summary_path]
    elif args.study == "variance":
        report = variance_structure_check(spec, replications)
        cells_path = out / "variance.csv"
        pd.DataFrame(
            {
                "country": [c for c, _ in report.cell_index],
                "year": [y for _, y in report.cell_index],
                "target": report.target,
                "empirical": report.empirical,
                "mc_se": report.mc_se,
                "within3": np.abs(report.empirical - report.target) <= 3.0 * report.mc_se,
            }
        ).to_csv(cells_path, index=False)
        pairs_path = out / "pairs.csv"
        pd.DataFrame(
            {
                "row_i": report.pair_rows[:, 0],
                "row_j": report.pair_rows[:, 1],
                "cov": report.pair_cov,
                "se": report.pair_se,
                "within3": np.abs(report.pair_cov) <= 3.0 * report.pair_se,
            }
        ).to_csv(pairs_path, index=False)
        payload = {
            "study": "variance",
            "replications": replications,
            "n_cells": int(report.target.shape[0]),
            "n_pairs": int(report.pair_rows.shape[0]),
            "var_within_fraction": report.var_within_fraction,
            "cov_within_fraction": report.cov_within_fraction,
        }
        print(
            f"variance: {payload['var_within_fraction']:.3f} of cells and "
            f"{payload['cov_within_fraction']:.3f} of pairs within 3 MC standard errors"
        )
        outputs.append(cells_path)
        outputs.append(pairs_path)
    else:
        grid = _parse_rho_grid(args.rho_grid) if args.rho_grid else DEFAULT_RHO_GRID
        config["rho_grid"] = list(grid)
        config["fit_fixed_effects"] = not args.no_fixed_effects
        report = nickell_bias_study(
            grid, spec, replications, fit_fixed_effects=not args.no_fixed_effects
        )
        bias_path = out / "bias.csv"
        report.frame().to_csv(bias_path, index=False)
        payload = {
            "study": "nickell",
            "replications": replications,
            "rho_grid": list(grid),
            "t_effective": report.rows[0].t_effective,
            "fit_fixed_effects": not args.no_fixed_effects,
            "rows": [
                {
                    "rho": row.rho,
                    "bias": row.bias,
                    "mc_se": row.mc_se,
                    "status": row.status,
                    "justification": row.justification,
                }
                for row in report.rows
            ],
        }
        for row in report.rows:
            note = f" ({row.justification})" if row.justification else ""
            print(f"nickell rho={row.rho}: bias {row.bias:+.2e}, {row.status}{note}")
        outputs.append(bias_path)

    result_path = out / "result.json"
    _write_json(payload | {"spec": spec_to_dict(spec)}, result_path)
    outputs.append(result_path)
    _finish(args, config, inputs, outputs, started)
    return 0


def run_version(args) -> int:
    for name, value in tool_versions().items():
        print(f"{name} {value}")
    return 0


def _add_shared(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--seed", type=int, default=None,
        help="random seed override (used by simulation studies only)",
    )
    parser.add_argument(
        "--threads", type=int, default=None,
        help="cap on linear-algebra thread pools",
    )


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="vcgrowth",
        description="varying-coefficient dynamic panel growth pipeline",
    )
    parser.add_argument(
        "--config", default=None,
        help="JSON file of flag defaults; explicit flags override",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    prepare = sub.add_parser(
        "prepare", help="screen raw inputs and build the model-variable panel"
    )
    _add_shared(prepare)
    prepare.add_argument("--raw", required=True, help="long CSV: country,variable,year,value")
    prepare.add_argument("--grids", required=True, help="CSV: country,year,pop,c001..c100")
    prepare.add_argument("--cpi", required=True, help="CSV: country,year,cpi")
    prepare.add_argument("--groups", required=True, help="CSV: country,group")
    prepare.add_argument("--start-year", type=int, default=1970)
    prepare.add_argument("--end-year", type=int, default=2000)
    prepare.add_argument("--hp-lambda", type=float, default=6.25, help="trend-filter penalty")
    prepare.add_argument(
        "--poverty-line", type=float, default=1.0, help="poverty line per person per day"
    )
    prepare.add_argument(
        "--poverty-cpi-factor", type=float, default=1.0,
        help="price deflator applied to the poverty threshold",
    )
    prepare.add_argument(
        "--filter-levels", action="store_true",
        help="trend-filter level series before logging instead of after",
    )
    prepare.set_defaults(handler=run_prepare)

    fit = sub.add_parser("fit", help="estimate the model on a prepared panel")
    _add_shared(fit)
    fit.add_argument("--panel", required=True, help="prepared panel CSV")
    fit.add_argument("--dep", default="y", choices=("y", "y_poor", "y_rich"))
    fit.add_argument("--lag", type=int, default=3, help="alignment lag in years")
    fit.add_argument("--degree", type=int, default=2, help="polynomial degree per driver")
    fit.add_argument("--level", type=float, default=0.95, help="confidence band level")
    fit.add_argument("--max-iterations", type=int, default=100)
    fit.add_argument(
        "--threshold", type=float, default=0.005,
        help="summed squared coefficient change declaring convergence",
    )
    fit.add_argument("--weight-floor", type=float, default=1e-6)
    fit.add_argument(
        "--naive-covariance", action="store_true",
        help="scaled inverse cross-product instead of the sandwich",
    )
    fit.add_argument(
        "--allow-nonconverged", action="store_true",
        help="write curves and exit 0 even without convergence",
    )
    fit.set_defaults(handler=run_fit)

    simulate = sub.add_parser("simulate", help="run a Monte Carlo study")
    _add_shared(simulate)
    simulate.add_argument("--study", required=True, choices=("recovery", "variance", "nickell"))
    simulate.add_argument("--spec", default=None, help="JSON data-generating-process spec")
    simulate.add_argument(
        "--replications", type=int, default=None,
        help="replication count (default per study: recovery 200, variance 1000, nickell 50)",
    )
    simulate.add_argument(
        "--rho-grid", default=None,
        help="comma-separated autoregressive values for the nickell study",
    )
    simulate.add_argument(
        "--no-fixed-effects", action="store_true",
        help="nickell study: fit without country effects",
    )
    simulate.set_defaults(handler=run_simulate)

    version = sub.add_parser("version", help="print tool versions")
    version.set_defaults(handler=run_version)

    return parser, {"prepare": prepare, "fit": fit, "simulate": simulate, "version": version}


def _apply_config_defaults(path, parsers: dict[str, argparse.ArgumentParser]) -> None:
    with open(path, encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise InvalidSpec("config file must hold a JSON object of flag defaults")
    known: set[str] = set()
    for sub in parsers.values():
        dests = {a.dest for a in sub._actions}
        known |= dests
        sub.set_defaults(**{k: v for k, v in payload.items() if k in dests})
    unknown = sorted(set(payload) - known)
    if unknown:
        raise InvalidSpec(f"config file sets unknown options {unknown}")


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, parsers = build_parser()
    try:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config", default=None)
        known, _ = pre.parse_known_args(argv)
        if known.config is not None:
            _apply_config_defaults(known.config, parsers)
        args = parser.parse_args(argv)
        args.command_line = ["vcgrowth", *argv]
        if getattr(args, "threads", None) is not None:
            _limit_threads(args.threads)
        return args.handler(args)
    except PipelineError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
