"""End-to-end command tests over the shipped fixtures."""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from vcgrowth.cli import main, read_groups_csv
from vcgrowth.distribution import read_grid_csv
from vcgrowth.errors import DuplicateRow, MissingColumn
from vcgrowth.manifest import (
    build_manifest,
    config_digest,
    read_manifest,
    verify_manifest,
    write_manifest,
)
from vcgrowth.panel import export_panel, ingest_panel
from vcgrowth.preprocess import read_cpi_csv, read_raw_csv
from vcgrowth.simulate import ArProcess, generate_panel, reference_spec, spec_to_dict

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"
SMALL_YEARS = list(range(1970, 1981))

WIDE_DRIVERS = (
    ArProcess(0.40, 0.16, 0.3, 0.20, (0.01, 0.95)),
    ArProcess(0.45, 0.14, 0.3, 0.15, (0.02, 0.95)),
    ArProcess(0.50, 0.14, 0.3, 0.15, (0.05, 0.95)),
)


def prepare_argv(out: Path, **swaps) -> list[str]:
    files = {
        "raw": FIXTURES / "raw_small.csv",
        "grids": FIXTURES / "grids_small.csv",
        "cpi": FIXTURES / "cpi_small.csv",
        "groups": FIXTURES / "groups_small.csv",
    }
    files.update(swaps)
    return [
        "prepare",
        "--raw", str(files["raw"]),
        "--grids", str(files["grids"]),
        "--cpi", str(files["cpi"]),
        "--groups", str(files["groups"]),
        "--start-year", "1970",
        "--end-year", "1980",
        "--out", str(out),
    ]


def manifest_covers_directory(out: Path) -> None:
    """Every non-manifest file is listed and every digest matches."""
    manifest = read_manifest(out / "manifest.json")
    assert verify_manifest(manifest, out) == []
    on_disk = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert set(manifest.outputs) == on_disk


@pytest.fixture(scope="module")
def small_panel(tmp_path_factory) -> Path:
    spec = reference_spec(
        n=12, T=12, seed=5, coef_cov=0.005 * np.eye(3), driver_process=WIDE_DRIVERS
    )
    panel, _ = generate_panel(spec)
    path = tmp_path_factory.mktemp("panel") / "panel.csv"
    export_panel(panel, path)
    return path


class TestReaders:
    def test_grid_reader_loads_every_row(self):
        grids = read_grid_csv(FIXTURES / "grids_small.csv")
        # AAA, BBB, CCC complete; DDD misses one year; EEE ships none
        assert len(grids) == 3 * 11 + 10
        first = grids[0]
        assert first.country == "AAA"
        assert first.year == 1970
        assert first.centiles.shape == (100,)
        assert np.all(np.diff(first.centiles) >= 0)

    def test_grid_reader_requires_all_centile_columns(self, tmp_path):
        frame = pd.read_csv(FIXTURES / "grids_small.csv").drop(columns=["c100"])
        path = tmp_path / "bad.csv"
        frame.to_csv(path, index=False)
        with pytest.raises(MissingColumn, match="c100"):
            read_grid_csv(path)

    def test_raw_reader_groups_by_country_and_variable(self):
        series = read_raw_csv(FIXTURES / "raw_small.csv")
        assert len(series) == 5 * 4
        by_key = {(s.country, s.variable): s for s in series}
        assert sorted(by_key[("AAA", "gdp_pw")].values) == SMALL_YEARS
        assert sorted(by_key[("AAA", "attain")].values) == [1970, 1975, 1980]

    def test_raw_reader_rejects_duplicate_triple(self, tmp_path):
        path = tmp_path / "dup.csv"
        path.write_text(
            "country,variable,year,value\nAAA,gdp_pw,1990,1.0\nAAA,gdp_pw,1990,2.0\n"
        )
        with pytest.raises(DuplicateRow, match="AAA"):
            read_raw_csv(path)

    def test_raw_reader_requires_value_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("country,variable,year\nAAA,gdp_pw,1990\n")
        with pytest.raises(MissingColumn, match="value"):
            read_raw_csv(path)

    def test_cpi_reader_keys_by_country_year(self):
        cpi = read_cpi_csv(FIXTURES / "cpi_small.csv")
        assert len(cpi) == 5 * 11
        assert cpi[("AAA", 1970)] == 1.0

    def test_cpi_reader_rejects_duplicates(self, tmp_path):
        path = tmp_path / "dup.csv"
        path.write_text("country,year,cpi\nAAA,1990,1.0\nAAA,1990,1.1\n")
        with pytest.raises(DuplicateRow, match="1990"):
            read_cpi_csv(path)

    def test_groups_reader(self, tmp_path):
        groups = read_groups_csv(FIXTURES / "groups_small.csv")
        assert groups["AAA"] == "Asia"
        assert len(groups) == 5
        path = tmp_path / "dup.csv"
        path.write_text("country,group\nAAA,Asia\nAAA,Other\n")
        with pytest.raises(DuplicateRow, match="AAA"):
            read_groups_csv(path)


class TestPrepare:
    def test_small_fixtures_end_to_end(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(prepare_argv(out)) == 0
        captured = capsys.readouterr()
        assert "dropped DDD" in captured.out
        assert "dropped EEE" in captured.out
        assert "kept 3 countries x 11 years" in captured.out

        panel = ingest_panel(out / "panel.csv")
        assert panel.countries == ("AAA", "BBB", "CCC")
        assert panel.years == tuple(SMALL_YEARS)
        assert len(panel.data) == 33

        dropped = json.loads((out / "dropped.json").read_text())
        assert dropped["DDD"] == "income grids missing 1 of 11 years"
        assert dropped["EEE"] == "no income grids supplied"
        manifest_covers_directory(out)

    def test_panel_metrics_vary_and_respect_ranges(self, tmp_path):
        out = tmp_path / "run"
        assert main(prepare_argv(out)) == 0
        frame = pd.read_csv(out / "panel.csv")
        for driver in ("pov", "gini", "middleclass"):
            assert frame[driver].between(0.0, 1.0).all()
            assert frame[driver].nunique() > 1
        assert (frame["y_poor"] < frame["y_rich"]).all()
        assert (frame["y_poor"] < frame["y"]).all()

    def test_missing_cpi_entry_is_fatal(self, tmp_path, capsys):
        cpi = pd.read_csv(FIXTURES / "cpi_small.csv")
        trimmed = cpi[~((cpi["country"] == "AAA") & (cpi["year"] == 1975))]
        path = tmp_path / "cpi.csv"
        trimmed.to_csv(path, index=False)
        assert main(prepare_argv(tmp_path / "run", cpi=path)) == 1
        err = capsys.readouterr().err
        assert "MissingSeries" in err
        assert "1975" in err

    def test_unmapped_survivor_is_fatal(self, tmp_path, capsys):
        groups = pd.read_csv(FIXTURES / "groups_small.csv")
        path = tmp_path / "groups.csv"
        groups[groups["country"] != "CCC"].to_csv(path, index=False)
        assert main(prepare_argv(tmp_path / "run", groups=path)) == 1
        err = capsys.readouterr().err
        assert "UnmappedCountry" in err
        assert "CCC" in err

    def test_unreadable_input_is_reported_not_raised(self, tmp_path, capsys):
        code = main(prepare_argv(tmp_path / "run", raw=tmp_path / "absent.csv"))
        assert code == 1
        assert "absent.csv" in capsys.readouterr().err


class TestFit:
    def test_headline_fixture_full_run(self, tmp_path):
        out = tmp_path / "fit"
        argv = [
            "fit", "--panel", str(FIXTURES / "synthetic81.csv"),
            "--lag", "3", "--out", str(out),
        ]
        assert main(argv) == 0

        doc = json.loads((out / "fit.json").read_text())
        assert doc["n_coefficients"] == 103
        assert doc["n_rows"] == 2268
        assert doc["converged"] is True
        assert re.fullmatch(r"-?\d+\.\d{4}\**", doc["rho"]["label"])
        assert len(doc["effects"]) == 81
        assert len(doc["coefficients"]) == 21
        for entry in doc["coefficients"].values():
            assert entry["label"] == f"{entry['estimate']:.4f}{entry['stars']}"

        ident = json.loads((out / "identification.json").read_text())
        assert ident["passed"] is True

        curve_files = sorted(p.name for p in out.glob("curve_*.csv"))
        assert len(curve_files) == 9
        one = pd.read_csv(out / "curve_lnn_gini.csv")
        assert list(one.columns) == ["grid", "beta", "lower", "upper"]
        assert len(one) == 200
        assert (np.diff(one["grid"]) > 0).all()
        assert (one["lower"] <= one["beta"]).all()
        assert (one["beta"] <= one["upper"]).all()

        betas = pd.read_csv(out / "betas.csv")
        assert len(betas) == 2268 * 3
        box = pd.read_csv(out / "boxstats.csv")
        assert set(box.columns) == {
            "group", "regressor", "count", "minimum", "q1", "median", "q3", "maximum",
        }
        assert (box["minimum"] <= box["q1"]).all()
        assert (box["q3"] <= box["maximum"]).all()
        manifest_covers_directory(out)

    def test_alternative_dependents_fit_independently(self, small_panel, tmp_path):
        docs = {}
        for dep in ("y_poor", "y_rich"):
            out = tmp_path / dep
            argv = [
                "fit", "--panel", str(small_panel), "--dep", dep,
                "--lag", "1", "--out", str(out),
            ]
            assert main(argv) == 0
            docs[dep] = json.loads((out / "fit.json").read_text())
        # same panel, shifted dependent: distinct documents, both converged
        assert docs["y_poor"]["dep"] == "y_poor"
        assert docs["y_rich"]["dep"] == "y_rich"
        assert docs["y_poor"]["converged"] and docs["y_rich"]["converged"]

    def test_identification_failure_writes_report_and_exits(self, tmp_path, capsys):
        frame = pd.read_csv(FIXTURES / "synthetic81.csv")
        frame["pov"] = 0.3  # constant driver collapses its basis columns
        path = tmp_path / "degenerate.csv"
        frame.to_csv(path, index=False)
        out = tmp_path / "fit"
        argv = ["fit", "--panel", str(path), "--lag", "3", "--out", str(out)]
        assert main(argv) == 1
        assert "identification FAIL" in capsys.readouterr().err
        ident = json.loads((out / "identification.json").read_text())
        assert ident["passed"] is False
        assert ident["deficiency"] > 0
        assert not (out / "fit.json").exists()
        manifest_covers_directory(out)

    def test_lag_too_deep_exits_nonzero(self, small_panel, tmp_path, capsys):
        argv = [
            "fit", "--panel", str(small_panel), "--lag", "11",
            "--out", str(tmp_path / "fit"),
        ]
        assert main(argv) == 1
        assert "LagTooDeep" in capsys.readouterr().err

    def test_nonconvergence_exit_and_override(self, small_panel, tmp_path, capsys):
        strict = [
            "fit", "--panel", str(small_panel), "--lag", "1",
            "--threshold", "1e-30", "--max-iterations", "2",
            "--out", str(tmp_path / "strict"),
        ]
        assert main(strict) == 1
        assert "NotConvergedFit" in capsys.readouterr().err
        doc = json.loads((tmp_path / "strict" / "fit.json").read_text())
        assert doc["converged"] is False
        assert not list((tmp_path / "strict").glob("curve_*.csv"))

        relaxed = [
            "fit", "--panel", str(small_panel), "--lag", "1",
            "--threshold", "1e-30", "--max-iterations", "2",
            "--allow-nonconverged", "--out", str(tmp_path / "relaxed"),
        ]
        assert main(relaxed) == 0
        assert len(list((tmp_path / "relaxed").glob("curve_*.csv"))) == 9
        manifest_covers_directory(tmp_path / "relaxed")

    def test_thread_cap_flag_accepted(self, small_panel, tmp_path):
        argv = [
            "fit", "--panel", str(small_panel), "--lag", "1",
            "--threads", "1", "--out", str(tmp_path / "fit"),
        ]
        assert main(argv) == 0


class TestSimulate:
    def test_recovery_outputs_are_deterministic(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            argv = [
                "simulate", "--study", "recovery", "--replications", "3",
                "--seed", "9", "--out", str(out),
            ]
            assert main(argv) == 0
            outs.append(out)
        for name in ("replications.csv", "summary.csv", "result.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
        result = json.loads((outs[0] / "result.json").read_text())
        assert result["replications"] == 3
        assert result["spec"]["seed"] == 9
        assert len(result["coefficient_names"]) == 22
        frame = pd.read_csv(outs[0] / "replications.csv")
        assert len(frame) == 3
        manifest_covers_directory(outs[0])

    def test_spec_file_with_seed_override(self, tmp_path):
        payload = spec_to_dict(reference_spec(n=6, T=8, burn_in=10))
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(payload))
        out = tmp_path / "run"
        argv = [
            "simulate", "--study", "recovery", "--spec", str(spec_path),
            "--replications", "2", "--seed", "123", "--out", str(out),
        ]
        assert main(argv) == 0
        result = json.loads((out / "result.json").read_text())
        assert result["spec"]["n"] == 6
        assert result["spec"]["seed"] == 123
        manifest = read_manifest(out / "manifest.json")
        assert str(spec_path) in manifest.inputs

    def test_nickell_default_grid(self, tmp_path):
        out = tmp_path / "nick"
        argv = [
            "simulate", "--study", "nickell", "--replications", "2",
            "--out", str(out),
        ]
        assert main(argv) == 0
        frame = pd.read_csv(out / "bias.csv")
        assert len(frame) == 4
        assert list(frame["rho"]) == [0.91, 0.93, 0.95, 0.97]
        assert set(frame["status"]) <= {"PASS", "FLAG"}
        result = json.loads((out / "result.json").read_text())
        assert result["rho_grid"] == [0.91, 0.93, 0.95, 0.97]
        assert result["fit_fixed_effects"] is True
        manifest_covers_directory(out)

    def test_nickell_custom_grid_without_effects(self, tmp_path):
        out = tmp_path / "nick"
        argv = [
            "simulate", "--study", "nickell", "--replications", "2",
            "--rho-grid", "0.5,0.9", "--no-fixed-effects", "--out", str(out),
        ]
        assert main(argv) == 0
        frame = pd.read_csv(out / "bias.csv")
        assert list(frame["rho"]) == [0.5, 0.9]
        result = json.loads((out / "result.json").read_text())
        assert result["fit_fixed_effects"] is False

    def test_variance_study_outputs(self, tmp_path):
        out = tmp_path / "var"
        argv = [
            "simulate", "--study", "variance", "--replications", "40",
            "--out", str(out),
        ]
        assert main(argv) == 0
        cells = pd.read_csv(out / "variance.csv")
        assert len(cells) == 40 * 19  # n * (T - lag) of the default process
        assert (cells["target"] > 0).all()
        pairs = pd.read_csv(out / "pairs.csv")
        assert len(pairs) == 200
        result = json.loads((out / "result.json").read_text())
        assert 0.0 <= result["var_within_fraction"] <= 1.0
        assert 0.0 <= result["cov_within_fraction"] <= 1.0
        manifest_covers_directory(out)

    def test_invalid_spec_exits_with_field_message(self, tmp_path, capsys):
        payload = spec_to_dict(reference_spec())
        payload["coef_cov"] = [[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        spec_path = tmp_path / "bad.json"
        spec_path.write_text(json.dumps(payload))
        argv = [
            "simulate", "--study", "recovery", "--spec", str(spec_path),
            "--replications", "2", "--out", str(tmp_path / "run"),
        ]
        assert main(argv) == 1
        err = capsys.readouterr().err
        assert "InvalidSpec" in err
        assert "coef_cov" in err

    def test_config_file_sets_defaults_flags_override(self, tmp_path):
        cfg = tmp_path / "defaults.json"
        cfg.write_text(json.dumps({"replications": 2, "seed": 4}))
        out_a = tmp_path / "a"
        argv = [
            "--config", str(cfg), "simulate", "--study", "recovery",
            "--out", str(out_a),
        ]
        assert main(argv) == 0
        assert len(pd.read_csv(out_a / "replications.csv")) == 2
        result = json.loads((out_a / "result.json").read_text())
        assert result["spec"]["seed"] == 4

        out_b = tmp_path / "b"
        argv = [
            "--config", str(cfg), "simulate", "--study", "recovery",
            "--replications", "3", "--out", str(out_b),
        ]
        assert main(argv) == 0
        assert len(pd.read_csv(out_b / "replications.csv")) == 3

    def test_config_file_rejects_unknown_option(self, tmp_path, capsys):
        cfg = tmp_path / "defaults.json"
        cfg.write_text(json.dumps({"horizon": 10}))
        argv = [
            "--config", str(cfg), "simulate", "--study", "recovery",
            "--replications", "2", "--out", str(tmp_path / "run"),
        ]
        assert main(argv) == 1
        assert "horizon" in capsys.readouterr().err


class TestVersion:
    def test_prints_tool_versions(self, capsys):
        assert main(["version"]) == 0
        out = capsys.readouterr().out
        for name in ("vcgrowth", "python", "numpy", "scipy", "pandas"):
            assert name in out


class TestManifest:
    def test_config_digest_ignores_key_order(self):
        assert config_digest({"a": 1, "b": [2, 3]}) == config_digest({"b": [2, 3], "a": 1})
        assert config_digest({"a": 1}) != config_digest({"a": 2})

    def test_round_trip_and_verification(self, tmp_path):
        data = tmp_path / "data.txt"
        data.write_text("payload\n")
        manifest = build_manifest(
            command=("vcgrowth", "fit"),
            config={"lag": 3},
            input_paths=[],
            output_paths=[data],
            elapsed_seconds=0.5,
        )
        write_manifest(manifest, tmp_path / "manifest.json")
        loaded = read_manifest(tmp_path / "manifest.json")
        assert loaded == manifest
        assert verify_manifest(loaded, tmp_path) == []
        data.write_text("tampered\n")
        assert verify_manifest(loaded, tmp_path) == ["data.txt"]
