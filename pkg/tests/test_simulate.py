"""Synthetic panel generation and Monte Carlo studies.

The generator's recursion is verified against the design machinery on a
noiseless configuration (an exact identity, not a statistical check), and
the variance report's targets are recomputed from first principles.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np
import pytest

from vcgrowth.design import BasisSpec, build_stacked
from vcgrowth.errors import InvalidSpec
from vcgrowth.estimator import FitConfig, fit_iterated
from vcgrowth.panel import PANEL_COLUMNS, from_frame, lag_align
from vcgrowth.simulate import (
    DEFAULT_RHO_GRID,
    ArProcess,
    SimSpec,
    fixed_coefficient_spec,
    generate_panel,
    load_spec,
    nickell_bias_study,
    recovery_study,
    reference_spec,
    spec_from_dict,
    variance_structure_check,
)


def small_spec(**overrides):
    """Reference scenario shrunk for fast tests."""
    base = reference_spec(n=10, T=12, lag=1, burn_in=20, seed=3)
    return dataclasses.replace(base, **overrides) if overrides else base


def noiseless_spec(**overrides):
    base = small_spec(
        coef_cov=np.zeros((3, 3)), sigma2=0.0, eta_scale=0.4, **overrides
    )
    return base


class TestSpecValidation:
    def test_reference_spec_shapes(self):
        spec = reference_spec()
        assert len(spec.gamma) == 3 * spec.basis.size == 21
        assert spec.coef_cov.shape == (3, 3)
        assert len(spec.driver_process) == 3
        assert len(spec.x_process) == 3

    def test_rho_outside_unit_interval_rejected(self):
        with pytest.raises(InvalidSpec, match="rho"):
            small_spec(rho=1.0)

    def test_gamma_length_checked_against_basis(self):
        with pytest.raises(InvalidSpec, match="gamma"):
            small_spec(gamma=np.zeros(20))

    def test_asymmetric_coef_cov_rejected(self):
        bad = np.array([[1.0, 0.2, 0.0], [0.1, 1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(InvalidSpec, match="coef_cov"):
            small_spec(coef_cov=bad)

    def test_non_psd_coef_cov_rejected(self):
        bad = np.array([[1.0, 0.0, 0.0], [0.0, -0.5, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(InvalidSpec, match="coef_cov"):
            small_spec(coef_cov=bad)

    def test_negative_variances_rejected(self):
        with pytest.raises(InvalidSpec, match="sigma2"):
            small_spec(sigma2=-1.0)
        with pytest.raises(InvalidSpec, match="eta_scale"):
            small_spec(eta_scale=-0.1)

    def test_lag_and_length_bounds(self):
        with pytest.raises(InvalidSpec, match="lag"):
            small_spec(lag=0)
        with pytest.raises(InvalidSpec, match="T"):
            small_spec(T=3, lag=2)

    def test_explosive_persistence_rejected(self):
        bad = ArProcess(mean=0.3, shock_sd=0.01, persistence=1.0)
        with pytest.raises(InvalidSpec, match="persistence"):
            small_spec(driver_process=(bad,) * 3)

    def test_reversed_clip_rejected(self):
        bad = ArProcess(mean=0.3, shock_sd=0.01, clip=(0.9, 0.1))
        with pytest.raises(InvalidSpec, match="clip"):
            small_spec(driver_process=(bad,) * 3)


class TestSpecFromDict:
    def test_overrides_apply_on_reference_defaults(self):
        spec = spec_from_dict({"n": 7, "rho": 0.91, "seed": 42})
        assert (spec.n, spec.rho, spec.seed) == (7, 0.91, 42)
        assert spec.T == reference_spec().T

    def test_unknown_key_rejected(self):
        with pytest.raises(InvalidSpec, match="horizon"):
            spec_from_dict({"horizon": 10})

    def test_unknown_process_key_rejected(self):
        procs = [{"mean": 0.3, "shock_sd": 0.01, "drift": 1.0}] * 3
        with pytest.raises(InvalidSpec, match="drift"):
            spec_from_dict({"driver_process": procs})

    def test_process_list_length_checked(self):
        with pytest.raises(InvalidSpec, match="driver_process"):
            spec_from_dict({"driver_process": [{"mean": 0.3, "shock_sd": 0.01}]})

    def test_non_psd_matrix_named_in_error(self):
        bad = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]]
        with pytest.raises(InvalidSpec, match="coef_cov"):
            spec_from_dict({"coef_cov": bad})

    def test_load_spec_round_trip(self, tmp_path):
        payload = {"n": 6, "T": 10, "lag": 2, "seed": 9, "sigma2": 0.02}
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(payload))
        assert load_spec(path) == spec_from_dict(payload)

    def test_degree_zero_basis_with_matching_gamma(self):
        spec = spec_from_dict(
            {"basis": {"degree": 0}, "gamma": [-1.2, 0.8, 0.4]}
        )
        assert spec.basis.size == 1
        assert len(spec.gamma) == 3


class TestGeneratePanel:
    def test_fixed_seed_is_bitwise_reproducible(self):
        a, truth_a = generate_panel(small_spec())
        b, truth_b = generate_panel(small_spec())
        assert a.data.equals(b.data)
        assert np.array_equal(truth_a.eta, truth_b.eta)
        assert np.array_equal(truth_a.betas, truth_b.betas)

    def test_panel_matches_store_format(self):
        spec = small_spec()
        panel, _ = generate_panel(spec)
        assert tuple(panel.data.columns) == PANEL_COLUMNS
        assert len(panel.data) == spec.n * spec.T
        assert panel.years == tuple(range(1970, 1970 + spec.T))
        assert from_frame(panel.data).data.equals(panel.data)

    def test_groups_cycle_through_fixed_labels(self):
        panel, _ = generate_panel(small_spec())
        labels = [panel.group_of[c] for c in panel.countries]
        assert len(set(labels)) == 5
        assert labels[0] == labels[5]

    def test_noiseless_recursion_identity(self):
        spec = noiseless_spec()
        panel, truth = generate_panel(spec)
        aligned = lag_align(panel, "y", spec.lag)
        d = build_stacked(aligned, spec.basis)
        reconstructed = spec.rho * aligned.dep_lag + d.C @ truth.eta + d.W @ spec.gamma
        assert np.abs(aligned.dep - reconstructed).max() < 1e-10

    def test_noiseless_refit_recovers_truth(self):
        spec = noiseless_spec()
        panel, truth = generate_panel(spec)
        aligned = lag_align(panel, "y", spec.lag)
        fit = fit_iterated(build_stacked(aligned, spec.basis))
        assert fit.converged and fit.iterations == 1
        assert abs(fit.rho - spec.rho) < 1e-8
        assert np.abs(fit.eta - truth.eta).max() < 1e-8
        assert np.abs(fit.gamma - spec.gamma).max() < 1e-8

    def test_truth_betas_equal_basis_polynomial_when_cov_zero(self):
        spec = noiseless_spec()
        panel, truth = generate_panel(spec)
        drivers = np.stack(
            [panel.array("pov"), panel.array("gini"), panel.array("middleclass")],
            axis=-1,
        )
        from vcgrowth.design import basis_matrix

        zt = basis_matrix(drivers.reshape(-1, 3), spec.basis)
        for k in range(3):
            expected = (zt @ spec.gamma[k * 7 : (k + 1) * 7]).reshape(spec.n, spec.T)
            assert np.abs(truth.betas[:, :, k] - expected).max() < 1e-12

    def test_drivers_respect_clip_bounds(self):
        spec = small_spec()
        panel, _ = generate_panel(spec)
        for name, proc in zip(("pov", "gini", "middleclass"), spec.driver_process):
            lo, hi = proc.clip
            values = panel.data[name].to_numpy()
            assert values.min() >= lo and values.max() <= hi

    def test_degenerate_processes_are_constant(self):
        quiet = tuple(
            dataclasses.replace(p, shock_sd=0.0, mean_sd=0.0)
            for p in reference_spec().driver_process
        )
        spec = small_spec(driver_process=quiet)
        panel, _ = generate_panel(spec)
        for name, proc in zip(("pov", "gini", "middleclass"), quiet):
            assert np.abs(panel.data[name].to_numpy() - proc.mean).max() == 0.0

    def test_mean_dispersion_varies_across_countries_only(self):
        spread = tuple(
            dataclasses.replace(p, shock_sd=0.0, mean_sd=0.05)
            for p in reference_spec().driver_process
        )
        spec = small_spec(driver_process=spread)
        panel, _ = generate_panel(spec)
        pov = panel.array("pov")
        assert np.ptp(pov, axis=1).max() == 0.0
        assert np.ptp(pov[:, 0]) > 0.0

    def test_fixed_offsets_between_dependent_variables(self):
        panel, _ = generate_panel(small_spec())
        y = panel.data["y"].to_numpy()
        assert np.allclose(panel.data["y_poor"], y - 0.25)
        assert np.allclose(panel.data["y_rich"], y + 0.25)


class TestRecoveryStudy:
    def test_deterministic_across_runs(self):
        spec = small_spec(seed=5)
        r1 = recovery_study(spec, 3)
        r2 = recovery_study(spec, 3)
        assert np.array_equal(r1.estimates, r2.estimates)
        assert r1.summary.equals(r2.summary)

    def test_rep_seed_independent_of_execution_order(self):
        spec = small_spec(seed=6)
        result = recovery_study(spec, 3)
        rng = np.random.default_rng(np.random.SeedSequence(6, spawn_key=(2,)))
        panel, _ = generate_panel(spec, rng=rng)
        aligned = lag_align(panel, "y", spec.lag)
        fit = fit_iterated(build_stacked(aligned, spec.basis))
        expected = np.concatenate([[fit.rho], fit.gamma])
        assert np.array_equal(result.estimates[2], expected)

    def test_replication_count_matches_request(self):
        result = recovery_study(small_spec(), 4)
        assert result.replications == 4
        assert result.estimates.shape == (4, 22)
        assert result.ols_estimates.shape == (4, 22)
        assert result.std_errors.shape == (4, 22)
        assert result.eta_errors.shape == (4, 10)

    def test_near_noiseless_recovery_bound(self):
        # wide, weakly persistent driver paths keep the polynomial basis
        # well conditioned, so tiny noise stays tiny in the coefficients
        wide = (
            ArProcess(mean=0.40, shock_sd=0.16, persistence=0.3, mean_sd=0.20, clip=(0.01, 0.95)),
            ArProcess(mean=0.45, shock_sd=0.14, persistence=0.3, mean_sd=0.15, clip=(0.02, 0.95)),
            ArProcess(mean=0.50, shock_sd=0.14, persistence=0.3, mean_sd=0.15, clip=(0.05, 0.95)),
        )
        spec = reference_spec(
            n=40, T=20, burn_in=20, seed=3,
            coef_cov=np.zeros((3, 3)), sigma2=1e-6, driver_process=wide,
        )
        result = recovery_study(spec, 10)
        assert not result.errors
        gamma_err = result.estimates[:, 1:] - result.truth[1:]
        assert np.abs(gamma_err).max() < 1e-2

    def test_summary_self_consistent(self):
        result = recovery_study(small_spec(seed=8), 5)
        recomputed = result.recompute_summary()
        assert result.summary.equals(recomputed)
        assert list(result.summary.columns) == ["coefficient", "bias", "sd", "rmse"]
        assert len(result.summary) == 22

    def test_fit_errors_propagate_without_aborting(self):
        spec = small_spec(n=3, T=3, lag=1, burn_in=5)
        result = recovery_study(spec, 3)
        assert len(result.errors) == 3
        assert all("RankDeficient" in msg for _, msg in result.errors)
        assert np.isnan(result.estimates).all()
        assert result.summary["bias"].isna().all()

    def test_convergence_failures_counted(self):
        cfg = FitConfig(convergence_threshold=1e-30, max_iterations=1)
        result = recovery_study(small_spec(seed=9), 3, fit_config=cfg)
        assert not result.errors
        assert result.convergence_failures == 3
        assert np.isfinite(result.estimates).all()

    def test_coefficient_names_cover_rho_and_gamma(self):
        result = recovery_study(small_spec(), 2)
        assert result.coefficient_names[0] == "rho"
        assert result.coefficient_names[1] == "lnn:1"
        assert len(result.coefficient_names) == 22


class TestVarianceStructure:
    def test_report_target_is_quadratic_form_plus_noise(self):
        spec = small_spec(n=5, T=8)
        report = variance_structure_check(spec, 500)
        expected = (
            np.einsum("nk,kj,nj->n", report.x, spec.coef_cov, report.x) + spec.sigma2
        )
        assert np.abs(report.target - expected).max() < 1e-12

    def test_homoscedastic_limit_matches_sigma2(self):
        spec = small_spec(n=4, T=8, coef_cov=np.zeros((3, 3)), sigma2=0.04)
        report = variance_structure_check(spec, 1000)
        rel = np.abs(report.empirical - 0.04) / 0.04
        assert rel.max() < 0.10

    def test_heteroscedastic_cells_within_three_se(self):
        spec = small_spec(n=6, T=10, coef_cov=np.diag([0.02, 0.01, 0.015]))
        report = variance_structure_check(spec, 1000)
        assert report.var_within_fraction >= 0.95
        assert np.allclose(report.mc_se, report.target * np.sqrt(2.0 / 999))

    def test_off_diagonal_covariances_statistically_zero(self):
        spec = small_spec(n=6, T=10)
        report = variance_structure_check(spec, 1000)
        assert report.pair_cov.shape == report.pair_se.shape
        assert report.cov_within_fraction >= 0.95

    def test_deterministic(self):
        spec = small_spec(n=4, T=8)
        r1 = variance_structure_check(spec, 200)
        r2 = variance_structure_check(spec, 200)
        assert np.array_equal(r1.empirical, r2.empirical)
        assert np.array_equal(r1.pair_cov, r2.pair_cov)


class TestNickellBias:
    def test_default_grid_yields_four_rows(self):
        template = fixed_coefficient_spec(n=8, T=8, lag=1, burn_in=10)
        report = nickell_bias_study(DEFAULT_RHO_GRID, template, 3)
        assert len(report.rows) == 4
        assert tuple(row.rho for row in report.rows) == DEFAULT_RHO_GRID
        assert all(row.t_effective == 7 for row in report.rows)
        frame = report.frame()
        assert len(frame) == 4
        assert set(["rho", "bias", "mc_se", "status"]).issubset(frame.columns)

    def test_bias_is_negative_and_shrinks_with_t(self):
        short = fixed_coefficient_spec(n=20, T=6, lag=1, burn_in=30, seed=14)
        long = fixed_coefficient_spec(n=20, T=29, lag=1, burn_in=30, seed=14)
        row_short = nickell_bias_study((0.93,), short, 40).rows[0]
        row_long = nickell_bias_study((0.93,), long, 40).rows[0]
        assert row_short.bias < 0
        assert abs(row_short.bias) > abs(row_long.bias)

    def test_no_fixed_effects_removes_bias(self):
        template = fixed_coefficient_spec(n=20, T=6, lag=1, burn_in=30, eta_scale=0.0, seed=15)
        row = nickell_bias_study((0.93,), template, 40, fit_fixed_effects=False).rows[0]
        assert abs(row.bias) <= 3.0 * row.mc_se

    def test_status_and_justification_are_consistent(self):
        template = fixed_coefficient_spec(n=12, T=10, lag=1, burn_in=20)
        report = nickell_bias_study((0.93, 0.95), template, 10)
        for row in report.rows:
            assert row.status in ("PASS", "FLAG")
            if row.status == "PASS":
                assert row.justification == ""
            else:
                assert row.justification
            limit = 3e-4 + 3.0 * row.coef_mc_se
            flagged = bool(np.any(np.abs(row.coef_bias) >= limit))
            assert flagged == (row.status == "FLAG")

    def test_varying_coefficient_template_rejected(self):
        with pytest.raises(InvalidSpec, match="fixed-coefficient"):
            nickell_bias_study((0.93,), small_spec(), 2)
