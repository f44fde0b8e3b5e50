"""Tests for the Monte Carlo harness: trials, sweeps, CSV, determinism."""

import numpy as np
import pytest

from onebitsync.experiment import (
    ExperimentConfig,
    aggregate,
    calibrate_noise,
    emit_objective_curve,
    measure_lobe_widths,
    noise_var_for_snr,
    read_rows_csv,
    run_crb_sweep,
    run_sweep,
    run_trial,
    write_rows_csv,
)
from onebitsync.model import ParameterError, TrainingBlock, build_d_matrix

TINY = dict(n_t=2, n_r=2, np_list=(16,), snr_db_list=(10.0,), n_trials=2, figures=False)


class TestCalibrateNoise:
    def test_zero_db(self):
        rng = np.random.default_rng(0)
        training = TrainingBlock.random_qpsk(2, 4, rng=0)
        d = build_d_matrix(training, 0.3, n_r=2)
        h = rng.standard_normal(d.shape[1])
        sigma = calibrate_noise(d, h, 0.0)
        assert sigma == pytest.approx(np.linalg.norm(d @ h) ** 2 / d.shape[0], rel=1e-12)

    def test_plug_in_arithmetic(self):
        assert noise_var_for_snr(2 * 4 * 8, 2 * 4 * 8, 10.0) == pytest.approx(0.1)

    def test_round_trip(self):
        signal_sq, m = 123.4, 256
        for snr_db in (-3.0, 0.0, 7.5):
            sigma = noise_var_for_snr(signal_sq, m, snr_db)
            back = 10 * np.log10(signal_sq / (m * sigma))
            assert back == pytest.approx(snr_db, abs=1e-12)

    def test_degenerate_channel(self):
        training = TrainingBlock.random_qpsk(2, 4, rng=1)
        d = build_d_matrix(training, 0.3, n_r=2)
        with pytest.raises(ParameterError):
            calibrate_noise(d, np.zeros(d.shape[1]), 10.0)


class TestConfig:
    def test_unknown_keys_rejected(self):
        with pytest.raises(ParameterError):
            ExperimentConfig.from_dict({"n_T": 4})

    def test_cfo_unit_conversion(self):
        config = ExperimentConfig(cfo_list=(0.25,), cfo_unit="fraction")
        assert config.cfo_rad_list[0] == pytest.approx(np.pi / 2)
        config = ExperimentConfig(cfo_list=(1.5,), cfo_unit="radians")
        assert config.cfo_rad_list[0] == 1.5

    def test_dict_round_trip(self):
        config = ExperimentConfig(**TINY)
        again = ExperimentConfig.from_dict(config.to_dict())
        assert again == config
        assert again.config_hash() == config.config_hash()

    def test_yaml_round_trip(self, tmp_path):
        import yaml

        config = ExperimentConfig(**TINY)
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump(config.to_dict()))
        assert ExperimentConfig.from_yaml(path) == config

    def test_unknown_baseline_rejected(self):
        with pytest.raises(ParameterError):
            ExperimentConfig(baselines=("oracle",))


class TestRunTrial:
    def test_determinism(self):
        config = ExperimentConfig(**TINY)
        a = run_trial(config, 16, 10.0, 0.26, 1)
        b = run_trial(config, 16, 10.0, 0.26, 1)
        assert a.seed == b.seed
        assert a.cfo_hat == b.cfo_hat
        assert a.nmse == b.nmse
        assert a.crb_value == b.crb_value

    def test_known_cfo_ignores_stage_one(self):
        # A deliberately broken stage-1 grid changes the unknown-CFO result
        # but must leave the known-CFO baseline untouched.
        from onebitsync.cfo import CfoSearchConfig

        base = dict(TINY, baselines=("unknown-cfo", "known-cfo"))
        good = ExperimentConfig(**base)
        crippled = ExperimentConfig(
            **base, cfo_search=CfoSearchConfig(n1=3, n2=1, refine_max_iters=1)
        )
        rec_good = run_trial(good, 16, 10.0, 0.26, 0)
        rec_bad = run_trial(crippled, 16, 10.0, 0.26, 0)
        assert rec_good.nmse["known-cfo"] == rec_bad.nmse["known-cfo"]
        assert rec_good.cfo_hat != rec_bad.cfo_hat

    def test_no_compensation_uses_zero(self):
        config = ExperimentConfig(**TINY, baselines=("no-compensation",))
        record = run_trial(config, 16, 10.0, 0.26, 0)
        assert set(record.nmse) == {"no-compensation"}
        # forcing omega = 0 while the true CFO is 0.26 rad must hurt badly
        assert record.nmse["no-compensation"] > 0.3

    def test_shared_draws_across_cells(self):
        # Same (base_seed, trial_index) at two SNRs shares the channel draw,
        # so the CRB ratio reflects only the noise scaling.
        config = ExperimentConfig(**TINY)
        low = run_trial(config, 16, 0.0, 0.26, 3)
        high = run_trial(config, 16, 10.0, 0.26, 3)
        assert low.seed == high.seed
        assert low.crb_value > high.crb_value


class TestSweep:
    def test_rows_and_csv(self, tmp_path):
        out = tmp_path / "sweep.csv"
        config = ExperimentConfig(**dict(TINY, output=str(out)))
        result = run_sweep(config)
        assert len(result.rows) == 1
        rows = read_rows_csv(result.csv_path)
        assert rows[0]["np"] == 16
        assert rows[0]["nmse_unknown_cfo_db"] == pytest.approx(
            result.rows[0].nmse_unknown_cfo_db
        )
        # timing columns excluded by default
        assert "t_cfo_s" not in rows[0]
        assert (tmp_path / "sweep_timing.csv").exists()

    def test_byte_identical_rerun(self, tmp_path):
        out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_sweep(ExperimentConfig(**dict(TINY, output=str(out_a))))
        run_sweep(ExperimentConfig(**dict(TINY, output=str(out_b))))
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_parallel_matches_serial(self, tmp_path):
        out_s, out_p = tmp_path / "serial.csv", tmp_path / "parallel.csv"
        run_sweep(ExperimentConfig(**dict(TINY, n_trials=3, output=str(out_s))))
        run_sweep(ExperimentConfig(**dict(TINY, n_trials=3, output=str(out_p), workers=2)))
        assert out_s.read_bytes() == out_p.read_bytes()

    def test_timing_columns_when_enabled(self, tmp_path):
        out = tmp_path / "timed.csv"
        config = ExperimentConfig(**dict(TINY, output=str(out), include_timing=True))
        run_sweep(config)
        header = [l for l in out.read_text().splitlines() if not l.startswith("#")][0]
        assert "t_cfo_s" in header and "t_chan_s" in header

    def test_missing_baseline_cells_empty(self, tmp_path):
        out = tmp_path / "partial.csv"
        config = ExperimentConfig(
            **dict(TINY, output=str(out), baselines=("unknown-cfo",))
        )
        run_sweep(config)
        rows = read_rows_csv(str(out))
        assert np.isnan(rows[0]["nmse_known_cfo_db"])
        assert np.isfinite(rows[0]["nmse_unknown_cfo_db"])

    def test_figures_rendered(self, tmp_path):
        out = tmp_path / "figs.csv"
        config = ExperimentConfig(**dict(TINY, output=str(out), figures=True))
        result = run_sweep(config)
        assert result.figure_paths
        for path in result.figure_paths:
            assert path.endswith(".png")
            assert (tmp_path / path.split("/")[-1]).stat().st_size > 0


class TestCrbSweep:
    def test_bound_only_rows(self, tmp_path):
        out = tmp_path / "crb.csv"
        config = ExperimentConfig(**dict(TINY, output=str(out)))
        result = run_crb_sweep(config)
        row = result.rows[0]
        assert np.isfinite(row.crb_db)
        assert np.isnan(row.mse_cfo_db)
        parsed = read_rows_csv(str(out))
        assert parsed[0]["crb_db"] == pytest.approx(row.crb_db)

    def test_matches_run_sweep_crb(self, tmp_path):
        config = ExperimentConfig(**TINY)
        sweep_rows = run_sweep(config).rows
        crb_rows = run_crb_sweep(config).rows
        assert sweep_rows[0].crb_db == pytest.approx(crb_rows[0].crb_db, abs=1e-12)


class TestLobeWidths:
    def test_synthetic_triangle(self):
        # Triangular peak of half-width 10 bins on a flat floor: the half-max
        # crossings sit 5 bins out, the flanking minima 10 bins out.
        n = 1000
        step = 2 * np.pi / n
        s = np.full(n, 1.0)
        peak = 500
        for offset in range(-10, 11):
            s[peak + offset] = 3.0 - 2.0 * abs(offset) / 10.0
        width_main, width_half = measure_lobe_widths(np.arange(n) * step, s)
        assert width_main == pytest.approx(20 * step, abs=1e-12)
        assert width_half == pytest.approx(15 * step, rel=1e-6)

    def test_curve_emission(self, tmp_path):
        out = tmp_path / "curve.csv"
        config = ExperimentConfig(
            n_t=4, n_r=4, np_list=(64,), snr_db_list=(10.0,), n_trials=1,
            figures=True, output=None,
        )
        curve = emit_objective_curve(config, 64, 10.0, grid_size=1024, output=str(out))
        text = out.read_text()
        assert "# width_main_lobe:" in text and "# width_half_max:" in text
        assert (tmp_path / "curve.png").exists()
        # global grid max within one coarse-grid step (2 pi / 300) of omega_e
        assert abs(curve.omega_peak - curve.cfo_true) < 2 * np.pi / 300


class TestAggregate:
    def test_db_of_mean(self):
        config = ExperimentConfig(**TINY)
        records = [run_trial(config, 16, 10.0, 0.26, i) for i in range(2)]
        row = aggregate(records, 16, 10.0, 0.26)
        expected = 10 * np.log10(np.mean([r.cfo_sq_err for r in records]))
        assert row.mse_cfo_db == pytest.approx(expected)

    def test_csv_cells_reproduce_floats(self, tmp_path):
        config = ExperimentConfig(**TINY)
        records = [run_trial(config, 16, 10.0, 0.26, i) for i in range(2)]
        row = aggregate(records, 16, 10.0, 0.26)
        path = tmp_path / "one.csv"
        write_rows_csv(str(path), config, [row])
        parsed = read_rows_csv(str(path))[0]
        assert parsed["mse_cfo_db"] == row.mse_cfo_db  # repr round-trips exactly
