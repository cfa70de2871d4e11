import json
import math

import numpy as np
import pytest

from ckmsense.bench import (METHODS, CsvFormatError, NoDataError,
                            ScenarioConfig, build_training_set, emit_plots,
                            generate_scene, load_scenario_config,
                            run_crlb_sweep, run_sweep, scenario_config_from_dict,
                            scenario_config_to_dict, sweep_points,
                            train_scene_models, write_sweep_csv)
from ckmsense.cadm import TrainingConfig
from ckmsense.geometry import SPEED_OF_LIGHT, Point2
from ckmsense.sensing import LocalizerConfig


def tiny_config(**kw) -> ScenarioConfig:
    defaults = dict(
        n_scatterers=8, l_prime=3, n_train=300, n_trials=3,
        sigma_theta_list=(0.1,), fixed_sigma_tau=20e-9,
        sigma_tau_list=(2e-9,), fixed_sigma_theta=0.1,
        master_seed=5,
        training=TrainingConfig(epochs=15, batch_size=128, warmup_fraction=0.8),
        localizer=LocalizerConfig(max_iters=25, multistart_grid=(4, 4),
                                  prescan_grid=(16, 16), prescan_starts=4),
    )
    defaults.update(kw)
    return ScenarioConfig(**defaults)


class TestGenerateScene:
    def test_paper_scale_scene(self):
        config = ScenarioConfig(master_seed=3)
        env, target = generate_scene(config, np.random.default_rng(0))
        assert len(env.scatterers) == 40
        assert env.bounds == (100.0, 100.0)
        assert env.los_blocked
        for s in env.scatterers:
            assert 0.0 <= s.position.x <= 100.0
            assert 0.0 <= s.position.y <= 100.0
            assert 0.0 < s.reflectivity <= 1.0
        assert env.contains(target)

    def test_same_seed_same_scene(self):
        config = ScenarioConfig(master_seed=3)
        env_a, t_a = generate_scene(config, np.random.default_rng(11))
        env_b, t_b = generate_scene(config, np.random.default_rng(11))
        assert env_a == env_b
        assert t_a == t_b

    def test_minimum_separation(self):
        config = tiny_config(n_scatterers=30, min_separation=2.0)
        env, target = generate_scene(config, np.random.default_rng(1))
        pts = np.vstack([env.bs.as_array()[None, :], env.scatterer_positions()])
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                assert np.hypot(*(pts[i] - pts[j])) >= 2.0
        assert min(np.hypot(*(p - target.as_array())) for p in pts) >= 2.0

    def test_too_few_scatterers_for_blocked_scene(self):
        with pytest.raises(ValueError):
            tiny_config(n_scatterers=2, l_prime=3)


class TestBuildTrainingSet:
    def test_counts_and_bounds(self):
        config = tiny_config()
        env, _ = generate_scene(config, np.random.default_rng(2))
        data = build_training_set(env, 250, np.random.default_rng(3), l_prime=3)
        assert data.n_samples == 250
        assert data.l_prime == 3
        assert np.all(data.locations >= 0.0)
        assert np.all(data.locations[:, 0] <= env.bounds[0])
        assert np.all(data.locations[:, 1] <= env.bounds[1])

    def test_delays_within_geometric_bounds(self):
        config = tiny_config()
        env, _ = generate_scene(config, np.random.default_rng(2))
        data = build_training_set(env, 200, np.random.default_rng(4), l_prime=3)
        diag = math.hypot(*env.bounds)
        direct = np.hypot(*(data.locations - env.bs.as_array()).T) / SPEED_OF_LIGHT
        assert np.all(data.delay >= direct[:, None] - 1e-15)
        assert np.all(data.delay <= 2.0 * diag / SPEED_OF_LIGHT)

    def test_deterministic(self):
        config = tiny_config()
        env, _ = generate_scene(config, np.random.default_rng(2))
        a = build_training_set(env, 100, np.random.default_rng(5), l_prime=3)
        b = build_training_set(env, 100, np.random.default_rng(5), l_prime=3)
        np.testing.assert_array_equal(a.locations, b.locations)
        np.testing.assert_array_equal(a.delay, b.delay)


class TestRunSweep:
    def test_reproducible_csv_bytes(self, tmp_path):
        config = tiny_config()
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        run_sweep(config, out_csv=p1)
        run_sweep(config, out_csv=p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_row_structure_and_failure_accounting(self, tmp_path):
        config = tiny_config()
        log = tmp_path / "trials.csv"
        rows = run_sweep(config, trial_log_csv=log)
        points = sweep_points(config)
        assert len(rows) == len(points) * len(config.methods)
        for r in rows:
            assert r.n_trials == config.n_trials
            assert 0 <= r.failure_count <= r.n_trials
        # brute-force RMSE recomputation from the per-trial log
        lines = log.read_text().splitlines()
        header = lines[0].split(",")
        recs = [dict(zip(header, ln.split(","))) for ln in lines[1:]]
        for r in rows:
            errs = [float(rec["error_m"]) for rec in recs
                    if rec["method"] == r.method
                    and float(rec["sigma_theta"]) == r.sigma_theta
                    and float(rec["sigma_tau"]) == r.sigma_tau]
            assert len(errs) + r.failure_count == r.n_trials
            if errs:
                assert r.rmse == pytest.approx(
                    math.sqrt(sum(e * e for e in errs) / len(errs)), rel=1e-12)

    def test_failures_counted_not_fatal(self):
        # delay noise of 1 us dwarfs the scene: negative shortest delays make
        # the geometric inversion reject some trials
        config = tiny_config(methods=("geo-nlos",), n_trials=40,
                             sigma_tau_list=(1e-6,), fixed_sigma_theta=0.1,
                             sigma_theta_list=(0.1,), fixed_sigma_tau=1e-6)
        rows = run_sweep(config)
        assert all(r.failure_count + (r.n_trials - r.failure_count) == r.n_trials
                   for r in rows)
        assert any(r.failure_count > 0 for r in rows)

    def test_geometry_only_needs_no_training(self):
        config = tiny_config(methods=("geo-los", "geo-nlos"))
        rows = run_sweep(config)
        assert {r.method for r in rows} == {"geo-los", "geo-nlos"}

    def test_resampled_scene_mode(self):
        config = tiny_config(methods=("geo-los",), n_trials=2,
                             resample_scene_per_trial=True)
        rows = run_sweep(config)
        assert rows and all(np.isfinite(r.rmse) for r in rows)

    def test_zero_noise_geo_los_is_exact(self):
        config = tiny_config(methods=("geo-los",),
                             sigma_theta_list=(1e-15,), fixed_sigma_tau=1e-24,
                             sigma_tau_list=(1e-24,), fixed_sigma_theta=1e-15)
        rows = run_sweep(config)
        assert all(r.rmse < 1e-6 for r in rows)


class TestRunCrlbSweep:
    def test_rows_and_superset_ordering(self, tmp_path):
        config = tiny_config(sigma_theta_list=(0.1, 0.3), sigma_tau_list=(2e-9, 40e-9))
        out = tmp_path / "crlb.csv"
        rows = run_crlb_sweep(config, out_csv=out)
        methods = [m for m in config.methods if m != "geo-nlos"]
        assert len(rows) == len(sweep_points(config)) * len(methods)
        by_key = {(r.method, r.sigma_theta, r.sigma_tau): r for r in rows}
        for st, stau in sweep_points(config):
            full = by_key[("ckm-nlos", st, stau)]
            conv = by_key[("ckm-nlos-conv", st, stau)]
            assert full.trace_crlb <= conv.trace_crlb + 1e-12
        assert out.exists()

    def test_geo_nlos_excluded(self):
        config = tiny_config(methods=("geo-los", "geo-nlos"))
        rows = run_crlb_sweep(config)
        assert {r.method for r in rows} == {"geo-los"}


class TestEmitPlots:
    def _write_sweep(self, path, config=None):
        config = config or tiny_config(methods=("geo-los", "geo-nlos"),
                                       sigma_theta_list=(0.1, 0.3, 0.5),
                                       sigma_tau_list=(2e-9, 20e-9))
        rows = run_sweep(config)
        write_sweep_csv(rows, path)
        return rows

    def test_renders_families(self, tmp_path):
        csv_path = tmp_path / "sweep.csv"
        self._write_sweep(csv_path)
        written = emit_plots(csv_path, tmp_path / "plots")
        assert len(written) == 2  # one angle family, one delay family
        for p in written:
            assert p.endswith(".png")

    def test_deterministic_bytes(self, tmp_path):
        csv_path = tmp_path / "sweep.csv"
        self._write_sweep(csv_path)
        w1 = emit_plots(csv_path, tmp_path / "p1")
        w2 = emit_plots(csv_path, tmp_path / "p2")
        for a, b in zip(w1, w2):
            assert open(a, "rb").read() == open(b, "rb").read()

    def test_empty_body_raises(self, tmp_path):
        csv_path = tmp_path / "empty.csv"
        csv_path.write_text("method,sigma_theta,sigma_tau,rmse,n_trials,"
                            "mean_iters,failure_count\n")
        with pytest.raises(NoDataError):
            emit_plots(csv_path, tmp_path / "plots")

    def test_malformed_row_reports_line(self, tmp_path):
        csv_path = tmp_path / "bad.csv"
        csv_path.write_text("method,sigma_theta,sigma_tau,rmse,n_trials,"
                            "mean_iters,failure_count\n"
                            "geo-los,0.1,2e-08,1.0,3,0,0\n"
                            "geo-los,0.1,oops,1.0,3,0,0\n")
        with pytest.raises(CsvFormatError, match="line 3"):
            emit_plots(csv_path, tmp_path / "plots")

    def test_crlb_csv_plots(self, tmp_path):
        config = tiny_config(methods=("geo-los",),
                             sigma_theta_list=(0.1, 0.5), sigma_tau_list=(2e-9,))
        out = tmp_path / "crlb.csv"
        run_crlb_sweep(config, out_csv=out)
        written = emit_plots(out, tmp_path / "plots")
        assert written


class TestConfig:
    def test_json_round_trip(self, tmp_path):
        config = tiny_config()
        path = tmp_path / "config.json"
        path.write_text(json.dumps(scenario_config_to_dict(config)))
        back = load_scenario_config(path)
        assert back == config

    def test_overrides(self, tmp_path):
        config = tiny_config()
        path = tmp_path / "config.json"
        path.write_text(json.dumps(scenario_config_to_dict(config)))
        back = load_scenario_config(path, master_seed=99, n_trials=7)
        assert back.master_seed == 99
        assert back.n_trials == 7

    def test_method_validation(self):
        with pytest.raises(ValueError):
            tiny_config(methods=("warp-drive",))
        with pytest.raises(ValueError):
            tiny_config(methods=())

    def test_sweep_points_dedup(self):
        config = tiny_config(sigma_theta_list=(0.1, 0.2),
                             fixed_sigma_tau=20e-9,
                             sigma_tau_list=(20e-9, 40e-9),
                             fixed_sigma_theta=0.1)
        pts = sweep_points(config)
        assert pts == [(0.1, 20e-9), (0.2, 20e-9), (0.1, 40e-9)]

    def test_from_dict_nested(self):
        d = scenario_config_to_dict(tiny_config())
        config = scenario_config_from_dict(d)
        assert isinstance(config.training, TrainingConfig)
        assert isinstance(config.localizer, LocalizerConfig)
        assert config.methods == METHODS


class TestTrainSceneModels:
    def test_trains_only_requested(self):
        config = tiny_config(methods=("ckm-nlos",))
        env, _ = generate_scene(config, np.random.default_rng(0))
        models = train_scene_models(env, config)
        assert set(models) == {"nlos"}
        assert models["nlos"].l_prime == config.l_prime

    def test_bounds_recorded(self):
        config = tiny_config(methods=("ckm-los",))
        env, _ = generate_scene(config, np.random.default_rng(0))
        models = train_scene_models(env, config)
        (x_lo, x_hi), (y_lo, y_hi) = models["los"].bounds_rect()
        assert (x_lo, y_lo) == (0.0, 0.0)
        assert (x_hi, y_hi) == pytest.approx(config.area)
