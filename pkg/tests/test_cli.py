import json

import pytest

from ckmsense.bench import scenario_config_to_dict
from ckmsense.cadm import TrainingConfig, cadm_load
from ckmsense.cli import main
from ckmsense.geometry import load_scene
from ckmsense.sensing import LocalizerConfig

from test_bench import tiny_config


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(scenario_config_to_dict(tiny_config())))
    return str(path)


def test_scene_generate_and_inspect(tmp_path, config_file, capsys):
    scene = tmp_path / "scene.txt"
    assert main(["scene", "generate", "--config", config_file, "--seed", "4",
                 "--out", str(scene)]) == 0
    env = load_scene(scene)
    assert len(env.scatterers) == 8
    assert env.los_blocked
    assert main(["scene", "inspect", str(scene)]) == 0
    out = capsys.readouterr().out
    assert "scatterers: 8" in out

    unblocked = tmp_path / "scene_los.txt"
    main(["scene", "generate", "--config", config_file, "--seed", "4",
          "--out", str(unblocked), "--los"])
    assert not load_scene(unblocked).los_blocked


def test_train_localize_round_trip(tmp_path, config_file, capsys):
    scene = tmp_path / "scene.txt"
    model = tmp_path / "model.cadm"
    tset = tmp_path / "train.txt"
    main(["scene", "generate", "--config", config_file, "--seed", "4",
          "--out", str(scene)])
    assert main(["train", "--config", config_file, "--seed", "4",
                 "--scene", str(scene), "--out", str(model),
                 "--n-train", "200", "--epochs", "10",
                 "--training-set", str(tset)]) == 0
    loaded = cadm_load(model)
    assert loaded.l_prime == 3
    assert tset.exists()
    assert main(["localize", "--config", config_file, "--seed", "4",
                 "--scene", str(scene), "--model", str(model),
                 "--target", "40", "60",
                 "--sigma-theta", "0.1", "--sigma-tau", "2e-9"]) == 0
    out = capsys.readouterr().out
    assert "position error" in out
    for method in ("geo-los", "geo-nlos"):
        assert main(["localize", "--config", config_file, "--seed", "4",
                     "--scene", str(scene), "--method", method,
                     "--target", "40", "60"]) == 0


def test_sweep_crlb_plot_pipeline(tmp_path, config_file):
    sweep_csv = tmp_path / "sweep.csv"
    crlb_csv = tmp_path / "crlb.csv"
    plots = tmp_path / "plots"
    assert main(["sweep", "--config", config_file, "--seed", "5",
                 "--methods", "geo-los", "geo-nlos",
                 "--out", str(sweep_csv)]) == 0
    assert sweep_csv.read_text().startswith("method,sigma_theta,sigma_tau,rmse,"
                                            "n_trials,mean_iters,failure_count")
    assert main(["crlb", "--config", config_file, "--seed", "5",
                 "--methods", "geo-los",
                 "--out", str(crlb_csv)]) == 0
    assert crlb_csv.read_text().startswith("method,sigma_theta,sigma_tau,trace_crlb")
    # only one noise point per family in the tiny config: the point chart path
    assert main(["plot", "--csv", str(crlb_csv), "--out-dir", str(plots)]) == 0
    assert any(p.suffix == ".png" for p in plots.iterdir())


def test_sweep_requires_seed(tmp_path):
    config = tmp_path / "config.json"
    d = scenario_config_to_dict(tiny_config())
    del d["master_seed"]
    config.write_text(json.dumps(d))
    with pytest.raises(SystemExit):
        main(["sweep", "--config", str(config), "--out", str(tmp_path / "s.csv")])


def test_config_dump_round_trips(capsys):
    assert main(["config"]) == 0
    dumped = json.loads(capsys.readouterr().out)
    from ckmsense.bench import scenario_config_from_dict
    config = scenario_config_from_dict(dumped)
    assert isinstance(config.training, TrainingConfig)
    assert isinstance(config.localizer, LocalizerConfig)
