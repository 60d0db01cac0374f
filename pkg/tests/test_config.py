import math

import pytest

from mirp.config import ConfigError, ExperimentConfig, parse_override, parse_powers


def test_defaults_are_valid():
    cfg = ExperimentConfig()
    assert cfg.task == "mnist" and cfg.mode == "mirp" and cfg.k == 49
    assert len(cfg["sweep"]["powers_w"]) == 13
    assert cfg["sweep"]["powers_w"][0] == pytest.approx(1e-18)
    assert cfg["sweep"]["trials"] == 10
    assert cfg.gamma == pytest.approx(2 * math.pi * 2e9)


def test_task_default_strides():
    for task, k in (("mnist", 49), ("rfmod", 64), ("har", 51)):
        assert ExperimentConfig({"experiment": {"task": task}}).k == k
    assert ExperimentConfig({"model": {"k": 1}}).k == 1


def test_toml_file_and_overrides(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[ring]\nmodes = 8\n\n[experiment]\nmode = "conventional"\n')
    cfg = ExperimentConfig.load(path, ["ring.modes=4", "train.lr=3e-4", 'experiment.task="har"'])
    assert cfg["ring"]["modes"] == 4
    assert cfg["train"]["lr"] == 3e-4
    assert cfg.mode == "conventional" and cfg.task == "har"
    assert parse_override("experiment.mode=untrained") == {"experiment": {"mode": "untrained"}}


def test_hash_stable_under_key_order(tmp_path):
    a, b = tmp_path / "a.toml", tmp_path / "b.toml"
    a.write_text("[ring]\nbeta = 0.02\nmodes = 8\n[train]\nepochs = 3\n")
    b.write_text("[train]\nepochs = 3\n[ring]\nmodes = 8\nbeta = 0.02\n")
    assert ExperimentConfig.load(a).hash == ExperimentConfig.load(b).hash


def test_hash_tracks_physics_and_ignores_data_dir():
    base = ExperimentConfig()
    assert base.with_updates(ring={"beta": 0.02}).hash != base.hash
    assert base.with_updates(sr={"if_nf_db": 2.5}).hash != base.hash
    assert base.with_updates(data={"dir": "/elsewhere"}).hash == base.hash
    # evaluation-only sections leave the training hash alone
    swept = base.with_updates(sweep={"trials": 3})
    assert swept.hash != base.hash and swept.train_hash == base.train_hash


def test_toml_export_round_trips(tmp_path):
    cfg = ExperimentConfig({"ring": {"modes": 8}, "sweep": {"powers_w": [1e-15, 1e-9]}})
    (tmp_path / "x.toml").write_text(cfg.to_toml())
    assert ExperimentConfig.load(tmp_path / "x.toml").hash == cfg.hash


@pytest.mark.parametrize("bad", [
    ["nosection.key=1"], ["ring.unknown=1"], ["ring.modes=1.5"], ["model.k=-1"],
    ["sweep.trials=0"], ["sweep.powers_w=[1e-12, 1e-15]"], ["sweep.powers_w=[]"],
    ["experiment.mode=optical"], ["experiment.task=cifar"], ["ring.beta=2.0"], ["ringmodes=3"],
    ["ring.tau=1e-9"], ["gamma_search.grid_over_2pi_hz=[]"],
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(None, bad)


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.toml")
    (tmp_path / "broken.toml").write_text("[ring\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "broken.toml")


def test_parse_powers():
    assert parse_powers("1e-12, 1e-9") == [1e-12, 1e-9]
    assert parse_powers("-90dBm,0dBm") == pytest.approx([1e-12, 1e-3])
    with pytest.raises(ConfigError):
        parse_powers("loud")


def test_derived_parameter_blocks():
    cfg = ExperimentConfig()
    assert cfg.ring_params().modes == 16
    assert cfg.homodyne_params().bandwidth == pytest.approx(2e9)
    assert cfg.clearance_db() == 45.0
    computed = cfg.with_updates(homodyne={"clearance": "computed"}).clearance_db()
    assert computed == pytest.approx(10.46, abs=0.05)
