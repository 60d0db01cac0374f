import numpy as np
import pytest

from mirp import harness, report
from mirp.config import ExperimentConfig
from mirp.nn import CheckpointError

SMALL = ["data.train_records=120", "data.val_records=60", "data.test_records=120", "train.epochs=2",
         "model.scale=16", "sweep.trials=3", "sweep.powers_w=[1e-18, 1e-12, 1e-6]"]


def small(task="har", mode="mirp", *extra):
    return ExperimentConfig.load(None, SMALL + [f'experiment.task="{task}"', f'experiment.mode="{mode}"',
                                                *extra])


@pytest.fixture(scope="module")
def har_run():
    cfg = small()
    data = harness.load_task(cfg)
    state, rep = harness.run_training(cfg, data)
    return cfg, data, state, rep


def test_load_task_is_balanced_and_disjoint():
    cfg = small("rfmod")
    data = harness.load_task(cfg)
    assert [len(data.train), len(data.val), len(data.test)] == [120, 60, 120]
    assert np.bincount(data.test.y).tolist() == [30] * 4
    train_rows = {r.tobytes() for r in data.train.x}
    assert not any(r.tobytes() in train_rows for r in data.test.x)


def test_zero_epochs_scores_chance():
    for task, classes in (("har", 6), ("rfmod", 4)):
        cfg = small(task, "mirp", "train.epochs=0", "data.test_records=600")
        _, rep = harness.run_training(cfg)
        assert rep.test_accuracy == pytest.approx(1 / classes, abs=0.05)


def test_overfit_eight_records():
    cfg = small("rfmod", "mirp", "data.train_records=8", "train.epochs=60", "train.patience=0",
                "train.lr=3e-3", "train.batch=8", "model.k=16")
    data = harness.load_task(cfg)
    data = harness.TaskData(data.train, data.train, data.test)
    _, rep = harness.run_training(cfg, data)
    assert rep.train_accuracy == 1.0


def test_training_is_deterministic(tmp_path):
    cfg = small()
    data = harness.load_task(cfg)
    harness.run_training(cfg, data, out_dir=tmp_path / "a")
    harness.run_training(cfg, data, out_dir=tmp_path / "b")
    for name in ("model.ckpt", "training.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_checkpoint_restores_state(tmp_path, har_run):
    cfg, data, state, _ = har_run
    state.save(tmp_path / "m.ckpt", cfg.train_hash)
    back, h = harness.TrainState.load(tmp_path / "m.ckpt")
    assert h == cfg.train_hash
    assert back.adam.step == state.adam.step
    np.testing.assert_array_equal(back.model.predict(data.test.x), state.model.predict(data.test.x))


def test_sweep_shapes_and_statistics(har_run):
    cfg, data, state, _ = har_run
    res = harness.power_sweep(state, cfg, data.test)
    assert res.accuracy.shape == (3, 3)
    assert np.all((res.accuracy >= 0) & (res.accuracy <= 1))
    assert np.all(res.std >= 0)
    np.testing.assert_array_equal(res.std, res.accuracy.std(axis=1))
    again = harness.power_sweep(state, cfg, data.test)
    np.testing.assert_array_equal(res.accuracy, again.accuracy)


def test_sweep_without_noise_is_flat(har_run):
    cfg, data, state, _ = har_run
    res = harness.power_sweep(state, cfg.with_updates(sweep={"noise": False}), data.test)
    assert np.all(res.accuracy == res.accuracy[0, 0])


def test_single_trial_has_zero_std(har_run):
    cfg, data, state, _ = har_run
    res = harness.power_sweep(state, cfg, data.test, trials=1)
    assert np.all(res.std == 0)


def test_sweep_workers_match_serial(har_run):
    cfg, data, state, _ = har_run
    serial = harness.power_sweep(state, cfg, data.test)
    pooled = harness.power_sweep(state, cfg.with_updates(sweep={"workers": 3}), data.test)
    np.testing.assert_array_equal(serial.accuracy, pooled.accuracy)


def test_sweep_rejects_mismatched_checkpoint(har_run):
    cfg, data, state, _ = har_run
    with pytest.raises(CheckpointError):
        harness.power_sweep(state, cfg, data.test, checkpoint_hash="0" * 64)
    # evaluation-only changes keep the checkpoint usable
    harness.power_sweep(state, cfg.with_updates(sweep={"trials": 1}), data.test,
                        checkpoint_hash=cfg.train_hash)


def test_gamma_search_single_and_ties(monkeypatch):
    cfg = small("har", "mirp", "train.epochs=1", "gamma_search.trials=1")
    data = harness.load_task(cfg)
    assert harness.gamma_search(cfg, [2e8], data).best_over_2pi_hz == 2e8
    monkeypatch.setattr(harness, "noisy_accuracy", lambda *a, **k: 0.5)
    found = harness.gamma_search(cfg, [2e9, 2e7, 2e8], data)
    assert found.best_over_2pi_hz == 2e7
    assert [row[0] for row in found.table] == [2e7, 2e8, 2e9]
    with pytest.raises(ValueError):
        harness.gamma_search(cfg, [], data)


def test_validation_summary_defaults():
    s = harness.validation_summary(ExperimentConfig())
    assert s["pass"] is True
    d = s["derived"]
    assert d["antenna_transmissivity"] == pytest.approx(0.2333, abs=1e-3)
    assert d["noise_temperature_k"] == pytest.approx(871, abs=2)
    assert d["noise_power_w"] == pytest.approx(24e-12, abs=0.5e-12)
    assert s["checks"]["rho2"]["total"] == pytest.approx(3.1e-5, rel=0.01)
    names = {row["quantity"] for row in s["discrepancies"]}
    assert {"rho1 (per mode)", "rho2 (total)", "p_shot_dbm", "clearance_db"} <= names


def test_validation_summary_edge_cases():
    zero_g = harness.validation_summary(ExperimentConfig.load(None, ["ring.g_over_2pi_hz=0.0"]))
    assert zero_g["rho1"] == 0.0 and zero_g["rho2"] == 0.0 and zero_g["checks"]["rho1"]["pass"]
    no_lo = harness.validation_summary(ExperimentConfig.load(None, ["homodyne.p_lo_w=0.0"]))
    assert no_lo["checks"]["clearance_db"]["pass"] is False and no_lo["pass"] is False


# --- report -------------------------------------------------------------------------

def _fake(mode, powers, trials, seed):
    acc = np.random.default_rng(seed).uniform(0, 1, (len(powers), trials))
    return harness.SweepResult(mode, "mnist", 49, 2e9, list(powers), acc, "abc")


def test_report_rows_and_round_trip(tmp_path):
    powers = [10.0 ** e for e in range(-18, -11)]
    results = [_fake(m, powers, 4, i) for i, m in enumerate(("mirp", "untrained", "conventional"))]
    path = report.write_csv(tmp_path / "r.csv", results)
    lines = path.read_text().splitlines()
    assert sum(1 for ln in lines[1:] if ",-1," in ln) == 21
    back = report.read_csv(path)
    for a, b in zip(results, back):
        assert a.mode == b.mode and a.powers == b.powers
        np.testing.assert_array_equal(a.accuracy, b.accuracy)
        np.testing.assert_array_equal(a.mean, b.mean)


def test_report_errors(tmp_path):
    with pytest.raises(report.ReportError):
        report.csv_text([])
    with pytest.raises(report.ReportError):
        report.csv_text([harness.SweepResult("mirp", "mnist", 1, 1.0, [], np.zeros((0, 1)))])


def test_svg_is_deterministic(tmp_path):
    res = [_fake("mirp", [1e-18, 1e-12, 1e-6], 3, 0)]
    a = report.plot_svg(tmp_path / "a.svg", res).read_bytes()
    b = report.plot_svg(tmp_path / "b.svg", res).read_bytes()
    assert a == b and a.lstrip().startswith(b"<?xml")
