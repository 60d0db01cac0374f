"""Experiment orchestration: data resolution, noiseless training, linewidth
search and noisy power sweeps."""
from __future__ import annotations

import copy
import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datasets, physics
from .config import ExperimentConfig
from .nn import AdamState, Model, ModelSpec, TrainingError, adam_step, checkpoint, softmax_xent
from .rng import stream

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass
class TaskData:
    train: datasets.Dataset
    val: datasets.Dataset
    test: datasets.Dataset


def _source(cfg, task):
    src = cfg["data"]["source"]
    if src != "auto":
        return src
    return "files" if task == "mnist" else "synthetic"


def _carve(pool: datasets.Dataset, counts, seed, splits=("train", "val", "test")):
    """Disjoint class-balanced subsets of ``pool``."""
    out, used = [], np.zeros(0, dtype=np.int64)
    for n, name in zip(counts, splits):
        idx = datasets.stratified_indices(pool.y, n // pool.classes, seed + len(out), exclude=used)
        used = np.concatenate([used, idx])
        out.append(pool.subset(idx, name))
    return out


def load_task(cfg: ExperimentConfig) -> TaskData:
    """Resolve train/val/test for the configured task.

    Subsets are class-balanced (``n // C`` records per class) so that a
    classifier that ignores its input scores exactly chance in expectation.
    """
    task, d, seed = cfg.task, cfg["data"], cfg.seed
    root = datasets.data_dir(d["dir"] or None)
    n_train, n_val, n_test = d["train_records"], d["val_records"], d["test_records"]
    source = _source(cfg, task)
    if task == "mnist":
        if source != "files":
            raise datasets.DatasetError("MNIST has no synthetic generator; set data.source = \"files\"")
        pool = datasets.load_mnist(*datasets.find_mnist(root, "train"), split="train")
        test_pool = datasets.load_mnist(*datasets.find_mnist(root, "test"), split="test")
        train, val = _carve(pool, (n_train, n_val), seed, ("train", "val"))
        (test,) = _carve(test_pool, (n_test,), seed + 7, ("test",))
        return TaskData(train, val, test)
    if task == "har" and source == "files":
        pool = datasets.load_har(*datasets.find_har(root, "train"), split="train")
        test_pool = datasets.load_har(*datasets.find_har(root, "test"), split="test")
        train, val = _carve(pool, (n_train, n_val), seed, ("train", "val"))
        (test,) = _carve(test_pool, (n_test,), seed + 7, ("test",))
        return TaskData(train, val, test)
    if task == "rfmod" and source == "files":
        parts = []
        for name in ("train", "val", "test"):
            path = root / "rfmod" / f"{name}.iq"
            if not path.exists():
                raise FileNotFoundError(f"I/Q file {path} not found (write one with `mirp data synth`)")
            parts.append(datasets.load_iq(path, split=name))
        return TaskData(*parts)
    classes = datasets.TASKS[task][2]
    per_class = -(-(n_train + n_val + n_test) // classes) + 1
    if task == "rfmod":
        pool = datasets.synth_rfmod(seed, per_class, snr_db=d["synth_snr_db"])
    else:
        pool = datasets.synth_har(seed, per_class)
    return TaskData(*_carve(pool, (n_train, n_val, n_test), seed))


# ---------------------------------------------------------------------------
# model / state
# ---------------------------------------------------------------------------

def model_spec(cfg: ExperimentConfig, gamma=None) -> ModelSpec:
    j, m, c, _ = datasets.TASKS[cfg.task]
    ring = cfg.ring_params()
    return ModelSpec(
        mode=cfg.mode, channels=j, length=m, classes=c, modes=ring.modes, k=cfg.k,
        gamma=ring.gamma if gamma is None else gamma, dt=ring.dt, scale=cfg["model"]["scale"],
        train_gamma=cfg["model"]["train_gamma"], average_decimation=cfg["model"]["average_decimation"])


@dataclass
class TrainState:
    model: Model
    adam: AdamState
    epoch: int = 0
    seed: int = 0

    def tensors(self):
        out = dict(self.model.params)
        for name in self.model.params:
            if name in self.adam.m:
                out[f"adam.m.{name}"] = self.adam.m[name]
                out[f"adam.v.{name}"] = self.adam.v[name]
        return out

    def meta(self):
        a = self.adam
        return {"spec": self.model.spec.to_dict(), "epoch": self.epoch, "seed": self.seed,
                "adam": {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "step": a.step}}

    def save(self, path, config_hash=""):
        checkpoint.save(path, self.tensors(), config_hash, self.meta())

    @classmethod
    def load(cls, path):
        tensors, config_hash, meta = checkpoint.load(path)
        spec = ModelSpec(**meta["spec"])
        model = Model(spec, seed=meta["seed"])
        model.set_params({n: v for n, v in tensors.items() if not n.startswith("adam.")})
        a = meta["adam"]
        adam = AdamState(a["lr"], a["beta1"], a["beta2"], a["eps"], a["step"])
        for n, v in tensors.items():
            if n.startswith("adam.m."):
                adam.m[n[7:]] = v
            elif n.startswith("adam.v."):
                adam.v[n[7:]] = v
        return cls(model, adam, meta["epoch"], meta["seed"]), config_hash


@dataclass
class TrainReport:
    curve: list = field(default_factory=list)
    best_epoch: int = 0
    val_accuracy: float = float("nan")
    test_accuracy: float = float("nan")
    train_accuracy: float = float("nan")


def accuracy(model: Model, ds: datasets.Dataset) -> float:
    if len(ds) == 0:
        return float("nan")
    return float(np.mean(model.predict(ds.x) == ds.y))


def run_training(cfg: ExperimentConfig, data: TaskData | None = None, out_dir=None, gamma=None,
                 epochs=None) -> tuple[TrainState, TrainReport]:
    """Noiseless training with early stopping on validation accuracy; the
    best-validation parameters are kept."""
    data = load_task(cfg) if data is None else data
    t = cfg["train"]
    epochs = t["epochs"] if epochs is None else epochs
    model = Model(model_spec(cfg, gamma), seed=cfg.seed)
    adam = AdamState(t["lr"], t["beta1"], t["beta2"], t["eps"])
    state = TrainState(model, adam, 0, cfg.seed)
    report = TrainReport()
    has_params = bool(model.params)
    best_val, best_params, stale = -1.0, None, 0
    for epoch in range(1, epochs + 1 if has_params else 1):
        losses = []
        for idx in datasets.batches(len(data.train), t["batch"], cfg.seed, epoch):
            loss, grads = model.loss_and_grads(data.train.x[idx], data.train.y[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            adam_step(model.params, grads, adam)
            losses.append(loss * len(idx))
        state.epoch = epoch
        val = accuracy(model, data.val)
        report.curve.append({"epoch": epoch, "loss": float(np.sum(losses) / len(data.train)),
                             "val_accuracy": val})
        log.info("epoch %d loss %.4f val %.4f", epoch, report.curve[-1]["loss"], val)
        if val > best_val:
            best_val, stale, report.best_epoch = val, 0, epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
        else:
            stale += 1
            if t["patience"] and stale >= t["patience"]:
                break
    if best_params is not None:
        model.set_params(best_params)
    report.val_accuracy = accuracy(model, data.val)
    report.test_accuracy = accuracy(model, data.test)
    report.train_accuracy = accuracy(model, data.train)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        state.save(out / "model.ckpt", cfg.train_hash)
        write_curve(out / "training.csv", report)
    return state, report


def write_curve(path, report: TrainReport):
    lines = ["epoch,loss,val_accuracy"]
    lines += [f"{r['epoch']},{r['loss']!r},{r['val_accuracy']!r}" for r in report.curve]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# noise evaluation
# ---------------------------------------------------------------------------

def snr_scale(cfg: ExperimentConfig, mode: str, p_rf: float) -> float:
    """Per-readout SNR scale: 4 beta n_sig for the optical modes, the
    receiver SNR for the conventional chain."""
    if mode == "conventional":
        return float(physics.snr_conventional(p_rf, cfg.sr_params()))
    rf, ring = cfg.rf_params(), cfg.ring_params()
    omega = physics.resonator_derive(rf).omega
    return float(physics.snr_mirp(p_rf, ring.beta, physics.rf_transmissivity(rf), ring.dt, omega))


def noise_variance(cfg: ExperimentConfig, mode: str) -> float:
    if mode == "conventional":
        return 1.0
    return physics.quadrature_noise_variance(cfg.clearance_db())


def noisy_accuracy(model: Model, feats, labels, scale, variance, seed, power_index, trial,
                   record_ids=None, noise=True) -> float:
    """Accuracy of the frozen backend on features plus per-record noise drawn
    from stream (seed, record, power index, trial)."""
    if not noise or math.isinf(scale):
        z = feats
    else:
        if not scale > 0:
            return _chance_free_accuracy(model, feats, labels, seed, power_index, trial)
        ids = range(len(feats)) if record_ids is None else record_ids
        std = math.sqrt(variance / scale)
        z = np.empty_like(feats)
        for i, rid in enumerate(ids):
            z[i] = feats[i] + std * stream(seed, rid, power_index, trial).standard_normal(feats[i].shape)
    return float(np.mean(model.predict_features(z) == labels))


def _chance_free_accuracy(model, feats, labels, seed, power_index, trial):
    # zero received power: the measurement is pure noise of unbounded scale
    z = np.empty_like(feats)
    for i in range(len(feats)):
        z[i] = stream(seed, i, power_index, trial).standard_normal(feats[i].shape) * 1e12
    return float(np.mean(model.predict_features(z) == labels))


def features(model: Model, x, batch=256):
    return np.concatenate([model.features(x[i:i + batch]) for i in range(0, len(x), batch)])


@dataclass
class SweepResult:
    mode: str
    task: str
    k: int
    gamma_over_2pi_hz: float
    powers: list
    accuracy: np.ndarray  # (powers, trials)
    run_id: str = ""
    config_hash: str = ""

    @property
    def mean(self):
        return self.accuracy.mean(axis=1)

    @property
    def std(self):
        return self.accuracy.std(axis=1)

    @property
    def trials(self):
        return self.accuracy.shape[1]


def _run_chunk(run, jobs, model):
    return [run(j, model) for j in jobs]


def run_id(cfg: ExperimentConfig) -> str:
    return hashlib.sha1(f"{cfg.hash}:{cfg.seed}".encode()).hexdigest()[:12]


def power_sweep(state: TrainState, cfg: ExperimentConfig, test: datasets.Dataset,
                checkpoint_hash: str | None = None, powers=None, trials=None) -> SweepResult:
    if checkpoint_hash is not None and checkpoint_hash != cfg.train_hash:
        raise checkpoint.CheckpointError(
            "checkpoint was trained under a different configuration "
            f"(checkpoint {checkpoint_hash[:12]}, config {cfg.train_hash[:12]})")
    s = cfg["sweep"]
    powers = list(s["powers_w"] if powers is None else powers)
    trials = s["trials"] if trials is None else trials
    if not powers:
        raise ValueError("empty power grid")
    model = state.model
    mode = model.spec.mode
    feats = features(model, test.x)
    variance = noise_variance(cfg, mode)
    jobs = [(pi, t) for pi in range(len(powers)) for t in range(trials)]

    def run(job, m=model):
        pi, t = job
        return noisy_accuracy(m, feats, test.y, snr_scale(cfg, mode, powers[pi]), variance,
                              cfg.seed, pi, t, noise=s["noise"])

    workers = max(1, s["workers"])
    if workers > 1:
        # layers cache activations, so each worker gets its own model copy
        chunks = [jobs[i::workers] for i in range(workers)]
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda c: _run_chunk(run, c, copy.deepcopy(model)), chunks))
        done = {j: a for c, p in zip(chunks, parts) for j, a in zip(c, p)}
        results = [done[j] for j in jobs]
    else:
        results = [run(j) for j in jobs]
    acc = np.array(results).reshape(len(powers), trials)
    return SweepResult(mode, cfg.task, model.spec.k, model.spec.gamma / (2 * math.pi), powers, acc,
                       run_id(cfg), cfg.hash)


# ---------------------------------------------------------------------------
# linewidth search
# ---------------------------------------------------------------------------

@dataclass
class GammaSearchResult:
    best_over_2pi_hz: float
    table: list  # (gamma_over_2pi_hz, noisy val accuracy, noiseless val accuracy)


def gamma_search(cfg: ExperimentConfig, grid=None, data: TaskData | None = None) -> GammaSearchResult:
    """Train per linewidth, score on the validation split at the reference
    power; ties go to the smallest linewidth."""
    g = cfg["gamma_search"]
    grid = sorted(g["grid_over_2pi_hz"] if grid is None else grid)
    if not grid:
        raise ValueError("empty linewidth grid")
    data = load_task(cfg) if data is None else data
    epochs = g["epochs"] or None
    scale = snr_scale(cfg, cfg.mode, g["reference_power_w"])
    variance = noise_variance(cfg, cfg.mode)
    table = []
    for gamma_hz in grid:
        state, _ = run_training(cfg, data, gamma=2 * math.pi * gamma_hz, epochs=epochs)
        feats = features(state.model, data.val.x)
        noisy = np.mean([noisy_accuracy(state.model, feats, data.val.y, scale, variance,
                                        cfg.seed + 1, 0, t) for t in range(g["trials"])])
        clean = float(np.mean(state.model.predict_features(feats) == data.val.y))
        table.append((gamma_hz, float(noisy), clean))
    best = table[0]
    for row in table[1:]:
        if row[1] > best[1]:
            best = row
    return GammaSearchResult(best[0], table)


def select_gamma(cfg: ExperimentConfig, value_over_2pi_hz) -> ExperimentConfig:
    return cfg.with_updates(ring={"gamma_over_2pi_hz": float(value_over_2pi_hz)})


# ---------------------------------------------------------------------------
# assumption checks
# ---------------------------------------------------------------------------

# Reference values quoted alongside the default parameter set; the summary
# lists them next to the directly computed numbers.
QUOTED = {
    "rho1": 3.1e-7,
    "rho2": 3.1e-5,
    "p_shot_dbm": -25.0,
    "clearance_db": 45.0,
    "pump_photons_total": 6.2e5,
    "snr_mirp_db_range": (-59.0, 51.0),
    "snr_untrained_db_range": (-69.0, 51.0),
    "snr_conventional_db_range": (-74.0, 46.0),
}


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


def validation_summary(cfg: ExperimentConfig) -> dict:
    """Derived chain quantities, approximation ratios and PASS flags, plus the
    quoted-versus-computed discrepancies. Non-finite numbers become None."""
    rf, ring, hp, sr = cfg.rf_params(), cfg.ring_params(), cfg.homodyne_params(), cfg.sr_params()
    res = physics.resonator_derive(rf)
    t_rf = physics.rf_transmissivity(rf)
    t_n = physics.sr_noise_temperature(sr)
    p_noise = physics.sr_noise_power(t_n, sr.bandwidth)
    n_mode = cfg["ring"]["photons_per_mode"]
    rep = physics.validate_assumptions(ring, rf, hp, n_mode)
    powers = cfg["sweep"]["powers_w"]
    lo, hi = powers[0], powers[-1]

    def span_db(fn):
        return [_finite(physics.linear_to_db(fn(p))) if p > 0 else None for p in (lo, hi)]

    snr_m = span_db(lambda p: physics.snr_mirp(p, ring.beta, t_rf, ring.dt, res.omega))
    snr_r = span_db(lambda p: physics.snr_conventional(p, sr))
    pump_total = physics.pump_photons_per_bin(ring.pump_power, ring.tau, ring.omega)
    checks = {
        "rho1": {"per_mode": _finite(rep.rho1), "total": _finite(rep.rho1_total),
                 "limit": physics.RHO_LIMIT, "pass": rep.rho1_pass},
        "rho2": {"per_mode": _finite(rep.rho2), "total": _finite(rep.rho2_total),
                 "limit": physics.RHO_LIMIT, "pass": rep.rho2_pass},
        "clearance_db": {"used": _finite(cfg.clearance_db()), "computed": _finite(rep.clearance_db),
                         "limit": physics.CLEARANCE_LIMIT_DB,
                         # the flag follows the clearance the noise model uses; without LO
                         # power there is no shot-noise-limited detection at all
                         "pass": bool(cfg.clearance_db() > physics.CLEARANCE_LIMIT_DB and rep.p_shot_w > 0),
                         "computed_pass": rep.clearance_pass},
    }
    return {
        "derived": {
            "antenna_transmissivity": t_rf,
            "z_rf_ohm": res.z_rf,
            "q": res.q,
            "carrier_over_2pi_hz": res.omega / (2 * math.pi),
            "gamma_rf_over_2pi_hz": res.gamma / (2 * math.pi),
            "noise_temperature_k": t_n,
            "noise_power_w": p_noise,
            "beta": ring.beta,
            "photons_per_mode": n_mode,
            "photons_total": ring.modes * n_mode,
            "p_shot_w": rep.p_shot_w,
            "p_shot_dbm": _finite(physics.watt_to_dbm(rep.p_shot_w)) if rep.p_shot_w > 0 else None,
            "n_sig_at_1pw": physics.photons_per_bin(1e-12, t_rf, ring.dt, res.omega),
            "snr_mirp_db_range": snr_m,
            "snr_conventional_db_range": snr_r,
            "pump_photons_per_pulse": pump_total,
        },
        "rho1": checks["rho1"]["per_mode"],
        "rho2": checks["rho2"]["per_mode"],
        "clearance_db": checks["clearance_db"]["used"],
        "checks": checks,
        "pass": all(c["pass"] for c in checks.values()),
        "discrepancies": [
            {"quantity": "rho1 (per mode)", "quoted": QUOTED["rho1"], "computed": _finite(rep.rho1)},
            {"quantity": "rho1 (total)", "quoted": QUOTED["rho1"], "computed": _finite(rep.rho1_total)},
            {"quantity": "rho2 (per mode)", "quoted": QUOTED["rho2"], "computed": _finite(rep.rho2)},
            {"quantity": "rho2 (total)", "quoted": QUOTED["rho2"], "computed": _finite(rep.rho2_total)},
            {"quantity": "p_shot_dbm", "quoted": QUOTED["p_shot_dbm"],
             "computed": _finite(physics.watt_to_dbm(rep.p_shot_w)) if rep.p_shot_w > 0 else None},
            {"quantity": "clearance_db", "quoted": QUOTED["clearance_db"], "computed": _finite(rep.clearance_db)},
            {"quantity": "pump photons per pulse", "quoted": QUOTED["pump_photons_total"],
             "computed": _finite(pump_total)},
            {"quantity": "snr_mirp_db_range", "quoted": list(QUOTED["snr_mirp_db_range"]), "computed": snr_m},
            {"quantity": "snr_conventional_db_range", "quoted": list(QUOTED["snr_conventional_db_range"]),
             "computed": snr_r},
        ],
    }


def _fmt(v):
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return "n/a" if v is None else f"{v:.4g}"


def format_summary(summary: dict) -> str:
    d, c = summary["derived"], summary["checks"]
    flag = {True: "PASS", False: "FAIL"}

    def num(x):
        return "n/a" if x is None else f"{x:.4g}"

    lines = [
        f"antenna transmissivity T   {d['antenna_transmissivity']:.4f}",
        f"resonator Z_RF             {d['z_rf_ohm']:.4g} ohm",
        f"resonator Q                {d['q']:.4g}",
        f"carrier / 2pi              {d['carrier_over_2pi_hz']:.4g} Hz",
        f"RF linewidth / 2pi         {d['gamma_rf_over_2pi_hz']:.4g} Hz",
        f"receiver T_n               {d['noise_temperature_k']:.1f} K",
        f"receiver P_noise           {d['noise_power_w']:.4g} W",
        f"beta                       {d['beta']:.4g}",
        f"n_sig at 1 pW              {d['n_sig_at_1pw']:.4g}",
        f"rho1 per-mode / total      {num(c['rho1']['per_mode'])} / {num(c['rho1']['total'])}"
        f"  [{flag[c['rho1']['pass']]}]",
        f"rho2 per-mode / total      {num(c['rho2']['per_mode'])} / {num(c['rho2']['total'])}"
        f"  [{flag[c['rho2']['pass']]}]",
        f"clearance used / computed  {num(c['clearance_db']['used'])} / {num(c['clearance_db']['computed'])} dB"
        f"  [{flag[c['clearance_db']['pass']]}, computed {flag[c['clearance_db']['computed_pass']]}]",
        f"overall                    {flag[summary['pass']]}",
        "quoted vs computed:",
    ]
    for row in summary["discrepancies"]:
        lines.append(f"  {row['quantity']:<28} {_fmt(row['quoted'])}  vs  {_fmt(row['computed'])}")
    return "\n".join(lines)
