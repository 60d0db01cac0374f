"""Experiment configuration: TOML file + ``section.key=value`` overrides."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import physics
from .datasets import TASKS

DEFAULT_POWERS = [10.0 ** e for e in range(-18, -5)]  # 1 aW .. 1 uW

DEFAULTS = {
    "experiment": {"task": "mnist", "mode": "mirp", "seed": 0, "name": ""},
    "data": {
        "dir": "",
        "source": "auto",  # files | synthetic | auto
        "train_records": 8000,
        "val_records": 1000,
        "test_records": 2000,
        "synth_snr_db": 25.0,
    },
    "rf": {"c_rf": 4e-12, "l_rf": 2.5e-9, "r_rf": 50.0, "z_air": 377.0, "carrier_convention": "hz"},
    "ring": {
        "gamma_over_2pi_hz": 2e9,
        "g_over_2pi_hz": 1e3,
        "beta": 0.0118,
        "n_b": 99.0,
        "dt": 0.5e-9,
        "tau": 50e-12,
        "modes": 16,
        "omega_over_2pi_hz": 193e12,
        "delta_omega_over_2pi_hz": 100e9,
        "pump_power_w": 10e-3,
        "photons_per_mode": 3.9e4,
    },
    "homodyne": {
        "p_lo_w": 25e-3,
        "p_hr_dbm": -70.0,
        "z_hr_ohm": 50.0,
        "gain_ohm": 2.8e3,
        "eta": 0.99,
        "bandwidth_hz": 0.0,  # 0: Nyquist rate 1/dt
        "clearance": "quoted",  # quoted | computed
        "clearance_db": 45.0,
    },
    "sr": {
        "gain_db": 20.0,
        "nf_rf_db": 3.0,
        "line_loss_db": 1.5,
        "mixer_loss_db": 7.0,
        "mixer_nf_db": 6.0,
        "if_nf_db": 2.0,
        "bandwidth_hz": 2e9,
        "t_room_k": 300.0,
    },
    "model": {"k": 0, "scale": 4, "train_gamma": False, "average_decimation": False},  # k = 0: task default
    "train": {"epochs": 20, "batch": 64, "lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
              "patience": 5},
    "gamma_search": {"grid_over_2pi_hz": [2e6, 2e7, 2e8, 2e9, 2e10], "reference_power_w": 1e-12,
                     "trials": 3, "epochs": 0},
    "sweep": {"powers_w": DEFAULT_POWERS, "trials": 10, "noise": True, "workers": 1},
    "report": {"svg": True, "png": False},
}

# sections that do not affect a trained checkpoint
EVAL_ONLY = ("sweep", "report", "gamma_search")


class ConfigError(ValueError):
    pass


def _coerce(section, key, value, default):
    where = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                                  for v in value):
            raise ConfigError(f"{where} must be a list of numbers")
        return [float(v) for v in value]
    raise ConfigError(f"unsupported default type at {where}")


def merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for section, values in update.items():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in values.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            out[section][key] = _coerce(section, key, value, DEFAULTS[section][key])
    return out


def parse_override(text: str) -> dict:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    path, raw = text.split("=", 1)
    if path.count(".") != 1:
        raise ConfigError(f"override key {path!r} must be section.key")
    section, key = path.strip().split(".")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return {section: {key: value}}


def parse_powers(text: str) -> list[float]:
    """Comma-separated watts, or dBm values suffixed with 'dBm'."""
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            if tok.lower().endswith("dbm"):
                out.append(float(physics.dbm_to_watt(float(tok[:-3]))))
            else:
                out.append(float(tok))
        except ValueError as exc:
            raise ConfigError(f"bad power value {tok!r}") from exc
    return out


class ExperimentConfig:
    def __init__(self, data: dict | None = None):
        self.data = merge(DEFAULTS, data or {})
        self.validate()

    @classmethod
    def load(cls, path=None, overrides=()):
        raw = {}
        if path is not None:
            try:
                raw = tomllib.loads(Path(path).read_text())
            except FileNotFoundError as exc:
                raise ConfigError(f"config file {path} not found") from exc
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        cfg = merge(DEFAULTS, raw)
        for ov in overrides:
            cfg = merge(cfg, parse_override(ov))
        return cls(cfg)

    def with_updates(self, **sections) -> "ExperimentConfig":
        return ExperimentConfig(merge(self.data, sections))

    def __getitem__(self, section):
        return self.data[section]

    def validate(self):
        d = self.data
        if d["experiment"]["task"] not in TASKS:
            raise ConfigError(f"unknown task {d['experiment']['task']!r}; expected one of {sorted(TASKS)}")
        if d["experiment"]["mode"] not in ("mirp", "untrained", "conventional"):
            raise ConfigError(f"unknown mode {d['experiment']['mode']!r}")
        if d["data"]["source"] not in ("files", "synthetic", "auto"):
            raise ConfigError("data.source must be files, synthetic or auto")
        if d["homodyne"]["clearance"] not in ("quoted", "computed"):
            raise ConfigError("homodyne.clearance must be quoted or computed")
        if d["model"]["k"] < 0:
            raise ConfigError("model.k must be >= 1 (or 0 for the task default)")
        powers = d["sweep"]["powers_w"]
        if not powers:
            raise ConfigError("sweep.powers_w is empty")
        if any(b <= a for a, b in zip(powers, powers[1:])) or powers[0] < 0:
            raise ConfigError("sweep.powers_w must be non-negative and strictly increasing")
        if d["sweep"]["trials"] < 1:
            raise ConfigError("sweep.trials must be >= 1")
        if not d["gamma_search"]["grid_over_2pi_hz"]:
            raise ConfigError("gamma_search.grid_over_2pi_hz is empty")
        for section in ("train", "data"):
            for key, value in d[section].items():
                if isinstance(value, (int, float)) and not isinstance(value, bool) and value < 0:
                    raise ConfigError(f"{section}.{key} must be >= 0")
        try:
            self.rf_params(), self.ring_params(), self.homodyne_params(), self.sr_params()
        except physics.PhysicsDomainError as exc:
            raise ConfigError(str(exc)) from exc

    # -- derived views -----------------------------------------------------

    @property
    def task(self):
        return self.data["experiment"]["task"]

    @property
    def mode(self):
        return self.data["experiment"]["mode"]

    @property
    def seed(self):
        return self.data["experiment"]["seed"]

    @property
    def k(self):
        return self.data["model"]["k"] or TASKS[self.task][3]

    @property
    def gamma(self):
        return 2 * math.pi * self.data["ring"]["gamma_over_2pi_hz"]

    def rf_params(self):
        r = self.data["rf"]
        return physics.RfChainParams(r["c_rf"], r["l_rf"], r["r_rf"], r["z_air"], r["carrier_convention"])

    def ring_params(self):
        r = self.data["ring"]
        two_pi = 2 * math.pi
        return physics.RingParams(
            gamma=two_pi * r["gamma_over_2pi_hz"], g=two_pi * r["g_over_2pi_hz"], beta=r["beta"],
            n_b=r["n_b"], dt=r["dt"], tau=r["tau"], modes=r["modes"],
            omega=two_pi * r["omega_over_2pi_hz"], delta_omega=two_pi * r["delta_omega_over_2pi_hz"],
            pump_power=r["pump_power_w"])

    def homodyne_params(self):
        h = self.data["homodyne"]
        bw = h["bandwidth_hz"] or 1.0 / self.data["ring"]["dt"]
        return physics.HomodyneParams(
            p_lo=h["p_lo_w"], p_hr=float(physics.dbm_to_watt(h["p_hr_dbm"])), z_hr=h["z_hr_ohm"],
            gain=h["gain_ohm"], eta=h["eta"], bandwidth=bw,
            omega=2 * math.pi * self.data["ring"]["omega_over_2pi_hz"])

    def sr_params(self):
        s = self.data["sr"]
        return physics.SrParams(s["gain_db"], s["nf_rf_db"], s["line_loss_db"], s["mixer_loss_db"],
                                s["mixer_nf_db"], s["if_nf_db"], s["bandwidth_hz"], s["t_room_k"])

    def clearance_db(self):
        h = self.data["homodyne"]
        if h["clearance"] == "computed":
            return physics.homodyne_shot_noise(self.homodyne_params())[1]
        return h["clearance_db"]

    # -- hashing -----------------------------------------------------------

    def canonical(self, exclude=()) -> str:
        body = {s: v for s, v in self.data.items() if s not in exclude}
        body = copy.deepcopy(body)
        body.get("data", {}).pop("dir", None)
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @property
    def train_hash(self) -> str:
        return hashlib.sha256(self.canonical(EVAL_ONLY).encode()).hexdigest()

    def to_toml(self) -> str:
        lines = []
        for section, values in self.data.items():
            lines.append(f"[{section}]")
            for key, value in values.items():
                lines.append(f"{key} = {_toml_value(value)}")
            lines.append("")
        return "\n".join(lines)


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)
