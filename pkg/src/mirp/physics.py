"""Closed-form physics of the micro-ring perceptron sensing chain.

Covers the antenna/RLC transduction chain, the super-heterodyne noise
cascade, the homodyne measurement SNR, the discrete damped-convolution
kernel of the ring and the measurement-noise model applied to its readouts.
All quantities are SI; angular frequencies are rad/s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import constants
from scipy.signal import lfilter

HBAR = constants.hbar
K_B = constants.k
Q_E = constants.e
Z_AIR = 377.0


class PhysicsDomainError(ValueError):
    pass


class DegenerateWeightsError(ValueError):
    pass


class ShapeError(ValueError):
    pass


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


def dbm_to_watt(dbm):
    return 1e-3 * db_to_linear(dbm)


def watt_to_dbm(w):
    return linear_to_db(np.asarray(w, dtype=float) / 1e-3)


# ---------------------------------------------------------------------------
# parameter records
# ---------------------------------------------------------------------------

CARRIER_HZ = "hz"
CARRIER_RAD_S = "rad_s"


@dataclass(frozen=True)
class RfChainParams:
    """Antenna + RLC resonator.

    ``carrier_convention="hz"`` reads 1/sqrt(L C) as the carrier frequency
    in hertz (10 GHz for the default part values); ``"rad_s"`` reads it as
    an angular frequency.
    """

    c_rf: float = 4e-12
    l_rf: float = 2.5e-9
    r_rf: float = 50.0
    z_air: float = Z_AIR
    carrier_convention: str = CARRIER_HZ

    def __post_init__(self):
        for name in ("c_rf", "l_rf", "r_rf", "z_air"):
            if not getattr(self, name) > 0:
                raise PhysicsDomainError(f"{name} must be positive, got {getattr(self, name)}")
        if self.carrier_convention not in (CARRIER_HZ, CARRIER_RAD_S):
            raise PhysicsDomainError(f"unknown carrier convention {self.carrier_convention!r}")


@dataclass(frozen=True)
class RingParams:
    gamma: float = 2 * math.pi * 2e9  # ring linewidth
    g: float = 2 * math.pi * 1e3  # three-wave-mixing coupling
    beta: float = 0.0118
    n_b: float = 99.0
    dt: float = 0.5e-9
    tau: float = 50e-12
    modes: int = 16
    omega: float = 2 * math.pi * 193e12
    delta_omega: float = 2 * math.pi * 100e9
    pump_power: float = 10e-3

    def __post_init__(self):
        if not (self.gamma >= 0 and self.dt > 0 and self.tau > 0):
            raise PhysicsDomainError("gamma must be >= 0, dt and tau positive")
        if self.tau > self.dt / 5:
            raise PhysicsDomainError(f"pulse width {self.tau} s is not << bin spacing {self.dt} s")
        if not 0 < self.beta < 1:
            raise PhysicsDomainError(f"beta must lie in (0, 1), got {self.beta}")
        if self.modes < 1:
            raise PhysicsDomainError("mode count must be >= 1")
        if self.n_b < 0:
            raise PhysicsDomainError("thermal occupation must be >= 0")


@dataclass(frozen=True)
class HomodyneParams:
    p_lo: float = 25e-3
    p_hr: float = float(dbm_to_watt(-70.0))
    z_hr: float = 50.0
    gain: float = 2.8e3
    eta: float = 0.99
    bandwidth: float = 2e9
    omega: float = 2 * math.pi * 193e12

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise PhysicsDomainError(f"quantum efficiency must lie in (0, 1], got {self.eta}")
        if self.p_lo < 0:
            raise PhysicsDomainError("LO power must be >= 0")
        for name in ("p_hr", "z_hr", "gain", "bandwidth", "omega"):
            if not getattr(self, name) > 0:
                raise PhysicsDomainError(f"{name} must be positive")


@dataclass(frozen=True)
class SrParams:
    """Super-heterodyne receiver. Gain, figures and losses are in dB."""

    gain_db: float = 20.0
    nf_rf_db: float = 3.0
    line_loss_db: float = 1.5
    mixer_loss_db: float = 7.0
    mixer_nf_db: float = 6.0
    if_nf_db: float = 2.0
    bandwidth: float = 2e9
    t_room: float = 300.0

    def __post_init__(self):
        if self.line_loss_db < 0 or self.mixer_loss_db < 0:
            raise PhysicsDomainError("losses must be >= 0 dB")
        if self.gain_db < 0:
            raise PhysicsDomainError("RF gain must be >= 1 (0 dB)")
        if not (self.bandwidth > 0 and self.t_room > 0):
            raise PhysicsDomainError("bandwidth and room temperature must be positive")


@dataclass
class EnvelopeSignal:
    """One input record: J channels of M envelope samples."""

    samples: np.ndarray
    label: int = -1

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]


@dataclass
class WeightBank:
    """Programmable pump amplitudes, shape (J, L, M), plus the forward-time
    linewidth and readout stride."""

    weights: np.ndarray
    gamma: float
    k: int = 1

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 3:
            raise ShapeError(f"weights must be (J, L, M), got shape {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)):
            raise PhysicsDomainError("weights must be finite")
        if self.k < 1:
            raise PhysicsDomainError("stride k must be >= 1")

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.weights ** 2)))


@dataclass
class FeatureMap:
    """Physical-layer output: (channels, R) readouts.

    ``amplitude`` is the per-readout scale a = 2 sqrt(beta n_sig) for the
    optical modes, and sqrt(SNR) of the receiver for the conventional mode
    (whose ``values`` stay in envelope units).
    """

    values: np.ndarray
    amplitude: float
    mode: str = "mirp"
    noisy: bool = False

    @property
    def readouts(self) -> int:
        return self.values.shape[-1]


# ---------------------------------------------------------------------------
# transduction chain
# ---------------------------------------------------------------------------

def antenna_transmissivity(z_rf, z_air=Z_AIR):
    if not (z_rf > 0 and z_air > 0):
        raise PhysicsDomainError("impedances must be positive")
    return 4.0 * z_rf * z_air / (z_rf + z_air) ** 2


class ResonatorDerived(NamedTuple):
    omega: float  # carrier, rad/s
    z_rf: float
    q: float
    gamma: float  # RF resonator loss rate, rad/s


def resonator_derive(p: RfChainParams) -> ResonatorDerived:
    z_rf = math.sqrt(p.l_rf / p.c_rf)
    q = z_rf / p.r_rf
    inv_sqrt_lc = 1.0 / math.sqrt(p.l_rf * p.c_rf)
    omega = 2 * math.pi * inv_sqrt_lc if p.carrier_convention == CARRIER_HZ else inv_sqrt_lc
    return ResonatorDerived(omega=omega, z_rf=z_rf, q=q, gamma=omega / q)


def rf_transmissivity(p: RfChainParams) -> float:
    return antenna_transmissivity(resonator_derive(p).z_rf, p.z_air)


# ---------------------------------------------------------------------------
# SNR models
# ---------------------------------------------------------------------------

def sr_noise_temperature(p: SrParams) -> float:
    """Effective input noise temperature of the super-heterodyne cascade."""
    t0 = p.t_room
    line = float(db_to_linear(p.line_loss_db))
    mixer = float(db_to_linear(p.mixer_loss_db))
    gain = float(db_to_linear(p.gain_db))
    t_rf = (float(db_to_linear(p.nf_rf_db)) - 1) * t0
    t_mix = (float(db_to_linear(p.mixer_nf_db)) - 1) * t0
    t_if = (float(db_to_linear(p.if_nf_db)) - 1) * t0
    return t0 + (line - 1) * t0 + line * (t_rf + t_mix / gain + mixer * t_if / gain)


def sr_noise_power(t_n, bandwidth):
    if t_n < 0 or bandwidth < 0:
        raise PhysicsDomainError("noise temperature and bandwidth must be non-negative")
    return K_B * t_n * bandwidth


def snr_conventional(p_rf, p: SrParams):
    if np.any(np.asarray(p_rf) < 0):
        raise PhysicsDomainError("RF power must be >= 0")
    return np.asarray(p_rf, dtype=float) / sr_noise_power(sr_noise_temperature(p), p.bandwidth)


def photons_per_bin(p_rf, transmissivity, dt, omega):
    """Mean signal photon number per time bin, P T dt / (hbar Omega)."""
    if np.any(np.asarray(p_rf) < 0):
        raise PhysicsDomainError("RF power must be >= 0")
    return np.asarray(p_rf, dtype=float) * transmissivity * dt / (HBAR * omega)


def snr_mirp(p_rf, beta, transmissivity, dt, omega):
    if not 0 < beta < 1:
        raise PhysicsDomainError("beta must lie in (0, 1)")
    return 4.0 * beta * photons_per_bin(p_rf, transmissivity, dt, omega)


def snr_untrained(p_rf, beta, transmissivity, dt, omega):
    # The CW pump carries the same rms field, so the closed form is shared.
    return snr_mirp(p_rf, beta, transmissivity, dt, omega)


def beta_from_params(mu, transmissivity, g, w_rms, gamma_rf):
    return 4.0 * mu ** 2 * transmissivity * g ** 2 * w_rms ** 2 / gamma_rf ** 2


def coupling_from_beta(beta, transmissivity, g, w_rms, gamma_rf):
    """Inverse of :func:`beta_from_params`: the transduction coupling rate."""
    return math.sqrt(beta * gamma_rf ** 2 / (4.0 * transmissivity * g ** 2 * w_rms ** 2))


# ---------------------------------------------------------------------------
# ring kernel
# ---------------------------------------------------------------------------

def decay_factor(gamma, dt):
    return math.exp(-gamma * dt / 2.0)


def readout_count(m, k):
    return m // k


def damped_readout(products, decay, k):
    """Stream s[m] = decay * s[m-1] + p[m] along the last axis and read out
    at 1-based sample indices k, 2k, ..., floor(M/k) k."""
    products = np.asarray(products, dtype=np.float64)
    m = products.shape[-1]
    r = readout_count(m, k)
    if r < 1:
        raise ShapeError(f"stride {k} exceeds record length {m}")
    state = lfilter([1.0], [1.0, -decay], products, axis=-1)
    return state[..., k - 1:r * k:k]


def normalized_weights(weights):
    weights = np.asarray(weights, dtype=np.float64)
    rms = float(np.sqrt(np.mean(weights ** 2)))
    if rms == 0.0:
        raise DegenerateWeightsError("pump weights are identically zero")
    return weights / rms, rms


def readout_amplitude(beta, n_sig):
    return 2.0 * math.sqrt(beta * n_sig)


def _check_shapes(x: EnvelopeSignal, bank: WeightBank):
    j, _, m = bank.weights.shape
    if x.samples.shape != (j, m):
        raise ShapeError(f"signal shape {x.samples.shape} does not match weight bank (J={j}, M={m})")
    if bank.k > m:
        raise ShapeError(f"stride {bank.k} exceeds record length {m}")


def mirp_forward(x: EnvelopeSignal, bank: WeightBank, ring: RingParams, n_sig) -> FeatureMap:
    _check_shapes(x, bank)
    w_hat, _ = normalized_weights(bank.weights)
    d = decay_factor(bank.gamma, ring.dt)
    sums = damped_readout(w_hat * x.samples[:, None, :], d, bank.k)
    j, l, r = sums.shape
    a = readout_amplitude(ring.beta, n_sig)
    return FeatureMap(a * sums.reshape(j * l, r), amplitude=a, mode="mirp")


def untrained_forward(x: EnvelopeSignal, ring: RingParams, n_sig, k=1, gamma=None) -> FeatureMap:
    """CW pump of the same rms field: one readout channel per input channel."""
    gamma = ring.gamma if gamma is None else gamma
    if k > x.length:
        raise ShapeError(f"stride {k} exceeds record length {x.length}")
    a = readout_amplitude(ring.beta, n_sig)
    sums = damped_readout(x.samples, decay_factor(gamma, ring.dt), k)
    return FeatureMap(a * sums, amplitude=a, mode="untrained")


def decimate(samples, k, average=False):
    samples = np.asarray(samples, dtype=np.float64)
    m = samples.shape[-1]
    r = readout_count(m, k)
    if r < 1:
        raise ShapeError(f"stride {k} exceeds record length {m}")
    if average:
        return samples[..., :r * k].reshape(*samples.shape[:-1], r, k).mean(axis=-1)
    return samples[..., k - 1:r * k:k]


def conventional_forward(x: EnvelopeSignal, sr: SrParams, p_rf, k=1, average=False) -> FeatureMap:
    snr = float(snr_conventional(p_rf, sr))
    return FeatureMap(decimate(x.samples, k, average), amplitude=math.sqrt(snr), mode="conventional")


# ---------------------------------------------------------------------------
# measurement noise
# ---------------------------------------------------------------------------

def quadrature_noise_variance(clearance_db):
    """Unit shot-noise quadrature variance plus the electronic floor."""
    return 1.0 + 10.0 ** (-clearance_db / 10.0)


def add_readout_noise(values, snr_scale, rng: np.random.Generator, variance=1.0):
    """values + Normal(0, variance) / sqrt(snr_scale); infinite scale is noiseless."""
    if not snr_scale > 0:
        raise PhysicsDomainError(f"SNR scale must be positive for noisy evaluation, got {snr_scale}")
    values = np.asarray(values, dtype=np.float64)
    if math.isinf(snr_scale):
        return values.copy()
    return values + rng.standard_normal(values.shape) * math.sqrt(variance / snr_scale)


def apply_measurement_noise(fm: FeatureMap, snr_scale, rng: np.random.Generator,
                            clearance_db: float = 45.0) -> FeatureMap:
    """Homodyne readout noise for optical modes, receiver noise for the
    conventional mode.

    Optical modes: the readouts are divided by their amplitude (post-detection
    gain) and unit-variance-ish quadrature noise scaled by 1/sqrt(4 beta n_sig)
    is added; ``snr_scale`` is that per-bin 4 beta n_sig. Conventional mode:
    ``snr_scale`` is the receiver SNR.
    """
    if fm.mode == "conventional":
        out = add_readout_noise(fm.values, snr_scale, rng, 1.0)
    else:
        if fm.amplitude == 0:
            raise PhysicsDomainError("feature amplitude is zero; nothing to normalize")
        out = add_readout_noise(fm.values / fm.amplitude, snr_scale, rng,
                                quadrature_noise_variance(clearance_db))
    return FeatureMap(out, amplitude=1.0, mode=fm.mode, noisy=not math.isinf(snr_scale))


def homodyne_shot_noise(hp: HomodyneParams):
    """LO shot-noise power at the detector and its clearance over the
    electronic noise, in dB."""
    responsivity = hp.eta * Q_E / (HBAR * hp.omega)
    i_ph = responsivity * hp.p_lo
    p_shot = 2.0 * Q_E * hp.gain * i_ph * hp.bandwidth / hp.z_hr
    return p_shot, float(linear_to_db(p_shot / hp.p_hr))


# ---------------------------------------------------------------------------
# approximation checks
# ---------------------------------------------------------------------------

RHO_LIMIT = 1e-2
CLEARANCE_LIMIT_DB = 20.0


@dataclass
class ValidationReport:
    rho1: float
    rho2: float
    rho1_total: float
    rho2_total: float
    clearance_db: float
    photons_per_mode: float
    photons_total: float
    p_shot_w: float
    extra: dict = field(default_factory=dict)

    @property
    def rho1_pass(self):
        return self.rho1 < RHO_LIMIT and self.rho1_total < RHO_LIMIT

    @property
    def rho2_pass(self):
        return self.rho2 < RHO_LIMIT and self.rho2_total < RHO_LIMIT

    @property
    def clearance_pass(self):
        return self.clearance_db > CLEARANCE_LIMIT_DB

    @property
    def passed(self):
        return self.rho1_pass and self.rho2_pass and self.clearance_pass


def validate_assumptions(ring: RingParams, rf: RfChainParams, hp: HomodyneParams,
                         w_rms_sq: float, gamma=None) -> ValidationReport:
    """Weak-coupling and strong-LO ratios.

    ``w_rms_sq`` is the per-mode mean pump photon number; the ratios are also
    evaluated with the total over all L modes since both readings of the
    photon budget are in use.
    """
    gamma = ring.gamma if gamma is None else gamma
    gamma_rf = resonator_derive(rf).gamma
    total = ring.modes * w_rms_sq

    def rho1(n):
        return 2.0 * ring.g ** 2 * n / (gamma_rf * gamma) if gamma > 0 else math.inf

    def rho2(n):
        return ring.g ** 2 * n * (2 * ring.n_b + 1) / gamma ** 2 if gamma > 0 else math.inf

    p_shot, clearance = homodyne_shot_noise(hp)
    return ValidationReport(
        rho1=rho1(w_rms_sq), rho2=rho2(w_rms_sq),
        rho1_total=rho1(total), rho2_total=rho2(total),
        clearance_db=clearance, photons_per_mode=w_rms_sq, photons_total=total,
        p_shot_w=p_shot,
    )


def pump_photons_per_bin(pump_power, tau, omega):
    """Pump photons in one pulse, P_W tau / (hbar omega), summed over modes."""
    return pump_power * tau / (HBAR * omega)
