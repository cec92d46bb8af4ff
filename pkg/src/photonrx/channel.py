"""Physical-parameter mapping, slot sampling, and likelihood kernels.

Maps transmitter/detector hardware parameters to the dimensionless per-slot
photon statistics the estimator works with, and provides random sampling
plus log-likelihood evaluation for the three supported front ends.

Power mapping (documented here because results depend on it):
``transmit_power_dbw`` is the *average* optical transmit power.  Under OOK
half the slots carry a pulse, so the pulse power is 2*P and a slot lasts
1/Rb.  Under M-PPM exactly one slot in M carries the pulse (peak M*P) and a
slot lasts log2(M)/(M*Rb), which keeps the bit rate at Rb.  With
q = eta * P * wavelength / (L * h * c * Rb), the detected mean photon count
in a pulse slot is therefore

    OOK:   lambda_sig = 2 * q
    M-PPM: lambda_sig = log2(M) * q

Background photons and thermal noise accumulate over one slot, so
lambda_b and the thermal variance scale with the slot duration.  The
background rate is treated as an already-detected photoelectron rate (no
extra quantum-efficiency factor), which gives lambda_b = 0.02 at Rb = 1
Mbps for the default 20 kHz rate.

PMT shot noise uses the spreading-factor model sigma^2 = xi * A^2; APD shot
noise uses the McIntyre excess-noise factor F = gamma*A + (2 - 1/A)(1 -
gamma) with sigma^2 = A^2 (F - 1).  Thermal noise is the one-sided Johnson
PSD 4 kB T / RL integrated over the slot.  All noise sigmas are
electron-normalized (divided by the electron charge).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import gammaln, logsumexp

from .moments import DetectorParams

__all__ = [
    "PLANCK",
    "LIGHT_SPEED",
    "BOLTZMANN",
    "ELECTRON_CHARGE",
    "ReceiverKind",
    "Modulation",
    "PhysicalConfig",
    "ChannelParams",
    "average_photon_rate",
    "excess_noise_factor",
    "derive_channel_params",
    "sample_pc",
    "sample_pg",
    "pc_log_likelihood",
    "pg_log_likelihood",
]

PLANCK = 6.62606957e-34
LIGHT_SPEED = 2.99792458e8
BOLTZMANN = 1.3806505e-23
ELECTRON_CHARGE = 1.602e-19


class ReceiverKind(str, Enum):
    PC = "pc"
    PMT = "pmt"
    APD = "apd"


@dataclass(frozen=True)
class Modulation:
    """Slot-level modulation: OOK or M-ary pulse position."""

    kind: str
    order: int = 2

    def __post_init__(self):
        if self.kind not in ("ook", "ppm"):
            raise ValueError(f"kind must be 'ook' or 'ppm', got {self.kind!r}")
        if self.order != int(self.order) or self.order < 2:
            raise ValueError(f"order must be an integer >= 2, got {self.order!r}")
        if self.kind == "ook" and self.order != 2:
            raise ValueError("OOK has exactly two slot states (order 2)")

    @classmethod
    def ook(cls) -> "Modulation":
        return cls("ook", 2)

    @classmethod
    def ppm(cls, order: int) -> "Modulation":
        return cls("ppm", order)

    @classmethod
    def parse(cls, text) -> "Modulation":
        if isinstance(text, Modulation):
            return text
        label = str(text).strip().lower()
        if label == "ook":
            return cls.ook()
        if label.startswith("ppm"):
            try:
                return cls.ppm(int(label[3:]))
            except ValueError:
                pass
        raise ValueError(f"cannot parse modulation {text!r}; expected 'ook' or 'ppm<M>'")

    @property
    def slot_prior(self) -> float:
        return 1.0 / self.order

    @property
    def pulse_power_factor(self) -> float:
        # peak/average power ratio: duty cycle 1/2 for OOK, 1/M for PPM
        return 2.0 if self.kind == "ook" else float(self.order)

    @property
    def slot_time_factor(self) -> float:
        # slot duration in units of the bit duration 1/Rb
        if self.kind == "ook":
            return 1.0
        return math.log2(self.order) / self.order


@dataclass(frozen=True)
class PhysicalConfig:
    """Hardware and link parameters; defaults follow the reference setup."""

    transmit_power_dbw: float = 0.0
    quantum_efficiency: float = 0.06
    path_loss: float = 4e10
    bit_rate: float = 1e6
    wavelength: float = 250e-9
    background_rate: float = 2e4
    temperature: float = 300.0
    load_resistance: float = 5e6
    pmt_spreading: float = 0.10
    apd_ionization: float = 0.028
    gain: float = 100.0
    receiver_kind: ReceiverKind = ReceiverKind.PC

    def __post_init__(self):
        checks = [
            (math.isfinite(self.transmit_power_dbw), "transmit_power_dbw finite"),
            (0.0 < self.quantum_efficiency <= 1.0, "quantum_efficiency in (0, 1]"),
            (self.path_loss > 0, "path_loss > 0"),
            (self.bit_rate > 0, "bit_rate > 0"),
            (self.wavelength > 0, "wavelength > 0"),
            (self.background_rate >= 0, "background_rate >= 0"),
            (self.temperature > 0, "temperature > 0"),
            (self.load_resistance > 0, "load_resistance > 0"),
            (self.pmt_spreading >= 0, "pmt_spreading >= 0"),
            (0.0 <= self.apd_ionization <= 1.0, "apd_ionization in [0, 1]"),
            (self.gain >= 1.0, "gain >= 1"),
        ]
        for ok, what in checks:
            if not ok:
                raise ValueError(f"PhysicalConfig requires {what}")
        object.__setattr__(self, "receiver_kind", ReceiverKind(self.receiver_kind))


@dataclass(frozen=True)
class ChannelParams:
    """Dimensionless per-slot channel statistics for K receivers."""

    signal_means: tuple
    background_mean: float
    detector: DetectorParams
    receiver_kind: ReceiverKind

    def __post_init__(self):
        means = tuple(float(v) for v in self.signal_means)
        if len(means) < 1:
            raise ValueError("need at least one receiver")
        for v in means:
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"signal means must be finite and >= 0, got {v!r}")
        object.__setattr__(self, "signal_means", means)
        if not math.isfinite(self.background_mean) or self.background_mean < 0:
            raise ValueError(f"background_mean must be finite and >= 0, got {self.background_mean!r}")
        object.__setattr__(self, "receiver_kind", ReceiverKind(self.receiver_kind))

    @property
    def k_receivers(self) -> int:
        return len(self.signal_means)

    @classmethod
    def photon_counting(cls, signal_mean, background_mean: float, k_receivers: int | None = None) -> "ChannelParams":
        """Photon-counting channel; signal_mean may be a scalar (shared) or a vector."""
        if np.isscalar(signal_mean):
            means = (float(signal_mean),) * (k_receivers or 1)
        else:
            means = tuple(float(v) for v in signal_mean)
        return cls(means, float(background_mean), DetectorParams(), ReceiverKind.PC)

    @classmethod
    def mixture(cls, kind, signal_mean, background_mean: float, detector: DetectorParams,
                k_receivers: int | None = None) -> "ChannelParams":
        """PMT/APD channel with an explicit DetectorParams."""
        if np.isscalar(signal_mean):
            means = (float(signal_mean),) * (k_receivers or 1)
        else:
            means = tuple(float(v) for v in signal_mean)
        return cls(means, float(background_mean), detector, ReceiverKind(kind))


def average_photon_rate(phys: PhysicalConfig) -> float:
    """Detected photons per bit duration at the average transmit power."""
    power = 10.0 ** (phys.transmit_power_dbw / 10.0)
    photon_energy = PLANCK * LIGHT_SPEED / phys.wavelength
    return phys.quantum_efficiency * power / (phys.path_loss * photon_energy * phys.bit_rate)


def excess_noise_factor(gain: float, ionization: float) -> float:
    """McIntyre excess-noise factor F = gamma*A + (2 - 1/A)(1 - gamma)."""
    return ionization * gain + (2.0 - 1.0 / gain) * (1.0 - ionization)


def derive_channel_params(
    phys: PhysicalConfig, k_receivers: int, modulation: Modulation | str = "ook"
) -> ChannelParams:
    """Map physical parameters to per-slot photon statistics (see module docstring)."""
    if k_receivers < 1:
        raise ValueError("k_receivers must be >= 1")
    mod = Modulation.parse(modulation)
    slot = mod.slot_time_factor
    lam_sig = average_photon_rate(phys) * mod.pulse_power_factor * slot
    lam_b = phys.background_rate / phys.bit_rate * slot
    thermal = math.sqrt(
        4.0 * BOLTZMANN * phys.temperature * slot / (phys.load_resistance * phys.bit_rate)
    ) / ELECTRON_CHARGE
    kind = phys.receiver_kind
    if kind == ReceiverKind.PC:
        det = DetectorParams()
    elif kind == ReceiverKind.PMT:
        shot = math.sqrt(phys.pmt_spreading) * phys.gain
        det = DetectorParams(gain=phys.gain, shot_sigma=shot, thermal_sigma=thermal)
    else:
        excess = excess_noise_factor(phys.gain, phys.apd_ionization)
        shot = phys.gain * math.sqrt(excess - 1.0)
        det = DetectorParams(gain=phys.gain, shot_sigma=shot, thermal_sigma=thermal)
    for name, value in (("lambda_sig", lam_sig), ("lambda_b", lam_b),
                        ("shot_sigma", det.shot_sigma), ("thermal_sigma", det.thermal_sigma)):
        if not math.isfinite(value):
            raise ValueError(f"derived {name} is not finite for {phys!r}")
    return ChannelParams((lam_sig,) * k_receivers, lam_b, det, kind)


def sample_pc(lam, rng: np.random.Generator, size=None):
    """Poisson(lam) photon-count draw(s)."""
    return rng.poisson(lam, size=size)


def sample_pg(lam, det: DetectorParams, rng: np.random.Generator, size=None):
    """Amplified-detector draw(s): count c ~ Poisson(lam), then Normal(c*A, c*sigma^2 + sigma0^2)."""
    counts = rng.poisson(lam, size=size)
    sd = np.sqrt(counts * det.shot_sigma**2 + det.thermal_sigma**2)
    noise = rng.standard_normal(size=np.shape(counts)) * sd
    return counts * det.gain + noise


def pc_log_likelihood(z, lam):
    """Poisson log pmf at count z; lam = 0 gives 0 at z = 0 and -inf otherwise."""
    z = np.asarray(z, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("lam must be >= 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = z * np.log(lam) - lam - gammaln(z + 1.0)
        ll = np.where(lam > 0, ll, np.where(z == 0, 0.0, -np.inf))
    return ll if ll.ndim else float(ll)


def pg_log_likelihood(z, lam, det: DetectorParams, terms: int = 50):
    """Truncated Poisson-Gaussian mixture log density, log-sum-exp stabilized.

    Sums the first ``terms`` Poisson branches; the default 50 is adequate
    for lam up to roughly 20.  Truncation adequacy is the caller's concern.
    """
    if terms < 1:
        raise ValueError("terms must be >= 1")
    lam = float(lam)
    if not math.isfinite(lam) or lam < 0:
        raise ValueError(f"lam must be finite and >= 0, got {lam!r}")
    if det.thermal_sigma <= 0:
        raise ValueError("pg_log_likelihood needs thermal_sigma > 0 (zero-count branch variance)")
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    counts = np.arange(terms, dtype=float)[:, np.newaxis]
    with np.errstate(divide="ignore", invalid="ignore"):
        log_weights = np.where(
            counts == 0, -lam, counts * np.log(lam) - lam - gammaln(counts + 1.0)
        )
    var = counts * det.shot_sigma**2 + det.thermal_sigma**2
    resid = z.reshape(1, -1) - counts * det.gain
    log_norm = -0.5 * resid**2 / var - 0.5 * np.log(2.0 * np.pi * var)
    out = logsumexp(log_weights + log_norm, axis=0)
    return float(out[0]) if scalar else out.reshape(z.shape)
