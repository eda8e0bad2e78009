"""Analog and optical chain: DAC, Rapp amplifier, MZM, laser, fiber, VOA,
photodiode and ADC.

Everything runs at the DAC rate. Functions that draw noise take a ``seed``;
``seed=None`` switches that noise source off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fading import FiberParams
from .txdsp import PASSBAND, SampledWaveform

ELECTRON_CHARGE = 1.602176634e-19


@dataclass
class EaParams:
    vsat: float = 1.0
    # near hard-limiting so that rare peaks saturate cleanly instead of spreading
    p: float = 20.0
    backoff_db: float = 9.0

    def __post_init__(self):
        if self.vsat <= 0 or self.p <= 0:
            raise ValueError("Rapp model needs vsat > 0 and p > 0")


@dataclass
class MzmParams:
    vpi: float = 4.0
    bias: float | None = None  # None -> quadrature, -vpi/2
    drive_fraction: float = 0.4

    def __post_init__(self):
        if self.vpi <= 0:
            raise ValueError("vpi must be > 0")
        if self.bias is None:
            self.bias = -self.vpi / 2
        if not 0 < self.drive_fraction <= 2:
            raise ValueError("drive_fraction must be in (0, 2]")


@dataclass
class LaserParams:
    linewidth_hz: float = 100e3
    rin_db_hz: float = -150.0
    power_dbm: float = 10.0


@dataclass
class PdParams:
    responsivity_a_w: float = 0.8
    dark_a: float = 5e-9
    thermal_a_rthz: float = 10e-12
    shot_noise: bool = False

    def __post_init__(self):
        if not 0 < self.responsivity_a_w <= 1.2:
            raise ValueError("responsivity must lie in (0, 1.2] A/W")


@dataclass
class AdcParams:
    enob: int | None = 6
    full_scale_rms: float = 4.0

    def __post_init__(self):
        if self.enob is not None and self.enob < 1:
            raise ValueError("enob must be >= 1")


@dataclass
class FrontEndParams:
    ea: EaParams = field(default_factory=EaParams)
    mzm: MzmParams = field(default_factory=MzmParams)
    laser: LaserParams = field(default_factory=LaserParams)
    pd: PdParams = field(default_factory=PdParams)
    adc: AdcParams = field(default_factory=AdcParams)


@dataclass
class OpticalField:
    samples: np.ndarray
    rate_hz: float
    center_wavelength_nm: float = 1550.0

    @property
    def mean_power_w(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


def dbm_to_w(dbm: float) -> float:
    return 10 ** (dbm / 10) * 1e-3


def dac_reconstruct(levels, rate_hz: float) -> SampledWaveform:
    return SampledWaveform(np.asarray(levels, dtype=float), rate_hz, PASSBAND)


def rapp(v, vsat: float, p: float):
    v = np.asarray(v)
    return v / (1 + np.abs(v / vsat) ** (2 * p)) ** (1 / (2 * p))


def rapp_amplify(v: SampledWaveform, ea: EaParams) -> SampledWaveform:
    """Rapp AM/AM with the input RMS set ``backoff_db`` below vsat."""
    x = np.asarray(v.samples, dtype=float)
    x_rms = np.sqrt(np.mean(x**2))
    if x_rms > 0:
        x = x * (ea.vsat * 10 ** (-ea.backoff_db / 20) / x_rms)
    return SampledWaveform(rapp(x, ea.vsat, ea.p), v.rate_hz, v.domain)


def drive_scale(v: SampledWaveform, mzm: MzmParams) -> SampledWaveform:
    """Linear driver: peak swing becomes ``drive_fraction * vpi / 2``."""
    peak = np.max(np.abs(v.samples)) if len(v) else 0.0
    if peak == 0:
        return v
    return SampledWaveform(v.samples * (mzm.drive_fraction * mzm.vpi / 2 / peak), v.rate_hz, v.domain)


def mzm_modulate(v: SampledWaveform, carrier: OpticalField, mzm: MzmParams) -> OpticalField:
    """Push-pull (chirp-free) MZM: E_out = E_in cos(pi (v + bias) / (2 vpi))."""
    if len(v) != len(carrier.samples):
        raise ValueError("drive and carrier lengths differ")
    t = np.cos(np.pi * (np.asarray(v.samples) + mzm.bias) / (2 * mzm.vpi))
    return OpticalField(carrier.samples * t, carrier.rate_hz, carrier.center_wavelength_nm)


def laser_source(n_samples: int, rate_hz: float, laser: LaserParams, seed=None,
                 wavelength_nm: float = 1550.0) -> OpticalField:
    """CW laser with Wiener phase noise and white RIN; ``seed=None`` gives a clean carrier."""
    p = dbm_to_w(laser.power_dbm)
    if seed is None:
        return OpticalField(np.full(n_samples, np.sqrt(p), dtype=complex), rate_hz, wavelength_nm)
    rng = np.random.default_rng(seed)
    phase_var = 2 * np.pi * laser.linewidth_hz / rate_hz
    phi = np.cumsum(rng.normal(0.0, np.sqrt(phase_var), n_samples)) if phase_var > 0 else np.zeros(n_samples)
    rin_var = 10 ** (laser.rin_db_hz / 10) * rate_hz / 2
    delta = rng.normal(0.0, np.sqrt(rin_var), n_samples) if rin_var > 0 else np.zeros(n_samples)
    amp = np.sqrt(p * np.maximum(1 + delta, 0.0))
    return OpticalField(amp * np.exp(1j * phi), rate_hz, wavelength_nm)


def fiber_propagate(e: OpticalField, fiber: FiberParams) -> OpticalField:
    """Linear dispersion (frequency-domain all-pass) followed by span loss."""
    loss = 10 ** (-fiber.attenuation_db_km * fiber.length_m / 1e3 / 20)
    if fiber.length_m == 0:
        return OpticalField(e.samples * loss, e.rate_hz, e.center_wavelength_nm)
    n = len(e.samples)
    omega = 2 * np.pi * np.fft.fftfreq(n, 1 / e.rate_hz)
    lam = fiber.wavelength_m
    k = lam**2 * fiber.dispersion_si / (4 * np.pi * fiber.light_speed)
    out = np.fft.ifft(np.fft.fft(e.samples) * np.exp(1j * k * omega**2 * fiber.length_m))
    return OpticalField(out * loss, e.rate_hz, e.center_wavelength_nm)


def voa_set_rop(e: OpticalField, rop_dbm: float) -> OpticalField:
    target = dbm_to_w(rop_dbm)
    current = e.mean_power_w
    if target > current * (1 + 1e-9):
        raise ValueError(
            f"VOA cannot amplify: requested {rop_dbm:.2f} dBm exceeds available "
            f"{10 * np.log10(current * 1e3):.2f} dBm"
        )
    return OpticalField(e.samples * np.sqrt(target / current), e.rate_hz, e.center_wavelength_nm)


def photodetect(e: OpticalField, pd: PdParams, seed=None) -> SampledWaveform:
    """Square-law detection plus dark current; thermal (and optional shot) noise when seeded."""
    i = pd.responsivity_a_w * np.abs(e.samples) ** 2 + pd.dark_a
    if seed is not None:
        rng = np.random.default_rng(seed)
        bw = e.rate_hz / 2
        var = pd.thermal_a_rthz**2 * bw
        if pd.shot_noise:
            var = var + 2 * ELECTRON_CHARGE * np.mean(i) * bw
        i = i + rng.normal(0.0, np.sqrt(var), len(i))
    return SampledWaveform(i, e.rate_hz, PASSBAND)


def adc_sample(i: SampledWaveform, enob: int | None, full_scale: float | None = None,
               full_scale_rms: float = 4.0) -> SampledWaveform:
    """AC-coupled uniform mid-rise ADC with 2**enob levels over +-full_scale.

    ``full_scale`` defaults to ``full_scale_rms`` times the AC RMS; ``enob=None``
    skips quantization.
    """
    x = np.asarray(i.samples, dtype=float)
    x = x - np.mean(x)
    if enob is None:
        return SampledWaveform(x, i.rate_hz, i.domain)
    if full_scale is None:
        full_scale = full_scale_rms * np.sqrt(np.mean(x**2))
    if full_scale == 0:
        return SampledWaveform(np.zeros_like(x), i.rate_hz, i.domain)
    n = 2**enob
    step = 2 * full_scale / n
    j = np.clip(np.floor((x + full_scale) / step), 0, n - 1)
    return SampledWaveform(-full_scale + step / 2 + j * step, i.rate_hz, i.domain)

