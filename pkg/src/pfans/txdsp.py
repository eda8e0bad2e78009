"""Transmit-side DSP: bits, Gray mapping, RRC shaping, resampling, up-conversion
and fading-aware frequency-division multiplexing."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal

from .fading import PAM4, QAM16, BandPlan

BASEBAND = "baseband"
PASSBAND = "passband"

# Gray table per axis: bit pair (b0, b1) -> level
_GRAY_LEVELS = {(0, 0): -3, (0, 1): -1, (1, 1): 1, (1, 0): 3}
_PAIR_INDEX_TO_LEVEL = np.array([_GRAY_LEVELS[(b >> 1, b & 1)] for b in range(4)], dtype=float)
# level index (-3, -1, 1, 3) -> bit pair
_LEVEL_INDEX_TO_BITS = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=np.uint8)

PAM4_SCALE = np.sqrt(5.0)
QAM16_SCALE = np.sqrt(10.0)
RESAMPLE_WINDOW = ("kaiser", 8.0)


@dataclass
class SampledWaveform:
    samples: np.ndarray
    rate_hz: float
    domain: str = BASEBAND

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ValueError("sample rate must be > 0")
        if self.domain not in (BASEBAND, PASSBAND):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.domain == PASSBAND and np.iscomplexobj(self.samples):
            if np.any(self.samples.imag != 0):
                raise ValueError("passband waveform must be real")
            self.samples = self.samples.real

    def __len__(self):
        return len(self.samples)


@dataclass
class SymbolFrame:
    symbols: np.ndarray
    format: str
    preamble_len: int
    seed: int | None = None

    @property
    def preamble(self) -> np.ndarray:
        return self.symbols[: self.preamble_len]


def generate_bits(n: int, seed) -> np.ndarray:
    if n < 0:
        raise ValueError("bit count must be >= 0")
    return np.random.default_rng(seed).integers(0, 2, size=n, dtype=np.uint8)


def _pairs_to_levels(bits: np.ndarray) -> np.ndarray:
    idx = 2 * bits[0::2].astype(int) + bits[1::2].astype(int)
    return _PAIR_INDEX_TO_LEVEL[idx]


def map_pam4(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    if len(bits) % 2:
        raise ValueError(f"PAM4 needs an even number of bits, got {len(bits)}")
    return _pairs_to_levels(bits) / PAM4_SCALE


def map_16qam(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    if len(bits) % 4:
        raise ValueError(f"16QAM needs a multiple of 4 bits, got {len(bits)}")
    quads = bits.reshape(-1, 4)
    i = _pairs_to_levels(quads[:, :2].ravel())
    q = _pairs_to_levels(quads[:, 2:].ravel())
    return (i + 1j * q) / QAM16_SCALE


def map_symbols(bits, fmt: str) -> np.ndarray:
    return map_pam4(bits) if fmt == PAM4 else map_16qam(bits)


def _slice_axis(x: np.ndarray) -> np.ndarray:
    """Hard decision on one axis of unnormalized {-3,-1,1,3}; returns level index 0..3."""
    return np.clip(np.floor((x + 4) / 2), 0, 3).astype(int)


def decide(symbols, fmt: str) -> np.ndarray:
    """Nearest constellation point (normalized)."""
    levels = np.array([-3.0, -1.0, 1.0, 3.0])
    if fmt == PAM4:
        s = np.real(symbols) * PAM4_SCALE
        return levels[_slice_axis(s)] / PAM4_SCALE
    s = np.asarray(symbols) * QAM16_SCALE
    return (levels[_slice_axis(s.real)] + 1j * levels[_slice_axis(s.imag)]) / QAM16_SCALE


def demap(symbols, fmt: str) -> np.ndarray:
    """Hard-decision Gray demapping back to bits."""
    if fmt == PAM4:
        idx = _slice_axis(np.real(symbols) * PAM4_SCALE)
        return _LEVEL_INDEX_TO_BITS[idx].ravel()
    s = np.asarray(symbols) * QAM16_SCALE
    bi = _LEVEL_INDEX_TO_BITS[_slice_axis(s.real)]
    bq = _LEVEL_INDEX_TO_BITS[_slice_axis(s.imag)]
    return np.hstack([bi, bq]).ravel()


def rrc_taps(rolloff: float, span_symbols: int = 32, sps: int = 2, normalize: bool = True) -> np.ndarray:
    """Root-raised-cosine impulse response over ``span_symbols`` symbols.

    With ``normalize`` the taps have unit energy; otherwise the t=0 tap equals
    1 + rolloff (4/pi - 1).
    """
    if not 0 < rolloff <= 1:
        raise ValueError("rolloff must be in (0, 1]")
    if span_symbols % 2:
        raise ValueError("span must be even")
    if sps < 2:
        raise ValueError("sps must be >= 2")
    b = rolloff
    t = np.arange(-span_symbols * sps // 2, span_symbols * sps // 2 + 1) / sps
    h = np.empty_like(t)
    at_zero = t == 0
    at_sing = np.isclose(np.abs(4 * b * t), 1.0)
    reg = ~(at_zero | at_sing)
    tr = t[reg]
    h[reg] = (np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))) / (
        np.pi * tr * (1 - (4 * b * tr) ** 2)
    )
    h[at_zero] = 1 + b * (4 / np.pi - 1)
    h[at_sing] = (b / np.sqrt(2)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
    )
    if normalize:
        h = h / np.sqrt(np.sum(h**2))
    return h


def filter_centered(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Linear convolution trimmed so odd-length symmetric ``taps`` add no delay."""
    full = signal.oaconvolve(x, taps) if len(x) > 50_000 else np.convolve(x, taps)
    d = (len(taps) - 1) // 2
    return full[d : d + len(x)]


def resample_ratio(rate_in: float, rate_out: float) -> Fraction:
    return Fraction(rate_out / rate_in).limit_denominator(10_000)


def resample(x: np.ndarray, rate_in: float, rate_out: float) -> np.ndarray:
    """Polyphase rational resampling, Kaiser windowed-sinc prototype (~80 dB stopband)."""
    r = resample_ratio(rate_in, rate_out)
    if r == 1:
        return np.array(x, copy=True)
    return signal.resample_poly(x, r.numerator, r.denominator, window=RESAMPLE_WINDOW)


def shape_and_resample(frame: SymbolFrame, rolloff: float, baud_hz: float, target_rate_hz: float,
                       span_symbols: int = 32) -> SampledWaveform:
    if target_rate_hz < baud_hz * (1 + rolloff):
        raise ValueError(
            f"target rate {target_rate_hz:g} Hz is below the shaped bandwidth {baud_hz * (1 + rolloff):g} Hz"
        )
    up = np.zeros(2 * len(frame.symbols), dtype=frame.symbols.dtype)
    up[::2] = frame.symbols
    shaped = filter_centered(up, rrc_taps(rolloff, span_symbols, 2))
    out = resample(shaped, 2 * baud_hz, target_rate_hz)
    return SampledWaveform(out, target_rate_hz, BASEBAND)


def upconvert(bb: SampledWaveform, carrier_hz: float, bandwidth_hz: float | None = None) -> SampledWaveform:
    """Real IF up-conversion: I cos(2 pi fc t) - Q sin(2 pi fc t)."""
    x = np.asarray(bb.samples)
    if carrier_hz == 0:
        return SampledWaveform(np.real(x).astype(float), bb.rate_hz, PASSBAND)
    if bandwidth_hz is not None:
        if carrier_hz + bandwidth_hz / 2 >= bb.rate_hz / 2:
            raise ValueError("up-converted band overlaps Nyquist")
        if carrier_hz - bandwidth_hz / 2 <= 0:
            raise ValueError("up-converted band overlaps DC")
    ph = 2 * np.pi * carrier_hz / bb.rate_hz * np.arange(len(x))
    s = np.real(x) * np.cos(ph) - np.imag(x) * np.sin(ph)
    return SampledWaveform(s, bb.rate_hz, PASSBAND)


def rms(x) -> float:
    return float(np.sqrt(np.mean(np.abs(x) ** 2)))


def fdm_multiplex(waves: list[SampledWaveform], plan: BandPlan) -> SampledWaveform:
    """Sum unit-RMS band signals with amplitude sqrt(power_weight); output is unit RMS."""
    if len(waves) != len(plan):
        raise ValueError(f"{len(waves)} waveforms for a {len(plan)}-band plan")
    rates = {w.rate_hz for w in waves}
    if len(rates) != 1:
        raise ValueError(f"rate mismatch across bands: {sorted(rates)}")
    n = min(len(w) for w in waves)
    total = np.zeros(n)
    for w, band in zip(waves, plan):
        s = np.real(w.samples[:n])
        total += np.sqrt(band.power_weight) * s / rms(s)
    return SampledWaveform(total / rms(total), waves[0].rate_hz, PASSBAND)
