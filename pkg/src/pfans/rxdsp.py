"""Receive-side DSP: De-FDM, synchronization, Ts/2-spaced 2x2 real LMS and
BER/SNR counting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import signal
from scipy.special import erfc

from .fading import PAM4, BandPlan
from .txdsp import (
    BASEBAND, PAM4_SCALE, QAM16_SCALE, SampledWaveform, demap, filter_centered, map_symbols, resample,
    rrc_taps,
)

FEC_THRESHOLDS = (2.7e-2, 2.0e-2, 1.25e-2)


class SyncError(RuntimeError):
    pass


class EqualizerDivergence(RuntimeError):
    pass


@dataclass
class EqualizerState:
    taps: np.ndarray  # shape (2, 2, L): [out_axis, in_axis, tap]
    mu_train: float = 1e-3
    mu_dd: float = 1e-4
    mode: str = "training"

    def __post_init__(self):
        if self.taps.ndim != 3 or self.taps.shape[:2] != (2, 2):
            raise ValueError("taps must have shape (2, 2, L)")
        if self.taps.shape[2] % 2 == 0:
            raise ValueError("equalizer length must be odd")
        if self.mu_train < 0 or self.mu_dd < 0:
            raise ValueError("step sizes must be >= 0")

    @classmethod
    def center_spike(cls, length: int = 31, mu_train: float = 1e-3, mu_dd: float = 1e-4) -> EqualizerState:
        taps = np.zeros((2, 2, length))
        taps[0, 0, length // 2] = 1.0
        taps[1, 1, length // 2] = 1.0
        return cls(taps, mu_train, mu_dd)

    @property
    def length(self) -> int:
        return self.taps.shape[2]


@dataclass
class BandMetrics:
    snr_db: float
    ber: float
    bit_count: int
    bit_errors: int
    fec_verdicts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "snr_db": self.snr_db,
            "ber": self.ber,
            "bit_count": self.bit_count,
            "bit_errors": self.bit_errors,
            "fec_verdicts": dict(self.fec_verdicts),
        }

    @classmethod
    def from_dict(cls, d: dict) -> BandMetrics:
        return cls(**d)


@dataclass
class SyncResult:
    stream: np.ndarray
    lag: int
    gain: complex
    peak_ratio: float


def fec_key(threshold: float) -> str:
    return f"{threshold:.3g}"


def de_fdm(rx: SampledWaveform, plan: BandPlan, span_symbols: int = 32) -> list[SampledWaveform]:
    """Split the detected signal into per-band complex baseband streams at 2 sps."""
    x = np.real(np.asarray(rx.samples, dtype=float))
    out = []
    for band in plan:
        if band.occupied[1] >= rx.rate_hz / 2:
            raise ValueError(f"band at {band.carrier_hz:g} Hz exceeds the Nyquist rate of {rx.rate_hz:g} Hz")
        if band.is_baseband:
            bb = x.astype(complex)
        else:
            ph = 2 * np.pi * band.carrier_hz / rx.rate_hz * np.arange(len(x))
            bb = 2 * x * np.exp(-1j * ph)
        bb = resample(bb, rx.rate_hz, 2 * band.baud_hz)
        bb = filter_centered(bb, rrc_taps(band.rolloff, span_symbols, 2))
        out.append(SampledWaveform(bb, 2 * band.baud_hz, BASEBAND))
    return out


def preamble_reference(preamble, rolloff: float, span_symbols: int = 32) -> np.ndarray:
    """Preamble as it looks after Tx RRC and Rx matched filter, at 2 sps."""
    up = np.zeros(2 * len(preamble), dtype=complex)
    up[::2] = preamble
    h = rrc_taps(rolloff, span_symbols, 2)
    return filter_centered(filter_centered(up, h), h)


def synchronize(rx_band, preamble, rolloff: float = 0.1, max_lag: int = 512,
                span_symbols: int = 32, min_ratio: float = 3.0, min_coherence: float = 0.2) -> SyncResult:
    """Locate the preamble by cross-correlation and normalise the complex gain.

    The lag is searched over [-max_lag, max_lag] samples. The peak must beat
    ``min_ratio`` times the median correlation magnitude and reach a normalised
    correlation of ``min_coherence``; otherwise ``SyncError`` is raised.
    """
    rx_band = np.asarray(rx_band, dtype=complex)
    ref = preamble_reference(preamble, rolloff, span_symbols)
    n = len(ref)
    if len(rx_band) < n + max_lag:
        raise SyncError("received stream shorter than preamble plus search window")
    padded = np.concatenate([np.zeros(max_lag, dtype=complex), rx_band[: n + max_lag]])
    c = signal.correlate(padded, ref, mode="valid")  # c[m] <-> lag m - max_lag
    mag = np.abs(c)
    m = int(np.argmax(mag))
    lag = m - max_lag
    sidelobes = np.delete(mag, np.arange(max(0, m - 4), min(len(mag), m + 5)))
    ratio = float(mag[m] / np.median(sidelobes)) if len(sidelobes) and np.median(sidelobes) > 0 else np.inf
    seg = padded[m : m + n]
    coherence = mag[m] / (np.linalg.norm(seg) * np.linalg.norm(ref) + 1e-300)
    if ratio < min_ratio or coherence < min_coherence:
        raise SyncError(f"preamble not found (peak/median {ratio:.2f}, coherence {coherence:.3f})")
    gain = c[m] / np.vdot(ref, ref).real
    if lag >= 0:
        stream = rx_band[lag:]
    else:
        stream = np.concatenate([np.zeros(-lag, dtype=complex), rx_band])
    return SyncResult(stream=stream / gain, lag=lag, gain=complex(gain), peak_ratio=ratio)


@numba.njit(cache=True)
def _slice(x, scale):
    j = np.floor((x * scale + 4.0) / 2.0)
    if j < 0.0:
        j = 0.0
    elif j > 3.0:
        j = 3.0
    return (2.0 * j - 3.0) / scale


@numba.njit(cache=True, nogil=True)
def _lms_loop(xi, xq, ref_i, ref_q, n_sym, n_train, W, mu_train, mu_dd, is_pam4, scale, max_norm):
    L = W.shape[2]
    c = L // 2
    n_in = xi.shape[0]
    out_i = np.zeros(n_sym)
    out_q = np.zeros(n_sym)
    buf_i = np.zeros(L)
    buf_q = np.zeros(L)
    for k in range(n_sym):
        for j in range(L):
            idx = 2 * k + c - j
            if 0 <= idx < n_in:
                buf_i[j] = xi[idx]
                buf_q[j] = xq[idx]
            else:
                buf_i[j] = 0.0
                buf_q[j] = 0.0
        si = 0.0
        sq = 0.0
        for j in range(L):
            si += W[0, 0, j] * buf_i[j] + W[0, 1, j] * buf_q[j]
            sq += W[1, 0, j] * buf_i[j] + W[1, 1, j] * buf_q[j]
        out_i[k] = si
        out_q[k] = sq
        if k < n_train:
            mu = mu_train
            ei = ref_i[k] - si
            eq = ref_q[k] - sq
        else:
            mu = mu_dd
            ei = _slice(si, scale) - si
            eq = _slice(sq, scale) - sq
        if is_pam4:
            eq = 0.0
        if mu == 0.0:
            continue
        norm2 = 0.0
        for j in range(L):
            W[0, 0, j] += mu * ei * buf_i[j]
            W[0, 1, j] += mu * ei * buf_q[j]
            W[1, 0, j] += mu * eq * buf_i[j]
            W[1, 1, j] += mu * eq * buf_q[j]
            norm2 += W[0, 0, j] ** 2 + W[0, 1, j] ** 2 + W[1, 0, j] ** 2 + W[1, 1, j] ** 2
        if norm2 > max_norm * max_norm:
            return out_i, out_q, k
    return out_i, out_q, -1


def lms_equalize(band, ref_symbols, state: EqualizerState, fmt: str, n_symbols: int | None = None,
                 n_train: int | None = None) -> np.ndarray:
    """Ts/2-spaced 2x2 real LMS; one output per symbol.

    Trains on ``ref_symbols`` for the first ``n_train`` symbols (default: all of
    ``ref_symbols``) and switches to decision-directed updates afterwards.
    ``state.taps`` is updated in place.
    """
    band = np.asarray(band, dtype=complex)
    ref_symbols = np.asarray(ref_symbols, dtype=complex)
    if n_train is None:
        n_train = len(ref_symbols)
    if n_symbols is None:
        n_symbols = len(band) // 2
    is_pam4 = fmt == PAM4
    xi = np.ascontiguousarray(band.real)
    xq = np.zeros_like(xi) if is_pam4 else np.ascontiguousarray(band.imag)
    ref_i = np.zeros(max(n_train, 1))
    ref_q = np.zeros(max(n_train, 1))
    ref_i[:n_train] = ref_symbols[:n_train].real
    ref_q[:n_train] = ref_symbols[:n_train].imag
    init_norm = np.linalg.norm(state.taps)
    scale = PAM4_SCALE if is_pam4 else QAM16_SCALE
    W = np.ascontiguousarray(state.taps, dtype=float)
    out_i, out_q, diverged_at = _lms_loop(
        xi, xq, ref_i, ref_q, n_symbols, n_train, W, state.mu_train, state.mu_dd, is_pam4, scale,
        1e3 * max(init_norm, 1e-12),
    )
    state.taps = W
    state.mode = "decision-directed" if n_symbols > n_train else "training"
    if diverged_at >= 0:
        mu = state.mu_train if diverged_at < n_train else state.mu_dd
        raise EqualizerDivergence(f"LMS diverged at symbol {diverged_at} with mu={mu:g}")
    return out_i if is_pam4 else out_i + 1j * out_q


def q_function(x):
    return 0.5 * erfc(np.asarray(x) / np.sqrt(2))


def ber_from_snr(snr_db, fmt: str):
    """Gray-coded AWGN BER for PAM4 (real noise) or square 16QAM (complex noise).

    Both reduce to 3/4 Q(sqrt(SNR/5)) with SNR = Es/noise variance.
    """
    snr = 10 ** (np.asarray(snr_db) / 10)
    return 0.75 * q_function(np.sqrt(snr / 5))


def demap_and_count(s_hat, tx_bits, fmt: str, discard: int = 0,
                    thresholds=FEC_THRESHOLDS) -> BandMetrics:
    """Hard-decide, Gray-demap and count bit errors after skipping ``discard`` symbols."""
    s_hat = np.asarray(s_hat)
    tx_bits = np.asarray(tx_bits, dtype=np.uint8)
    bps = 2 if fmt == PAM4 else 4
    if len(tx_bits) != bps * len(s_hat):
        raise ValueError(f"{len(s_hat)} symbols do not match {len(tx_bits)} bits for {fmt}")
    if discard >= len(s_hat):
        raise ValueError(f"discard {discard} leaves no symbols to count")
    est = s_hat[discard:]
    if fmt == PAM4:
        est = np.real(est)
    ref = map_symbols(tx_bits, fmt)[discard:]
    rx_bits = demap(est, fmt)
    errors = int(np.count_nonzero(rx_bits != tx_bits[discard * bps :]))
    count = len(rx_bits)
    ber = errors / count
    err_pow = np.mean(np.abs(est - ref) ** 2)
    snr_db = float(10 * np.log10(np.mean(np.abs(ref) ** 2) / err_pow)) if err_pow > 0 else float("inf")
    verdicts = {fec_key(t): bool(ber <= t) for t in thresholds}
    return BandMetrics(snr_db=snr_db, ber=ber, bit_count=count, bit_errors=errors, fec_verdicts=verdicts)
