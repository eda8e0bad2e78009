"""Fading-aware noise shaping: feedback filter design and the quantizer loop.

The loop realises

    Y(z) = X(z) + (1 + G(z)) E(z)

where E is the quantization error and G a strictly causal FIR filter. The
taps of G come from a weighted least-squares fit that pushes |1 + G| down
wherever the weighting (the fading magnitude inside occupied bands) is large,
so the error lands in fading notches and unused spectrum instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numba
import numpy as np
from scipy import signal

from .fading import BandPlan, FadingResponse


@dataclass
class WeightingFunction:
    freqs_hz: np.ndarray
    weight: np.ndarray
    rate_hz: float

    def __post_init__(self):
        if np.any(self.weight < 0):
            raise ValueError("weights must be non-negative")
        if not np.any(self.weight > 0):
            raise ValueError("weighting is zero everywhere; design problem is degenerate")


@dataclass
class NtfDesign:
    g: np.ndarray
    objective_value: float
    ntf_zeros: np.ndarray
    grid_size: int
    rate_hz: float = 1.0
    ridge: float = 0.0

    @property
    def taps(self) -> int:
        return len(self.g)

    @property
    def ntf(self) -> np.ndarray:
        """Monic NTF coefficients [1, g1, ..., gK]."""
        return np.concatenate(([1.0], self.g))

    @property
    def dc_gain(self) -> float:
        return float(1 + np.sum(self.g))

    def response(self, freqs_hz) -> np.ndarray:
        """Complex NTF response 1 + sum_k g_k exp(-j w k) at ``freqs_hz``."""
        w = 2 * np.pi * np.asarray(freqs_hz) / self.rate_hz
        k = np.arange(1, self.taps + 1)
        return 1 + np.exp(-1j * np.outer(w, k)) @ self.g

    def to_dict(self) -> dict:
        return {
            "taps": [float(v) for v in self.g],
            "grid_size": self.grid_size,
            "rate_hz": self.rate_hz,
            "ridge": self.ridge,
            "objective_value": self.objective_value,
            "dc_gain": self.dc_gain,
            "zeros": [[float(z.real), float(z.imag)] for z in self.ntf_zeros],
        }

    @classmethod
    def from_dict(cls, d: dict) -> NtfDesign:
        return cls(
            g=np.asarray(d["taps"], dtype=float),
            objective_value=d["objective_value"],
            ntf_zeros=np.array([complex(re, im) for re, im in d["zeros"]]),
            grid_size=d["grid_size"],
            rate_hz=d["rate_hz"],
            ridge=d.get("ridge", 0.0),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class QuantizerSpec:
    bits: int
    full_scale: float

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("quantizer needs at least one bit")
        if not self.full_scale > 0:
            raise ValueError("full_scale must be > 0")

    @property
    def step(self) -> float:
        return 2 * self.full_scale / 2**self.bits

    @property
    def levels(self) -> np.ndarray:
        return -self.full_scale + self.step / 2 + self.step * np.arange(2**self.bits)


@dataclass
class ClipSpec:
    clip1_level: float
    clip2_level: float

    def __post_init__(self):
        if not (self.clip1_level > 0 and self.clip2_level > 0):
            raise ValueError("clip levels must be > 0")


@dataclass
class ShapeTrace:
    y: np.ndarray
    epsilon: np.ndarray
    v: np.ndarray
    clip1_count: int
    clip2_count: int


def uniform_grid(rate_hz: float, grid_size: int) -> np.ndarray:
    return (np.arange(grid_size) + 0.5) * (rate_hz / 2 / grid_size)


def build_weighting(fading: FadingResponse, plan: BandPlan, grid_size: int, rate_hz: float,
                    taps: int = 1) -> WeightingFunction:
    """Sample |H| on ``grid_size`` uniform points over [0, rate/2], zero outside the plan.

    Points sit at bin centres, (i + 1/2) * rate / (2 N), so that the discrete
    cosine sums behind the normal equations vanish exactly for every lag below
    2N; a flat weighting then yields g = 0 to rounding error.
    """
    if grid_size < 2 * taps or grid_size < 2:
        raise ValueError(f"grid_size {grid_size} too small for {taps} taps (need >= {2 * taps})")
    freqs = uniform_grid(rate_hz, grid_size)
    mag = np.interp(freqs, fading.freqs_hz, fading.magnitude)
    weight = np.where(plan.in_band_mask(freqs), mag, 0.0)
    return WeightingFunction(freqs_hz=freqs, weight=weight, rate_hz=rate_hz)


def _objective(weight, basis, g):
    resp = 1 + basis @ g
    return float(np.sum(weight**2 * np.abs(resp) ** 2))


def design_feedback_filter(weighting: WeightingFunction, taps: int, ridge: float = 0.0) -> NtfDesign:
    """Weighted least-squares fit of the feedback taps.

    Minimises sum_i W_i^2 |1 + sum_k g_k exp(-j w_i k)|^2 + ridge * |g|^2 over
    real g. The complex residual is split into real and imaginary rows.
    """
    if taps < 1:
        raise ValueError("feedback filter needs at least one tap")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    w = 2 * np.pi * weighting.freqs_hz / weighting.rate_hz
    k = np.arange(1, taps + 1)
    basis = np.exp(-1j * np.outer(w, k))
    W = weighting.weight
    A = np.vstack([W[:, None] * basis.real, W[:, None] * basis.imag])
    b = -np.concatenate([W, np.zeros_like(W)])
    normal = A.T @ A + ridge * np.eye(taps)
    rhs = A.T @ b
    if ridge == 0 and np.linalg.cond(normal) > 1e12:
        raise np.linalg.LinAlgError("normal matrix is singular; retry with ridge > 0 (e.g. 1e-8)")
    g = np.linalg.solve(normal, rhs)
    return NtfDesign(
        g=g,
        objective_value=_objective(W, basis, g),
        ntf_zeros=np.roots(np.concatenate(([1.0], g))),
        grid_size=len(W),
        rate_hz=weighting.rate_hz,
        ridge=ridge,
    )


@numba.njit(cache=True)
def _quantize_scalar(v, full_scale, step, n_levels):
    # mid-rise: level j = -A + step/2 + j*step; ties go to the upper level
    j = np.floor((v + full_scale) / step)
    if j < 0:
        j = 0
    elif j > n_levels - 1:
        j = n_levels - 1
    return -full_scale + step / 2 + j * step


def quantize(v, q: QuantizerSpec):
    """Nearest mid-rise level; saturates beyond +-A and rounds midpoints up."""
    v = np.asarray(v, dtype=float)
    j = np.clip(np.floor((v + q.full_scale) / q.step), 0, 2**q.bits - 1)
    out = -q.full_scale + q.step / 2 + j * q.step
    return out if out.ndim else float(out)


@numba.njit(cache=True, nogil=True)
def _shape_loop(x, g, full_scale, step, n_levels, clip1, clip2):
    n = x.shape[0]
    K = g.shape[0]
    y = np.empty(n)
    eps = np.empty(n)
    v = np.empty(n)
    c1 = 0
    c2 = 0
    for i in range(n):
        u = x[i]
        if u > clip1:
            u = clip1
            c1 += 1
        elif u < -clip1:
            u = -clip1
            c1 += 1
        fb = 0.0
        for k in range(1, min(K, i) + 1):
            fb += g[k - 1] * eps[i - k]
        if fb > clip2:
            fb = clip2
            c2 += 1
        elif fb < -clip2:
            fb = -clip2
            c2 += 1
        vi = u + fb
        yi = _quantize_scalar(vi, full_scale, step, n_levels)
        v[i] = vi
        y[i] = yi
        eps[i] = yi - vi
    return y, eps, v, c1, c2


def shape(x, design: NtfDesign, q: QuantizerSpec, clips: ClipSpec) -> ShapeTrace:
    """Run the noise-shaping quantizer over ``x`` (cold start, zero error history)."""
    x = np.ascontiguousarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains NaN or inf")
    y, eps, v, c1, c2 = _shape_loop(
        x, np.ascontiguousarray(design.g, dtype=float), q.full_scale, q.step, 2**q.bits,
        float(clips.clip1_level), float(clips.clip2_level),
    )
    return ShapeTrace(y=y, epsilon=eps, v=v, clip1_count=int(c1), clip2_count=int(c2))


def shaped_noise_psd(trace: ShapeTrace, x, rate_hz: float, nperseg: int = 4096):
    """Welch PSD of the total injected error y - x, one-sided on [0, rate/2].

    Returns ``(freqs_hz, psd)`` with psd in units^2/Hz.
    """
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        raise ValueError("empty input")
    if len(x) != len(trace.y):
        raise ValueError(f"length mismatch: x has {len(x)} samples, trace has {len(trace.y)}")
    return signal.welch(trace.y - x, fs=rate_hz, nperseg=min(nperseg, len(x)),
                        window="hann", detrend=False)
