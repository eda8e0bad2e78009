"""Dispersion-induced power fading of a chirp-free IMDD link and the
fading-aware band planner built on top of it.

A double-sideband intensity signal sent through a dispersive fiber and
detected by a square-law photodiode sees the RF response

    |H(f)| = |cos(pi * lambda^2 * D * L * f^2 / c)|

whose zeros ("notches") sit at f_k = sqrt((2k - 1) c / (2 lambda^2 D L)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LIGHT_SPEED = 299_792_458.0

PAM4 = "PAM4"
QAM16 = "QAM16"
FORMATS = (PAM4, QAM16)
BITS_PER_SYMBOL = {PAM4: 2, QAM16: 4}


class PlanningError(ValueError):
    """A band request cannot be placed in any usable passband."""


@dataclass
class FiberParams:
    length_m: float = 10e3
    dispersion_ps_nm_km: float = 17.0
    wavelength_nm: float = 1550.0
    attenuation_db_km: float = 0.2
    light_speed: float = LIGHT_SPEED

    def __post_init__(self):
        if self.length_m < 0:
            raise ValueError(f"fiber length must be >= 0, got {self.length_m}")
        if self.dispersion_ps_nm_km <= 0:
            raise ValueError("dispersion must be > 0 ps/(nm km)")
        if self.wavelength_nm <= 0:
            raise ValueError("wavelength must be > 0 nm")
        if self.attenuation_db_km < 0:
            raise ValueError("attenuation must be >= 0 dB/km")

    @property
    def dispersion_si(self) -> float:
        """D in s/m^2."""
        return self.dispersion_ps_nm_km * 1e-6

    @property
    def wavelength_m(self) -> float:
        return self.wavelength_nm * 1e-9

    @property
    def fading_coefficient(self) -> float:
        """lambda^2 D L / c in s^2, so that the fading phase is pi * coef * f^2."""
        return self.wavelength_m**2 * self.dispersion_si * self.length_m / self.light_speed


@dataclass
class FadingResponse:
    freqs_hz: np.ndarray
    magnitude: np.ndarray


@dataclass
class BandRequest:
    format: str
    baud_hz: float
    rolloff: float = 0.1
    power_weight: float = 1.0

    def __post_init__(self):
        if self.format not in FORMATS:
            raise ValueError(f"unknown format {self.format!r}; expected one of {FORMATS}")
        if self.baud_hz <= 0:
            raise ValueError("baud must be > 0")
        if not 0 < self.rolloff <= 1:
            raise ValueError("rolloff must lie in (0, 1]")
        if self.power_weight <= 0:
            raise ValueError("power_weight must be > 0")

    @property
    def occupied_width_hz(self) -> float:
        return self.baud_hz * (1 + self.rolloff)


@dataclass
class BandSpec:
    format: str
    baud_hz: float
    carrier_hz: float
    rolloff: float = 0.1
    power_weight: float = 1.0

    @property
    def bits_per_symbol(self) -> int:
        return BITS_PER_SYMBOL[self.format]

    @property
    def is_baseband(self) -> bool:
        return self.carrier_hz == 0

    @property
    def occupied(self) -> tuple[float, float]:
        half = self.baud_hz * (1 + self.rolloff) / 2
        if self.is_baseband:
            return 0.0, half
        return self.carrier_hz - half, self.carrier_hz + half


@dataclass
class BandPlan:
    bands: list[BandSpec] = field(default_factory=list)
    notches_hz: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.bands)

    def __iter__(self):
        return iter(self.bands)

    def occupied_intervals(self) -> list[tuple[float, float]]:
        return [b.occupied for b in self.bands]

    def validate(self) -> None:
        """Raise ``PlanningError`` if any plan invariant is violated."""
        for b in self.bands:
            if b.power_weight <= 0:
                raise PlanningError(f"band {b} has non-positive power weight")
        intervals = sorted(self.occupied_intervals())
        for (lo1, hi1), (lo2, hi2) in zip(intervals, intervals[1:]):
            if lo2 < hi1:
                raise PlanningError(f"occupied bands [{lo1}, {hi1}] and [{lo2}, {hi2}] overlap")
        for lo, hi in intervals:
            for f in self.notches_hz:
                if lo <= f <= hi:
                    raise PlanningError(f"band [{lo}, {hi}] contains fading notch at {f} Hz")

    def in_band_mask(self, freqs: np.ndarray) -> np.ndarray:
        freqs = np.asarray(freqs)
        mask = np.zeros(freqs.shape, dtype=bool)
        for lo, hi in self.occupied_intervals():
            mask |= (freqs >= lo) & (freqs <= hi)
        return mask


def power_fading_response(fiber: FiberParams, freqs) -> FadingResponse:
    freqs = np.asarray(freqs, dtype=float)
    if freqs.ndim != 1:
        raise ValueError("frequency grid must be one-dimensional")
    if np.any(np.diff(freqs) <= 0):
        raise ValueError("frequency grid must be strictly ascending")
    mag = np.abs(np.cos(np.pi * fiber.fading_coefficient * freqs**2))
    return FadingResponse(freqs_hz=freqs, magnitude=np.clip(mag, 0.0, 1.0))


def notch_frequencies(fiber: FiberParams, f_max: float) -> list[float]:
    if f_max <= 0:
        raise ValueError("f_max must be > 0")
    coef = fiber.fading_coefficient
    if coef == 0:
        return []
    # cos(pi*coef*f^2) = 0  <=>  coef*f^2 = k - 1/2
    k_max = int(np.floor(coef * f_max**2 + 0.5))
    k = np.arange(1, k_max + 1)
    f = np.sqrt((2 * k - 1) / (2 * coef))
    return [float(x) for x in f if x <= f_max]


def plan_bands(
    fiber: FiberParams,
    requests: list[BandRequest],
    f_nyquist: float,
    guard_hz: float = 0.5e9,
) -> BandPlan:
    """Place band requests around the fading notches.

    A PAM4 request goes to baseband when it is the first request. Every other
    request (and any QAM request, which needs a carrier) is centred in the
    lowest free segment that holds its occupied width. Free segments are the
    inter-notch passbands (the last one ends at ``f_nyquist``) shrunk by
    ``guard_hz`` at each notch or band edge, minus bands already placed.
    With the notches dense enough that each passband holds one band, the
    carrier is simply the passband midpoint.
    """
    if any(a.baud_hz < b.baud_hz for a, b in zip(requests, requests[1:])):
        raise ValueError("band requests must be sorted by descending baud")
    notches = notch_frequencies(fiber, f_nyquist)
    edges = [0.0, *notches, f_nyquist]
    # (lo, hi) free segments, guards already applied
    free = [(lo + (guard_hz if lo > 0 else 0.0), hi - guard_hz) for lo, hi in zip(edges[:-1], edges[1:])]
    free = [(lo, hi) for lo, hi in free if hi > lo]

    def take(lo, hi):
        for k, (a, b) in enumerate(free):
            if a <= lo and hi <= b:
                pieces = [(a, lo - guard_hz), (hi + guard_hz, b)]
                free[k : k + 1] = [(x, y) for x, y in pieces if y > x]
                return

    bands: list[BandSpec] = []
    for i, req in enumerate(requests):
        name = f"band{i + 1} ({req.format} {req.baud_hz / 1e9:g} GBd)"
        width = req.occupied_width_hz
        if i == 0 and req.format == PAM4:
            if not free or free[0][0] > 0 or free[0][1] < width / 2:
                top = notches[0] if notches else f_nyquist
                raise PlanningError(f"{name} does not fit below {top / 1e9:.3f} GHz")
            take(0.0, width / 2)
            bands.append(BandSpec(req.format, req.baud_hz, 0.0, req.rolloff, req.power_weight))
            continue
        for lo, hi in free:
            if hi - lo >= width:
                fc = (lo + hi) / 2
                take(fc - width / 2, fc + width / 2)
                bands.append(BandSpec(req.format, req.baud_hz, fc, req.rolloff, req.power_weight))
                break
        else:
            raise PlanningError(f"{name} fits in no free passband below {f_nyquist / 1e9:g} GHz")

    plan = BandPlan(bands=bands, notches_hz=notches)
    plan.validate()
    return plan
