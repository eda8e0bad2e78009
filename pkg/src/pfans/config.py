"""Run configuration. Every field has a default; ``LinkConfig.to_dict`` echoes
the fully resolved values so nothing is filled in silently."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field

from .fading import PAM4, QAM16, BandRequest, FiberParams
from .link import AdcParams, EaParams, FrontEndParams, LaserParams, MzmParams, PdParams
from .rxdsp import FEC_THRESHOLDS


@dataclass
class NtfParams:
    taps: int = 21
    grid_size: int = 4096
    # ridge penalty as a fraction of the unshaped (g = 0) objective
    ridge_rel: float = 0.02

    def __post_init__(self):
        if self.taps < 1:
            raise ValueError("ntf.taps must be >= 1")
        if self.grid_size < 2 * self.taps:
            raise ValueError("ntf.grid_size must be >= 2 * taps")
        if self.ridge_rel < 0:
            raise ValueError("ntf.ridge_rel must be >= 0")


@dataclass
class ClipParams:
    """Clip and quantizer levels in multiples of the multiplexed signal RMS."""

    clip1_rms: float = 4.0
    clip2_rms: float | None = None  # None -> clip1_rms
    # Quantizer full scale. Sitting a little below Clip_1 lets the loop absorb
    # saturation as shaped error. None -> clip1_rms.
    quantizer_rms: float | None = 3.0
    sweep_clip1: list[float] = field(default_factory=lambda: [2.0 + 0.25 * i for i in range(9)])
    sweep_clip2: list[float] = field(default_factory=lambda: [2.0 + 0.25 * i for i in range(9)])

    def __post_init__(self):
        if self.clip2_rms is None:
            self.clip2_rms = self.clip1_rms
        if self.quantizer_rms is None:
            self.quantizer_rms = self.clip1_rms
        if min(self.clip1_rms, self.clip2_rms, self.quantizer_rms) <= 0:
            raise ValueError("clip and quantizer levels must be > 0")


@dataclass
class RxParams:
    preamble_len: int = 1024
    discard: int = 5000
    eq_taps: int = 31
    mu_train: float = 1e-3
    mu_dd: float = 1e-4
    sync_max_lag: int = 512
    rrc_span: int = 32
    tail_guard: int = 64

    def __post_init__(self):
        if self.eq_taps % 2 == 0:
            raise ValueError("rx.eq_taps must be odd")
        if self.discard < self.preamble_len:
            raise ValueError("rx.discard must cover the preamble")


def reference_bands() -> list[BandRequest]:
    return [
        BandRequest(PAM4, 30e9, 0.1, 1.0),
        BandRequest(QAM16, 8.1e9, 0.1, 1.0),
        BandRequest(QAM16, 6e9, 0.1, 1.0),
    ]


@dataclass
class LinkConfig:
    fiber: FiberParams = field(default_factory=FiberParams)
    frontend: FrontEndParams = field(default_factory=FrontEndParams)
    dac_bits: int = 3
    dac_rate_hz: float = 120e9
    ntf: NtfParams = field(default_factory=NtfParams)
    clips: ClipParams = field(default_factory=ClipParams)
    bands: list[BandRequest] = field(default_factory=reference_bands)
    guard_hz: float = 0.5e9
    noise_shaping: bool = True
    # symbols (preamble and convergence discard included) of the slowest band;
    # faster bands get proportionally more so every band spans the same time
    symbols_per_band: int = 200_000
    seed: int = 1
    noise: bool = True
    rop_dbm: float = -11.0
    rop_sweep: list[float] = field(default_factory=lambda: [float(r) for r in range(-20, -4)])
    rx: RxParams = field(default_factory=RxParams)
    fec_thresholds: list[float] = field(default_factory=lambda: list(FEC_THRESHOLDS))
    required_fec: list[float] = field(default_factory=lambda: [2.7e-2])
    psd_nperseg: int = 4096
    workers: int = 0  # 0 -> os.cpu_count()

    def __post_init__(self):
        if self.dac_bits < 1:
            raise ValueError("dac_bits must be >= 1")
        if not self.bands:
            raise ValueError("at least one band is required")
        need = self.rx.discard + 10_000
        if self.symbols_per_band < need:
            raise ValueError(f"symbols_per_band must be >= discard + 10000 = {need}")

    @property
    def nyquist_hz(self) -> float:
        return self.dac_rate_hz / 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> LinkConfig:
        return _build(cls, d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> LinkConfig:
        return cls.from_dict(json.loads(text))

    def replace(self, **changes) -> LinkConfig:
        d = self.to_dict()
        for path, value in changes.items():
            set_path(d, path.replace("__", "."), value)
        return LinkConfig.from_dict(d)


def reference_config(dac_bits: int = 3) -> LinkConfig:
    return LinkConfig(dac_bits=dac_bits)


def set_path(d: dict, dotted: str, value) -> None:
    """Assign ``value`` at a dotted key path, e.g. ``frontend.mzm.vpi``."""
    keys = dotted.split(".")
    node = d
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            raise KeyError(f"unknown config key {dotted!r}")
        node = node[k]
    if keys[-1] not in node:
        raise KeyError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value


_NESTED = {
    "fiber": FiberParams, "frontend": FrontEndParams, "ea": EaParams, "mzm": MzmParams,
    "laser": LaserParams, "pd": PdParams, "adc": AdcParams, "ntf": NtfParams, "clips": ClipParams,
    "rx": RxParams,
}


def _build(cls, d: dict):
    if not isinstance(d, dict):
        raise TypeError(f"expected an object for {cls.__name__}, got {type(d).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise KeyError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for name, value in d.items():
        if name == "bands":
            kwargs[name] = [v if isinstance(v, BandRequest) else BandRequest(**v) for v in value]
        elif name in _NESTED and isinstance(value, dict):
            kwargs[name] = _build(_NESTED[name], value)
        elif hints.get(name) is int and isinstance(value, float) and value.is_integer():
            kwargs[name] = int(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)
