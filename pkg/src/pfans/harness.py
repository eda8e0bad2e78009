"""End-to-end orchestration: transmitter, noise shaping, optical link, receiver,
sweeps and report files."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal

from . import link
from .config import LinkConfig
from .fading import BandPlan, FiberParams, notch_frequencies, plan_bands, power_fading_response
from .noise_shaping import (
    ClipSpec, NtfDesign, QuantizerSpec, build_weighting, design_feedback_filter, quantize, shape,
    uniform_grid,
)
from .rxdsp import (
    BandMetrics, EqualizerState, de_fdm, demap_and_count, fec_key, lms_equalize, synchronize,
)
from .txdsp import (
    SampledWaveform, SymbolFrame, fdm_multiplex, generate_bits, map_symbols, shape_and_resample, upconvert,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class StageError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(f"[{self.name}] {type(exc).__name__}: {exc}") from exc
        return False


@dataclass
class TxResult:
    plan: BandPlan
    bits: list[np.ndarray]
    frames: list[SymbolFrame]
    counted_symbols: list[int]
    x: SampledWaveform
    design: NtfDesign | None


@dataclass
class RunReport:
    bands: list[dict]
    metrics: list[BandMetrics]
    aggregate_rate_gbps: float
    baseline_rate_gbps: float
    improvement_pct: float
    ntf: dict | None
    psd: dict
    shaping: dict
    rop_dbm: float
    config: dict
    wall_time_s: float = 0.0
    schema_version: int = SCHEMA_VERSION

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "schema_version": self.schema_version,
            "rop_dbm": self.rop_dbm,
            "aggregate_rate_gbps": self.aggregate_rate_gbps,
            "baseline_rate_gbps": self.baseline_rate_gbps,
            "improvement_pct": self.improvement_pct,
            "bands": self.bands,
            "metrics": [m.to_dict() for m in self.metrics],
            "shaping": self.shaping,
            "ntf": self.ntf,
            "psd": self.psd,
            "config": self.config,
        }
        if include_timing:
            d["wall_time_s"] = self.wall_time_s
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunReport:
        return cls(
            bands=d["bands"],
            metrics=[BandMetrics.from_dict(m) for m in d["metrics"]],
            aggregate_rate_gbps=d["aggregate_rate_gbps"],
            baseline_rate_gbps=d["baseline_rate_gbps"],
            improvement_pct=d["improvement_pct"],
            ntf=d["ntf"],
            psd=d["psd"],
            shaping=d["shaping"],
            rop_dbm=d["rop_dbm"],
            config=d["config"],
            wall_time_s=d.get("wall_time_s", 0.0),
            schema_version=d["schema_version"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def all_required_pass(self) -> bool:
        req = self.config.get("required_fec", [])
        return all(m.fec_verdicts.get(fec_key(t), m.ber <= t) for m in self.metrics for t in req)


# -- rate accounting -------------------------------------------------------

def line_rate_bps(plan: BandPlan) -> Fraction:
    """Raw line rate: sum of baud * log2(M), exact."""
    return sum((Fraction(round(b.baud_hz)) * b.bits_per_symbol for b in plan), Fraction(0))


def rate_summary(plan: BandPlan) -> tuple[float, float, float]:
    """(aggregate Gb/s, baseline Gb/s, improvement %) with the first band as the baseline."""
    total = line_rate_bps(plan)
    base = Fraction(round(plan.bands[0].baud_hz)) * plan.bands[0].bits_per_symbol
    improvement = (total - base) / base * 100
    return float(total / 10**9), float(base / 10**9), float(improvement)


# -- seeds -----------------------------------------------------------------

def _seeds(seed: int, n: int, tag: int) -> list[int]:
    ss = np.random.SeedSequence([seed, tag])
    return [int(s.generate_state(1)[0]) for s in ss.spawn(n)]


# -- pipeline stages -------------------------------------------------------

def make_plan(cfg: LinkConfig) -> BandPlan:
    return plan_bands(cfg.fiber, cfg.bands, cfg.nyquist_hz, cfg.guard_hz)


def symbol_counts(cfg: LinkConfig, plan: BandPlan) -> list[int]:
    duration = cfg.symbols_per_band / min(b.baud_hz for b in plan)
    return [int(math.ceil(duration * b.baud_hz - 1e-9)) for b in plan]


def design_ntf(cfg: LinkConfig, plan: BandPlan) -> NtfDesign:
    fading = power_fading_response(cfg.fiber, uniform_grid(cfg.dac_rate_hz, cfg.ntf.grid_size))
    weighting = build_weighting(fading, plan, cfg.ntf.grid_size, cfg.dac_rate_hz, cfg.ntf.taps)
    ridge = cfg.ntf.ridge_rel * float(np.sum(weighting.weight**2))
    try:
        return design_feedback_filter(weighting, cfg.ntf.taps, ridge)
    except np.linalg.LinAlgError:
        log.warning("singular NTF design, retrying with ridge 1e-8")
        return design_feedback_filter(weighting, cfg.ntf.taps, 1e-8)


def transmit(cfg: LinkConfig) -> TxResult:
    with _stage("fading_model"):
        plan = make_plan(cfg)
    with _stage("txdsp"):
        counted = symbol_counts(cfg, plan)
        seeds = _seeds(cfg.seed, len(plan), tag=0)
        bits, frames, waves = [], [], []
        for band, n, s in zip(plan, counted, seeds):
            total = n + cfg.rx.tail_guard
            b = generate_bits(total * band.bits_per_symbol, s)
            frame = SymbolFrame(map_symbols(b, band.format), band.format, cfg.rx.preamble_len, s)
            bb = shape_and_resample(frame, band.rolloff, band.baud_hz, cfg.dac_rate_hz, cfg.rx.rrc_span)
            width = band.baud_hz * (1 + band.rolloff)
            waves.append(upconvert(bb, band.carrier_hz, None if band.is_baseband else width))
            bits.append(b)
            frames.append(frame)
        x = fdm_multiplex(waves, plan)
    with _stage("ns_core"):
        design = design_ntf(cfg, plan) if cfg.noise_shaping else None
    return TxResult(plan, bits, frames, counted, x, design)


def _zero_design(cfg: LinkConfig) -> NtfDesign:
    g = np.zeros(cfg.ntf.taps)
    return NtfDesign(g, float("nan"), np.roots(np.concatenate(([1.0], g))), cfg.ntf.grid_size, cfg.dac_rate_hz)


def quantize_tx(cfg: LinkConfig, tx: TxResult, clip1_rms=None, clip2_rms=None):
    """Noise-shaped (or plain) quantization of the multiplexed signal.

    Returns ``(levels, clip1_count, clip2_count)``. The multiplexed signal is
    unit RMS so clip levels in RMS units are absolute amplitudes.
    """
    c1 = cfg.clips.clip1_rms if clip1_rms is None else clip1_rms
    c2 = cfg.clips.clip2_rms if clip2_rms is None else clip2_rms
    scale = cfg.clips.quantizer_rms * (c1 / cfg.clips.clip1_rms)
    q = QuantizerSpec(cfg.dac_bits, scale)
    with _stage("ns_core"):
        design = tx.design if tx.design is not None else _zero_design(cfg)
        if not cfg.noise_shaping:
            y = quantize(np.clip(tx.x.samples, -c1, c1), q)
            return y, int(np.count_nonzero(np.abs(tx.x.samples) > c1)), 0
        trace = shape(tx.x.samples, design, q, ClipSpec(c1, c2))
    return trace.y, trace.clip1_count, trace.clip2_count


def optical_tx(cfg: LinkConfig, levels: np.ndarray) -> link.OpticalField:
    """DAC -> EA -> MZM -> fiber. Returns the field at the fiber output."""
    fe = cfg.frontend
    with _stage("link_physics"):
        v = link.dac_reconstruct(levels, cfg.dac_rate_hz)
        v = link.rapp_amplify(v, fe.ea)
        v = link.drive_scale(v, fe.mzm)
        laser_seed = _seeds(cfg.seed, 1, tag=1)[0] if cfg.noise else None
        carrier = link.laser_source(len(v), cfg.dac_rate_hz, fe.laser, laser_seed, cfg.fiber.wavelength_nm)
        e = link.mzm_modulate(v, carrier, fe.mzm)
        return link.fiber_propagate(e, cfg.fiber)


def receive(cfg: LinkConfig, tx: TxResult, e_fiber: link.OpticalField, rop_dbm: float, noise_seed=None):
    """VOA -> PD -> ADC -> Rx DSP. Returns (metrics per band, rx waveform)."""
    fe = cfg.frontend
    with _stage("link_physics"):
        e = link.voa_set_rop(e_fiber, rop_dbm)
        i = link.photodetect(e, fe.pd, noise_seed if cfg.noise else None)
        rx = link.adc_sample(i, fe.adc.enob, full_scale_rms=fe.adc.full_scale_rms)
    with _stage("rxdsp"):
        streams = de_fdm(rx, tx.plan, cfg.rx.rrc_span)

        def one_band(k):
            band, frame, bits, n = tx.plan.bands[k], tx.frames[k], tx.bits[k], tx.counted_symbols[k]
            sync = synchronize(streams[k].samples, frame.preamble, band.rolloff, cfg.rx.sync_max_lag,
                               cfg.rx.rrc_span)
            state = EqualizerState.center_spike(cfg.rx.eq_taps, cfg.rx.mu_train, cfg.rx.mu_dd)
            s_hat = lms_equalize(sync.stream, frame.preamble, state, band.format, n_symbols=n)
            return demap_and_count(s_hat, bits[: n * band.bits_per_symbol], band.format,
                                   cfg.rx.discard, cfg.fec_thresholds)

        metrics = [one_band(k) for k in range(len(tx.plan))]
    return metrics, rx


# -- PSD helpers -----------------------------------------------------------

def psd_db(x, rate_hz: float, nperseg: int) -> tuple[list[float], list[float]]:
    f, p = signal.welch(np.real(x), fs=rate_hz, nperseg=min(nperseg, len(x)), window="hann", detrend=False)
    return [float(v) for v in f], [float(v) for v in 10 * np.log10(np.maximum(p, 1e-300))]


def _band_info(plan: BandPlan) -> list[dict]:
    return [
        {
            "name": f"band{i + 1}",
            "format": b.format,
            "baud_hz": b.baud_hz,
            "carrier_hz": b.carrier_hz,
            "rolloff": b.rolloff,
            "power_weight": b.power_weight,
            "occupied_hz": list(b.occupied),
        }
        for i, b in enumerate(plan)
    ]


# -- public operations -----------------------------------------------------

def run_link(cfg: LinkConfig) -> RunReport:
    t0 = time.perf_counter()
    tx = transmit(cfg)
    levels, c1, c2 = quantize_tx(cfg, tx)
    e = optical_tx(cfg, levels)
    metrics, rx = receive(cfg, tx, e, cfg.rop_dbm, _seeds(cfg.seed, 1, tag=2)[0])
    agg, base, imp = rate_summary(tx.plan)
    n = cfg.psd_nperseg
    psd = {}
    for name, x in (("tx", tx.x.samples), ("ns", levels), ("rx", rx.samples)):
        f, p = psd_db(x, cfg.dac_rate_hz, n)
        psd[name] = {"freq_hz": f, "psd_db": p}
    return RunReport(
        bands=_band_info(tx.plan),
        metrics=metrics,
        aggregate_rate_gbps=agg,
        baseline_rate_gbps=base,
        improvement_pct=imp,
        ntf=tx.design.to_dict() if tx.design is not None else None,
        psd=psd,
        shaping={"clip1_count": c1, "clip2_count": c2, "samples": len(levels)},
        rop_dbm=cfg.rop_dbm,
        config=cfg.to_dict(),
        wall_time_s=time.perf_counter() - t0,
    )


@dataclass
class RopSweep:
    rows: list[dict] = field(default_factory=list)
    band_names: list[str] = field(default_factory=list)

    def column(self, band: int, key: str = "ber") -> np.ndarray:
        return np.array([r["metrics"][band][key] for r in self.rows])

    @property
    def rops(self) -> np.ndarray:
        return np.array([r["rop_dbm"] for r in self.rows])


def _workers(cfg: LinkConfig) -> int:
    return cfg.workers or os.cpu_count() or 1


def sweep_rop(cfg: LinkConfig, rop_list=None) -> RopSweep:
    """One receiver run per ROP on a shared transmitter and NTF design."""
    rops = sorted(float(r) for r in (cfg.rop_sweep if rop_list is None else rop_list))
    if not rops:
        raise ValueError("empty ROP list")
    tx = transmit(cfg)
    levels, _, _ = quantize_tx(cfg, tx)
    e = optical_tx(cfg, levels)
    # every point reuses the receiver-noise realisation of run_link (common
    # random numbers), so neighbouring points differ only through the ROP
    seed = _seeds(cfg.seed, 1, tag=2)[0]

    def job(k):
        metrics, _ = receive(cfg, tx, e, rops[k], seed)
        return {"rop_dbm": rops[k], "metrics": [m.to_dict() for m in metrics]}

    with ThreadPoolExecutor(max_workers=_workers(cfg)) as pool:
        rows = list(pool.map(job, range(len(rops))))
    return RopSweep(rows=rows, band_names=[f"band{i + 1}" for i in range(len(tx.plan))])


@dataclass
class ClipSweep:
    clip1: list[float]
    clip2: list[float]
    worst_ber: np.ndarray  # [len(clip1), len(clip2)]
    best: tuple[float, float]
    best_ber: float
    on_edge: bool


def sweep_clips(cfg: LinkConfig, clip1_grid=None, clip2_grid=None) -> ClipSweep:
    """Exhaustive grid over clip levels; cell value is the worst-band BER."""
    g1 = list(cfg.clips.sweep_clip1 if clip1_grid is None else clip1_grid)
    g2 = list(cfg.clips.sweep_clip2 if clip2_grid is None else clip2_grid)
    if not g1 or not g2:
        raise ValueError("clip grids must be non-empty")
    tx = transmit(cfg)
    seed = _seeds(cfg.seed, 1, tag=2)[0]
    cells = [(i, j) for i in range(len(g1)) for j in range(len(g2))]

    def job(cell):
        i, j = cell
        levels, _, _ = quantize_tx(cfg, tx, g1[i], g2[j])
        e = optical_tx(cfg, levels)
        metrics, _ = receive(cfg, tx, e, cfg.rop_dbm, seed)
        worst = max(metrics, key=lambda m: m.ber)
        return worst.ber, worst.bit_count

    with ThreadPoolExecutor(max_workers=_workers(cfg)) as pool:
        values = list(pool.map(job, cells))
    grid = np.array([v[0] for v in values]).reshape(len(g1), len(g2))
    i, j = np.unravel_index(int(np.argmin(grid)), grid.shape)
    bits = values[i * len(g2) + j][1]

    def edge(a, b):
        return (len(g1) > 1 and a in (0, len(g1) - 1)) or (len(g2) > 1 and b in (0, len(g2) - 1))

    # Cells within two binomial standard errors of the best are statistical
    # ties (a flat axis produces many); warn only if all of them sit on the edge.
    tol = 2 * np.sqrt(grid[i, j] * (1 - grid[i, j]) / bits)
    ties = np.argwhere(grid <= grid[i, j] + tol)
    on_edge = all(edge(a, b) for a, b in ties)
    if on_edge:
        warnings.warn(f"clip sweep optimum ({g1[i]}, {g2[j]}) lies on the grid edge; widen the grid",
                      stacklevel=2)
    return ClipSweep(g1, g2, grid, (g1[i], g2[j]), float(grid[i, j]), bool(on_edge))


@dataclass
class FadingProbe:
    freqs_hz: np.ndarray
    response_db: np.ndarray
    analytic_db: np.ndarray
    analytic_notches_hz: list[float]
    measured_notches_hz: list[float]
    dip_depths_db: list[float]


def _tone_response(cfg: LinkConfig, fiber: FiberParams, freqs, n: int, depth: float) -> np.ndarray:
    fe = cfg.frontend
    t = np.arange(n)
    carrier = link.laser_source(n, cfg.dac_rate_hz, fe.laser, None, fiber.wavelength_nm)
    out = np.empty(len(freqs))
    for k, f in enumerate(freqs):
        v = SampledWaveform(depth * fe.mzm.vpi * np.cos(2 * np.pi * f * t / cfg.dac_rate_hz),
                                 cfg.dac_rate_hz, "passband")
        e = link.fiber_propagate(link.mzm_modulate(v, carrier, fe.mzm), fiber)
        i = link.photodetect(e, fe.pd, None).samples
        spec = np.fft.rfft(i - np.mean(i))
        out[k] = np.abs(spec[int(round(f * n / cfg.dac_rate_hz))]) ** 2
    return out


def probe_fading(cfg: LinkConfig, f_start: float = 1e9, f_stop: float = 59e9, step: float = 20e6,
                 depth: float = 0.02, dip_db: float = 30.0) -> FadingProbe:
    """Small-signal tone sweep through MZM -> fiber -> PD with all noise off.

    Tones sit on FFT bins of a ``rate/step``-point record. The response is the
    received RF power at each tone relative to a zero-length fiber. Measured
    notches are local minima deeper than ``dip_db``. Span loss is taken out so
    that the response isolates fading.
    """
    n = int(round(cfg.dac_rate_hz / step))
    freqs = np.arange(round(f_start / step), round(f_stop / step) + 1) * step
    b2b = FiberParams(**{**cfg.fiber.__dict__, "length_m": 0.0})
    ref = _tone_response(cfg, b2b, freqs, n, depth)
    meas = _tone_response(cfg, cfg.fiber, freqs, n, depth)
    # square-law detection doubles the span loss in RF dB; remove it so only fading remains
    loss_db = 2 * cfg.fiber.attenuation_db_km * cfg.fiber.length_m / 1e3
    resp = 10 * np.log10(np.maximum(meas, 1e-300) / ref) + loss_db
    analytic = 20 * np.log10(np.maximum(power_fading_response(cfg.fiber, freqs).magnitude, 1e-15))
    found, depths = [], []
    for k in range(1, len(resp) - 1):
        if resp[k] < -dip_db and resp[k] <= resp[k - 1] and resp[k] <= resp[k + 1]:
            found.append(float(freqs[k]))
            depths.append(float(resp[k]))
    notches = [f for f in notch_frequencies(cfg.fiber, f_stop) if f >= f_start]
    return FadingProbe(freqs, resp, analytic, notches, found, depths)


# -- report files ----------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def write_curves(sweep: RopSweep, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["rop_dbm"]
        for name in sweep.band_names:
            header += [f"ber_{name}", f"snr_{name}"]
        w.writerow(header)
        for row in sweep.rows:
            cells = [_fmt(row["rop_dbm"])]
            for m in row["metrics"]:
                cells += [_fmt(m["ber"]), _fmt(m["snr_db"])]
            w.writerow(cells)


def write_psd(freqs, psd, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["freq_hz", "psd_db"])
        for f, p in zip(freqs, psd):
            w.writerow([_fmt(f), _fmt(p)])


def emit_reports(report: RunReport | None, out_dir, sweep: RopSweep | None = None) -> list[Path]:
    """Write results.json, ntf.json, psd_*.csv and (for non-empty sweeps) curves.csv."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    written = []
    if report is not None:
        p = out / "results.json"
        p.write_text(report.to_json() + "\n")
        written.append(p)
        if report.ntf is not None:
            p = out / "ntf.json"
            p.write_text(json.dumps(report.ntf, indent=2, sort_keys=True) + "\n")
            written.append(p)
        for name, d in report.psd.items():
            p = out / f"psd_{name}.csv"
            write_psd(d["freq_hz"], d["psd_db"], p)
            written.append(p)
    if sweep is not None and sweep.rows:
        p = out / "curves.csv"
        write_curves(sweep, p)
        written.append(p)
    return written
