"""Fading-aware noise shaping for low-resolution DACs in IMDD optical links."""

from .config import LinkConfig, reference_config
from .fading import BandPlan, BandRequest, FiberParams, notch_frequencies, plan_bands, power_fading_response
from .harness import RunReport, emit_reports, probe_fading, run_link, sweep_clips, sweep_rop
from .noise_shaping import ClipSpec, NtfDesign, QuantizerSpec, design_feedback_filter, shape

__all__ = [
    "BandPlan", "BandRequest", "ClipSpec", "FiberParams", "LinkConfig", "NtfDesign", "QuantizerSpec",
    "RunReport", "design_feedback_filter", "emit_reports", "notch_frequencies", "reference_config",
    "plan_bands", "power_fading_response", "probe_fading", "run_link", "shape", "sweep_clips",
    "sweep_rop",
]
