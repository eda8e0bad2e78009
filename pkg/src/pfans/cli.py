"""Command line entry point: ``pfans <verb> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import LinkConfig, set_path
from .rxdsp import fec_key


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(args) -> LinkConfig:
    d = LinkConfig().to_dict()
    if args.config:
        d = LinkConfig.from_json(Path(args.config).read_text()).to_dict()
    if args.paper_2bit:
        d["dac_bits"] = 2
    elif args.paper_3bit:
        d["dac_bits"] = 3
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key.path=value, got {item!r}")
        set_path(d, key.strip(), _parse_value(value))
    if args.seed is not None:
        d["seed"] = args.seed
    if getattr(args, "rop", None) is not None:
        d["rop_dbm"] = args.rop
    if getattr(args, "symbols", None) is not None:
        d["symbols_per_band"] = args.symbols
    return LinkConfig.from_dict(d)


def _print_metrics(report: harness.RunReport) -> None:
    for band, m in zip(report.bands, report.metrics):
        verdicts = " ".join(f"{k}:{'pass' if v else 'FAIL'}" for k, v in m.fec_verdicts.items())
        print(f"{band['name']} {band['format']:6s} {band['baud_hz'] / 1e9:5.1f} GBd @ "
              f"{band['carrier_hz'] / 1e9:7.3f} GHz  BER {m.ber:.3e}  SNR {m.snr_db:6.2f} dB  {verdicts}")
    print(f"aggregate {report.aggregate_rate_gbps:.1f} Gb/s, baseline {report.baseline_rate_gbps:.1f} Gb/s, "
          f"improvement {report.improvement_pct:.1f}%")


def _required_pass(cfg: LinkConfig, metrics: list[dict]) -> bool:
    return all(m["fec_verdicts"].get(fec_key(t), m["ber"] <= t) for m in metrics for t in cfg.required_fec)


def cmd_design(cfg: LinkConfig, args) -> int:
    plan = harness.make_plan(cfg)
    design = harness.design_ntf(cfg, plan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ntf.json").write_text(json.dumps(design.to_dict(), indent=2, sort_keys=True) + "\n")
    print("notches (GHz):", ", ".join(f"{f / 1e9:.3f}" for f in plan.notches_hz))
    for i, b in enumerate(plan, 1):
        print(f"band{i}: {b.format} {b.baud_hz / 1e9:g} GBd at {b.carrier_hz / 1e9:.4f} GHz")
    print(f"{design.taps} taps, objective {design.objective_value:.4g}, wrote {out / 'ntf.json'}")
    return 0


def cmd_run(cfg: LinkConfig, args) -> int:
    report = harness.run_link(cfg)
    harness.emit_reports(report, args.out)
    _print_metrics(report)
    print(f"wall time {report.wall_time_s:.1f} s, reports in {args.out}")
    return 0 if report.all_required_pass else 1


def cmd_sweep_rop(cfg: LinkConfig, args) -> int:
    rops = args.rops if args.rops else None
    sweep = harness.sweep_rop(cfg, rops)
    harness.emit_reports(None, args.out, sweep)
    for row in sweep.rows:
        cells = "  ".join(f"{m['ber']:.3e}" for m in row["metrics"])
        print(f"{row['rop_dbm']:6.1f} dBm  {cells}")
    at = [r for r in sweep.rows if np.isclose(r["rop_dbm"], cfg.rop_dbm)]
    ok = _required_pass(cfg, at[0]["metrics"]) if at else all(
        _required_pass(cfg, r["metrics"]) for r in sweep.rows)
    return 0 if ok else 1


def cmd_sweep_clips(cfg: LinkConfig, args) -> int:
    res = harness.sweep_clips(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "clips.csv", "w") as fh:
        fh.write("clip1_rms,clip2_rms,worst_ber\n")
        for i, c1 in enumerate(res.clip1):
            for j, c2 in enumerate(res.clip2):
                fh.write(f"{c1!r},{c2!r},{float(res.worst_ber[i, j])!r}\n")
    print(f"best clip1={res.best[0]} clip2={res.best[1]} worst-band BER {res.best_ber:.3e}"
          + ("  (on grid edge)" if res.on_edge else ""))
    return 0 if all(res.best_ber <= t for t in cfg.required_fec) else 1


def cmd_probe_fading(cfg: LinkConfig, args) -> int:
    probe = harness.probe_fading(cfg, args.f_start * 1e9, args.f_stop * 1e9, args.step * 1e6)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "fading_probe.csv", "w") as fh:
        fh.write("freq_hz,response_db,analytic_db\n")
        for f, r, a in zip(probe.freqs_hz, probe.response_db, probe.analytic_db):
            fh.write(f"{float(f)!r},{float(r)!r},{float(a)!r}\n")
    print("analytic notches (GHz):", ", ".join(f"{f / 1e9:.3f}" for f in probe.analytic_notches_hz))
    print("measured notches (GHz):", ", ".join(
        f"{f / 1e9:.3f} ({d:.1f} dB)" for f, d in zip(probe.measured_notches_hz, probe.dip_depths_db)))
    return 0 if len(probe.measured_notches_hz) == len(probe.analytic_notches_hz) else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (LinkConfig schema)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--paper-3bit", action="store_true", help="reference three-band setup with a 3-bit DAC (default)")
    common.add_argument("--paper-2bit", action="store_true", help="reference three-band setup with a 2-bit DAC")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. --set fiber.length_m=0 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pfans", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("design", parents=[common], help="design the NTF only")
    r = sub.add_parser("run", parents=[common], help="single end-to-end run")
    r.add_argument("--rop", type=float, help="received optical power in dBm")
    r.add_argument("--symbols", type=int, help="symbols of the slowest band")
    s = sub.add_parser("sweep-rop", parents=[common], help="BER versus ROP")
    s.add_argument("--rops", type=float, nargs="+", help="ROP list in dBm (default: config rop_sweep)")
    s.add_argument("--rop", type=float, help="ROP whose verdicts set the exit code")
    s.add_argument("--symbols", type=int)
    c = sub.add_parser("sweep-clips", parents=[common], help="grid search over Clip_1/Clip_2")
    c.add_argument("--symbols", type=int)
    f = sub.add_parser("probe-fading", parents=[common], help="tone sweep through the optical link")
    f.add_argument("--f-start", type=float, default=1.0, help="GHz")
    f.add_argument("--f-stop", type=float, default=59.0, help="GHz")
    f.add_argument("--step", type=float, default=20.0, help="MHz")
    return p


COMMANDS = {
    "design": cmd_design, "run": cmd_run, "sweep-rop": cmd_sweep_rop, "sweep-clips": cmd_sweep_clips,
    "probe-fading": cmd_probe_fading,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
    except (KeyError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.verb](cfg, args)
    except harness.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
