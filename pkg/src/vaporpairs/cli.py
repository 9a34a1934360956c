"""Command-line front end.

Exit codes: 0 success, 2 configuration or file-format error, 3 numerical
error, 4 insufficient statistics.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import calibration, pipeline
from ._io import atomic_write_json
from .config import ExperimentConfig, load_config, load_config_file, parse_quantity
from .errors import ConfigError, VaporPairsError


def _config(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError("--config is required")
    try:
        return load_config_file(args.config, args.overlay or ())
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from None


def _optional_config(args) -> ExperimentConfig:
    if args.config is None:
        # efficiencies for the rate back-out fall back to the built-in defaults
        return load_config("lasers: {pump_power: 6 mW, coupling_power: 27 mW}")
    return _config(args)


def _window(values):
    lo, hi = (parse_quantity(v, "time", "window") for v in values)
    return lo, hi


def cmd_waveform(args) -> int:
    m = pipeline.run_waveform(_config(args), args.output, plots=args.plot)
    print(f"tau_b={m['tau_b']:.6g} s one_over_e_time={m['one_over_e_time']:.6g} s "
          f"bandwidth={m['bandwidth']:.6g} Hz pair_rate={m['pair_rate']:.6g} /s")
    return 0


def cmd_sweep(args) -> int:
    try:
        spec = pipeline.load_sweep_spec(args.spec)
    except OSError as exc:
        raise ConfigError(f"cannot read sweep spec: {exc}") from None
    rows = pipeline.run_sweep(spec, args.output, plots=args.plot)
    print(f"{len(rows)} rows -> {Path(args.output) / 'sweep.csv'}")
    return 0


def cmd_endtoend(args) -> int:
    cfg = _config(args)
    duration = parse_quantity(args.duration, "time", "duration")
    _, res = pipeline.end_to_end(cfg, duration, args.seed, args.output,
                                 bin_width=parse_quantity(args.bin_width, "time", "bin_width"),
                                 window=_window(args.window), plots=args.plot)
    s = res.summary
    print(f"g2_max={s['g2_max']:.4g}+/-{s['g2_max_stderr']:.2g} "
          f"generation_rate={s['back_out_generation_rate']:.5g}+/-{s['back_out_generation_rate_stderr']:.2g} /s "
          f"(configured {res.truth['configured_generation_rate']:.5g})")
    return 0


def cmd_analyze(args) -> int:
    cfg = _optional_config(args)
    res = pipeline.analyze_file(args.timestamps, cfg, args.output,
                                bin_width=parse_quantity(args.bin_width, "time", "bin_width"),
                                window=_window(args.window), plots=args.plot)
    print(f"g2_max={res.summary['g2_max']:.4g}+/-{res.summary['g2_max_stderr']:.2g}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    try:
        anchors = calibration.load_anchors(args.anchors)
    except OSError as exc:
        raise ConfigError(f"cannot read anchors: {exc}") from None
    res = calibration.calibrate(cfg, anchors)
    out = Path(args.output)
    calibration.write_overlay(out / "calibrated.yaml", res)
    atomic_write_json(out / "calibration.json", pipeline._jsonable(res.to_dict()))
    for r in res.residuals:
        print(f"{r['kind']:16s} pump={r['pump_power'] * 1e3:g} mW coupling={r['coupling_power'] * 1e3:g} mW "
              f"target={r['target']:.4g} model={r['model']:.4g} ({100 * r['relative']:+.1f}%)")
    if not res.converged:
        print(f"warning: {res.message}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vaporpairs", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", "-c", required=config_required, help="YAML configuration")
        sp.add_argument("--overlay", action="append", help="extra YAML merged on top (repeatable)")
        sp.add_argument("--output", "-o", default=".", help="output directory")
        sp.add_argument("--plot", action="store_true", help="also render PNG figures")

    sp = sub.add_parser("waveform", help="JSA, waveform and metrics for one configuration")
    common(sp)
    sp.set_defaults(func=cmd_waveform)

    sp = sub.add_parser("sweep", help="coupling or pump power sweep")
    sp.add_argument("spec", help="sweep spec YAML")
    sp.add_argument("--output", "-o", default=".")
    sp.add_argument("--plot", action="store_true")
    sp.set_defaults(func=cmd_sweep)

    for name, helptext in (("endtoend", "simulate, detect and analyze"),
                           ("analyze", "analyze a BPHT or CSV timestamp file")):
        sp = sub.add_parser(name, help=helptext)
        common(sp, config_required=(name == "endtoend"))
        if name == "endtoend":
            sp.add_argument("--duration", default="600 s")
            sp.add_argument("--seed", type=int, default=0)
            sp.set_defaults(func=cmd_endtoend)
        else:
            sp.add_argument("timestamps")
            sp.set_defaults(func=cmd_analyze)
        sp.add_argument("--bin-width", default="1 ns")
        sp.add_argument("--window", nargs=2, default=["-500 ns", "1000 ns"], metavar=("LO", "HI"))

    sp = sub.add_parser("calibrate", help="fit model knobs to anchor numbers")
    common(sp)
    sp.add_argument("--anchors", help="anchor YAML (default: built-in published values)")
    sp.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VaporPairsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
