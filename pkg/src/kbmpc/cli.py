"""Command line entry point: ``kbmpc run | metrics | plot | track gen``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_scenario


def _cmd_run(args) -> int:
    from .report import emit_report
    from .sim import run_scenario

    cfg = load_scenario(args.scenario)
    simlog, metrics = run_scenario(cfg, duration=args.duration, use_obstacles=not args.no_obstacles)
    emit_report(simlog, metrics, args.out, plots=not args.no_plots)
    print(json.dumps(metrics.to_dict(), indent=2))
    if simlog.status != "completed":
        print(f"run {simlog.status}: {simlog.message}", file=sys.stderr)
        return 2
    return 0


def _cmd_metrics(args) -> int:
    from .report import read_log_csv
    from .sim import compute_metrics

    metrics = compute_metrics(read_log_csv(args.log))
    print(json.dumps(metrics.to_dict(), indent=2))
    return 0


def _cmd_plot(args) -> int:
    from .report import TRACK_FILE, plot_log, read_log_csv

    log_path = Path(args.log)
    for f in plot_log(read_log_csv(log_path), args.out, track_file=log_path.with_name(TRACK_FILE)):
        print(f)
    return 0


def _cmd_track_gen(args) -> int:
    from .path import write_track_csv
    from .track import generate_track, load_track_spec

    segments, spacing, start, heading = load_track_spec(args.spec)
    pts = generate_track(segments, spacing, start, heading)
    write_track_csv(args.out, pts)
    print(f"wrote {len(pts)} points to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kbmpc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a closed-loop scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--duration", type=float)
    p.add_argument("--no-obstacles", action="store_true")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("metrics", help="recompute metrics from a log CSV")
    p.add_argument("--log", required=True)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("plot", help="plot a log CSV")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("track", help="track utilities")
    tsub = p.add_subparsers(dest="track_command", required=True)
    g = tsub.add_parser("gen", help="generate a track CSV from a segment spec")
    g.add_argument("--spec", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_track_gen)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
