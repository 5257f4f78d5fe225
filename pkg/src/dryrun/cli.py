"""Command line interface.

    dryrun run --workload F --mode {naive|m|md|mds} [--net wifi|cellular|custom ...]
    dryrun replay --recording F [--input F] [--report F]
    dryrun compare R1 R2 ... [--report F] [--csv F] [--figdir D]
    dryrun gen --profile NAME [--seed N] [-o F] [--device-map-out F]
"""

from __future__ import annotations

import argparse
import hashlib
import sys

from .bench import MetricsReport, RunConfig, compare, compare_csv, run_bench
from .device import DEFAULT_DEVICE_MAP_TEXT, Device, default_device_map, parse_device_map
from .errors import DryrunError
from .memsync import MemoryImage, PAGE_SIZE
from .recording import load_recording, replay
from .transport import NetworkConfig, PRESETS
from .workload import PROFILES, bundled_workload

BUNDLED = tuple(PROFILES) + ("mt3", "violate-read", "violate-write", "violate-window")


def _net_from_args(args) -> NetworkConfig | str:
    if args.net in PRESETS:
        return args.net
    if args.net == "custom":
        if args.rtt_ms is None or args.bw_mbps is None:
            raise SystemExit("--net custom needs --rtt-ms and --bw-mbps")
        return NetworkConfig(int(args.rtt_ms * 1000), int(args.bw_mbps * 1_000_000), "custom")
    raise SystemExit(f"unknown net {args.net!r}")


def _cmd_run(args) -> int:
    config = RunConfig(
        workload=args.workload,
        mode=args.mode,
        net=_net_from_args(args),
        seed=args.seed,
        confidence_k=args.k,
        speculate=not args.no_speculation,
        device_map=args.device_map,
        history=args.history,
        inject_at=args.inject_at,
        inject_poll_at=args.inject_poll_at,
        input_seed=args.input_seed,
        schedule_seed=args.schedule_seed,
        restart_ms=args.restart_ms,
        report=args.report,
        recording=args.recording,
        csv=args.csv,
        figdir=args.figdir,
    )
    report = run_bench(config)
    sys.stdout.write(report.to_text())
    if report.values.get("error"):
        sys.stderr.write(f"run failed: {report.values['error']}\n")
        return 1
    return 0


def _cmd_replay(args) -> int:
    recording = load_recording(args.recording)
    if args.device_map:
        with open(args.device_map) as fh:
            dmap = parse_device_map(fh.read())
    else:
        dmap = default_device_map()
    device = Device(dmap, MemoryImage("device"), seed=args.seed)

    new_inputs = []
    if args.input:
        with open(args.input, "rb") as fh:
            blob = fh.read()
        new_inputs = [blob[i : i + PAGE_SIZE] for i in range(0, len(blob), PAGE_SIZE)]
    result = replay(recording, device, new_inputs)

    lines = [
        f"recording = {args.recording}",
        f"entries = {len(recording.entries)}",
        f"entries_replayed = {result.entries_replayed}",
        f"divergence = {'' if result.divergence is None else result.divergence}",
        f"jobs = {len(result.outputs)}",
    ]
    for job_seq in sorted(result.outputs):
        digest = hashlib.sha256(b"".join(result.outputs[job_seq])).hexdigest()[:16]
        lines.append(f"job_{job_seq}_output_digest = {digest}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
    return 0 if result.divergence is None else 1


def _cmd_compare(args) -> int:
    reports = []
    for path in args.reports:
        with open(path) as fh:
            reports.append(MetricsReport.from_text(fh.read()))
    table = compare(reports)
    sys.stdout.write(table)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(table)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(compare_csv(reports))
    if args.figdir:
        from .figures import render_compare_figures

        for path in render_compare_figures(reports, args.figdir):
            sys.stdout.write(f"# wrote {path}\n")
    return 0


def _cmd_gen(args) -> int:
    if args.list:
        for name in BUNDLED:
            sys.stdout.write(name + "\n")
        return 0
    text = bundled_workload(args.profile, default_device_map(), seed=args.seed)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.device_map_out:
        with open(args.device_map_out, "w") as fh:
            fh.write(DEFAULT_DEVICE_MAP_TEXT)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dryrun", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a workload and emit a metrics report")
    p.add_argument("--workload", required=True)
    p.add_argument("--mode", choices=("naive", "m", "md", "mds"), default="naive")
    p.add_argument("--net", default="wifi", help="wifi, cellular, or custom")
    p.add_argument("--rtt-ms", type=float, default=None)
    p.add_argument("--bw-mbps", type=float, default=None)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--no-speculation", action="store_true")
    p.add_argument("--device-map", default=None)
    p.add_argument("--history", default=None)
    p.add_argument("--inject-at", type=int, default=None)
    p.add_argument("--inject-poll-at", type=int, default=None)
    p.add_argument("--input-seed", type=int, default=None)
    p.add_argument("--schedule-seed", type=int, default=None)
    p.add_argument("--restart-ms", type=int, default=0,
                   help="virtual rollback cost charged per misprediction recovery")
    p.add_argument("--report", default=None)
    p.add_argument("--recording", default=None)
    p.add_argument("--csv", default=None)
    p.add_argument("--figdir", default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("replay", help="replay a recording with no driver present")
    p.add_argument("--recording", required=True)
    p.add_argument("--input", default=None, help="binary file split into 4 KiB input pages")
    p.add_argument("--device-map", default=None)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("compare", help="compare two or more metric reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--report", default=None)
    p.add_argument("--csv", default=None)
    p.add_argument("--figdir", default=None)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("gen", help="emit a bundled workload (or the device map)")
    p.add_argument("--profile", default="micro", help=f"one of: {', '.join(BUNDLED)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--device-map-out", default=None)
    p.add_argument("--list", action="store_true", help="list bundled profile names")
    p.set_defaults(func=_cmd_gen)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DryrunError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
