"""Command line front end: experiment runs, bag tooling, scenario demos.

``hmas bench analyze`` exits nonzero when the 20 cm relative-accuracy verdict
fails, so runs can gate CI-style checks.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import agents, bag, bench
from .bus import Bus
from .geo import GeodeticCoord, read_fix_csv

_CLI_KINDS = {
    "static": "static",
    "disturbed": "static_disturbed",
    "rotation": "rotation",
    "square": "translation_square",
}


def _parse_base(text: str) -> GeodeticCoord:
    try:
        lat, lon, alt = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"base must be 'lat,lon,alt', got {text!r}") from None
    return GeodeticCoord(lat, lon, alt)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmas",
                                     description="HMAS middleware kit tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p_bench = sub.add_parser("bench", help="RTK accuracy experiments")
    bench_sub = p_bench.add_subparsers(dest="bench_command", required=True)

    p_run = bench_sub.add_parser("run", help="run an experiment into a bag")
    p_run.add_argument("--kind", choices=sorted(_CLI_KINDS), required=True)
    p_run.add_argument("--seed", type=int, default=1)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--duration", type=float, default=None,
                       help="override run duration in seconds")
    p_run.add_argument("--noiseless", action="store_true")

    p_an = bench_sub.add_parser("analyze", help="per-side distances and verdicts")
    p_an.add_argument("bagfile", nargs="?", help="bag recorded by 'bench run'")
    p_an.add_argument("--fixes", help="rover fix CSV instead of a bag")
    p_an.add_argument("--base", type=_parse_base, default=bench.DEFAULT_BASE,
                      help="ENU anchor as lat,lon,alt (default: the bench base)")
    p_an.add_argument("--expected-side", type=float, default=bench.DEFAULT_SIDE_M)
    p_an.add_argument("--convergence-s", type=float, default=bench.CONVERGENCE_S)
    p_an.add_argument("--kind", choices=sorted(_CLI_KINDS),
                      help="experiment kind, to exclude its disturbance windows")
    p_an.add_argument("--seed", type=int, default=1,
                      help="seed of the generating run (with --kind)")
    p_an.add_argument("--csv", help="write the distance series CSV here")
    p_an.add_argument("--report", help="write the summary report CSV here")

    p_bag = sub.add_parser("bag", help="record/replay/inspect bags")
    bag_sub = p_bag.add_subparsers(dest="bag_command", required=True)

    p_rec = bag_sub.add_parser("record", help="re-record filtered traffic from a source")
    p_rec.add_argument("--filter", action="append", required=True, dest="filters",
                       help="glob over full topic names (repeatable)")
    p_rec.add_argument("-o", "--out", required=True)
    src = p_rec.add_mutually_exclusive_group(required=True)
    src.add_argument("--source", help="bag to replay as the traffic source")
    src.add_argument("--scenario", help="scenario JSON to run as the traffic source")

    p_rep = bag_sub.add_parser("replay", help="republish a bag onto a fresh bus")
    p_rep.add_argument("bagfile")
    speed = p_rep.add_mutually_exclusive_group()
    speed.add_argument("--rate", type=float, help="realtime factor r > 0")
    speed.add_argument("--fast", action="store_true", help="as fast as possible")

    p_info = bag_sub.add_parser("info", help="record count, topics, time span")
    p_info.add_argument("bagfile")

    p_scn = sub.add_parser("scenario", help="agent demos")
    scn_sub = p_scn.add_subparsers(dest="scenario_command", required=True)
    p_scn_run = scn_sub.add_parser("run", help="run a scenario JSON")
    p_scn_run.add_argument("scenario")

    return parser


def _cmd_bench_run(args) -> int:
    kwargs = {"noiseless": args.noiseless}
    if args.duration is not None:
        kwargs["duration_s"] = args.duration
    spec = bench.make_spec(_CLI_KINDS[args.kind], args.seed, **kwargs)
    path = bench.run_experiment(spec, args.out)
    info = bag.bag_info(path)
    print(f"wrote {path}: {info.record_count} records on {len(info.topics)} topics, "
          f"span [{info.start_stamp:.3f}, {info.end_stamp:.3f}] s")
    return 0


def _cmd_bench_analyze(args) -> int:
    if bool(args.bagfile) == bool(args.fixes):
        print("analyze needs exactly one of: a bag file or --fixes CSV", file=sys.stderr)
        return 2
    windows = None
    convergence = args.convergence_s
    if args.kind is not None:
        spec = bench.make_spec(_CLI_KINDS[args.kind], args.seed)
        windows = bench.side_windows(spec)
    if args.fixes:
        fixes_by_rover = {}
        for fix in read_fix_csv(args.fixes):
            fixes_by_rover.setdefault(fix.rover_id, []).append(fix)
        series = bench.side_distances(fixes_by_rover, args.base)
        report = bench.summarize(series, args.expected_side, windows, convergence)
    else:
        series, report = bench.analyze_bag(args.bagfile, args.base, args.expected_side,
                                           windows, convergence)
    if args.csv:
        bench.emit_csv(series, args.csv)
    if args.report:
        bench.emit_csv(report, args.report)
    for side in bench.SIDES:
        s = report.sides[side]
        print(f"{side:>6}: mean {s.mean_m:.3f} m, max |err| {s.max_abs_error_m:.3f} m, "
              f"{len(s.peaks)} peak(s), within_20cm={s.within_20cm}, stable={s.stable}")
    print(f"verdicts: within_20cm={report.within_20cm} stable={report.stable}")
    return 0 if report.within_20cm else 1


def _cmd_bag_record(args) -> int:
    if args.source:
        bus = Bus()
        recorder = bag.record(bus, args.filters, args.out)
        bag.replay(args.source, bus, fast=True)
    else:
        scenario = agents.load_scenario(args.scenario)
        recorder = None

        def attach(world) -> None:
            nonlocal recorder
            recorder = bag.record(world.bus, args.filters, args.out)

        agents.run_scenario(scenario, on_world=attach)
    path = recorder.stop()
    info = bag.bag_info(path)
    print(f"wrote {path}: {info.record_count} records on {len(info.topics)} topics")
    return 0


def _cmd_bag_replay(args) -> int:
    bus = Bus()
    stats = bag.replay(args.bagfile, bus, rate=args.rate,
                       fast=args.fast or args.rate is None)
    for topic in sorted(stats.topics):
        print(f"{topic}: {stats.topics[topic]} message(s)")
    print(f"replayed {stats.records} record(s)")
    return 0


def _cmd_bag_info(args) -> int:
    info = bag.bag_info(args.bagfile)
    print(f"records: {info.record_count}")
    if info.record_count:
        print(f"span: [{info.start_stamp:.6f}, {info.end_stamp:.6f}] s")
    for topic in sorted(info.topics):
        print(f"  {topic}: {info.topics[topic]}")
    return 0


def _cmd_scenario_run(args) -> int:
    scenario = agents.load_scenario(args.scenario)
    world = agents.run_scenario(scenario)
    summary = {
        "duration_s": world.time,
        "agents": {
            name: {
                "position_enu": [round(v, 3) for v in world.agents[name].position],
                "fixes": world.fix_counts[name],
            }
            for name in sorted(world.agents)
        },
    }
    print(json.dumps(summary, indent=2))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "bench":
        if args.bench_command == "run":
            return _cmd_bench_run(args)
        return _cmd_bench_analyze(args)
    if args.command == "bag":
        if args.bag_command == "record":
            return _cmd_bag_record(args)
        if args.bag_command == "replay":
            return _cmd_bag_replay(args)
        return _cmd_bag_info(args)
    return _cmd_scenario_run(args)


if __name__ == "__main__":
    sys.exit(main())
