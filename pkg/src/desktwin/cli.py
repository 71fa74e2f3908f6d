"""Operator command line.

Verbs:
    run        execute a scenario (in-process by default)
    serve      run only the backplane, listening on TCP
    client     run a single client role against a remote backplane
    summarize  digest a trace into stats and plot files

Exit codes: 0 success, 2 configuration error, 3 session failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import gateway, harness
from .backplane import run_session
from .errors import DesktwinError, ParseError, ValidationError
from .scenario import ROLES, parse_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SESSION = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="desktwin",
        description="Lock-step co-simulated vehicle twin over a simulated Ethernet switch",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run a scenario end to end")
    run.add_argument("--config", required=True, help="scenario YAML file")
    run.add_argument("--trace", help="trace CSV path (overrides the scenario)")
    run.add_argument("--seed", type=int, help="noise seed (overrides the scenario)")
    run.add_argument(
        "--multi-process",
        action="store_true",
        help="spawn each client as its own OS process over TCP",
    )
    run.add_argument("--listen", default="127.0.0.1:0", help="bind address for --multi-process")
    run.add_argument("--report", help="where to write the session report JSON")

    serve = sub.add_parser("serve", help="run only the backplane over TCP")
    serve.add_argument("--config", required=True)
    serve.add_argument("--listen", default="127.0.0.1:7360")
    serve.add_argument("--trace", help="trace CSV path (overrides the scenario)")
    serve.add_argument("--report", help="where to write the session report JSON")

    client = sub.add_parser("client", help="run one client role")
    client.add_argument("role", choices=ROLES)
    client.add_argument("--config", required=True)
    client.add_argument("--connect", required=True, help="backplane address host:port")

    summarize = sub.add_parser("summarize", help="digest a trace file")
    summarize.add_argument("--trace", required=True)
    summarize.add_argument("--out", help="directory for plot files and summary.json")

    return parser


def _write_report(report, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)


def _print_report(report) -> None:
    d = report.to_dict()
    print(
        f"steps={d['steps']} sim={d['sim_duration_s']:.3f}s "
        f"wall={d['wall_clock_s']:.2f}s frames={d['frames_in']} "
        f"drops={d['fcs_drops']} trace={d['trace_path']}"
    )


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.verb == "run":
            if args.multi_process:
                if args.seed is not None:
                    print("--seed is read from the scenario file in multi-process mode",
                          file=sys.stderr)
                    return EXIT_CONFIG
                report = harness.run_multi_process(
                    args.config, trace_path=args.trace, listen=args.listen
                )
            else:
                scenario = parse_scenario(args.config)
                if args.seed is not None:
                    scenario.seed = args.seed
                report = harness.run_in_process(scenario, trace_path=args.trace)
            _write_report(report, args.report or report.trace_path + ".report.json")
            _print_report(report)
            return EXIT_OK

        if args.verb == "serve":
            scenario = parse_scenario(args.config)
            report = run_session(scenario, args.listen, trace_path=args.trace)
            _write_report(report, args.report or report.trace_path + ".report.json")
            _print_report(report)
            return EXIT_OK

        if args.verb == "client":
            scenario = parse_scenario(args.config)
            behavior = harness.build_behavior(scenario, args.role)
            handle = gateway.connect(args.connect, args.role, scenario.mac_of(args.role))
            try:
                steps = gateway.drive(handle, behavior.compute)
            finally:
                handle.close()
            print(f"{args.role}: completed {steps} steps")
            return EXIT_OK

        if args.verb == "summarize":
            summary = harness.summarize(args.trace, out_dir=args.out)
            print(json.dumps(summary.to_dict(), indent=2))
            return EXIT_OK

        raise AssertionError(f"unhandled verb {args.verb}")
    except (ParseError, ValidationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DesktwinError as exc:
        print(f"session error: {exc}", file=sys.stderr)
        return EXIT_SESSION


if __name__ == "__main__":
    sys.exit(main())
