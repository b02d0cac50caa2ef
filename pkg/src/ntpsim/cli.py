"""Command line entry point: ``ntpsim run`` and ``ntpsim validate``."""

from __future__ import annotations

import argparse
import sys

from .report import emit_report
from .scenario import SEED_ENV, Outcome, ScenarioError, execute, load_scenario
from .simnet import SimulationFault

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ATTACK_SUCCEEDED = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ntpsim", description="NTP broadcast-mode attack simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario and print its report",
                         epilog=f"The default seed comes from the scenario, then ${SEED_ENV}, then 0.")
    run.add_argument("scenario")
    run.add_argument("--format", choices=("text", "json"), default="text")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None, help="write the report here instead of stdout")
    val = sub.add_parser("validate", help="check a scenario file without running it")
    val.add_argument("scenario")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = load_scenario(args.scenario)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ScenarioError as exc:
        for err in exc.errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    if args.command == "validate":
        for w in spec.warnings:
            print(f"warning: {w}", file=sys.stderr)
        print(f"{args.scenario}: ok ({len(spec.hosts)} hosts, {float(spec.duration):g} s)")
        return EXIT_OK
    try:
        result = execute(spec, args.seed)
    except (SimulationFault, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    text = emit_report(result.timeline, result.verdict, args.format)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_ATTACK_SUCCEEDED if result.verdict.outcome is Outcome.SUCCEEDED else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
