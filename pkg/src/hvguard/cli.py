"""Command-line entry point.

Exit codes: 0 when a run finished without detections, 2 when detections
occurred (or a selftest check failed), 1 on any error.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .errors import HvGuardError
from .harness import emit_report, predict, run
from .scenario import parse_scenario


def _run_one(path: str, fmt: str) -> tuple[str, int]:
    report = run(parse_scenario(Path(path).read_text()))
    return emit_report(report, fmt), report.totals.detections


def cmd_run(args: argparse.Namespace) -> int:
    if len(args.scenarios) > 1 and args.out:
        raise SystemExit("--out takes a single scenario")
    if args.jobs > 1 and len(args.scenarios) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_run_one, args.scenarios, [args.format] * len(args.scenarios)))
    else:
        results = [_run_one(path, args.format) for path in args.scenarios]
    detections = 0
    for text, found in results:
        detections += found
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
    return 2 if detections else 0


def cmd_oracle(args: argparse.Namespace) -> int:
    config = parse_scenario(Path(args.scenario).read_text())
    for attack_id, detected, latency in predict(config):
        if detected is None:
            print(f"{attack_id}\tn/a (oracle needs a fixed budget)")
        else:
            print(f"{attack_id}\tdetected={str(detected).lower()}\tlatency={'-' if latency is None else latency}")
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    from .selftest import run_all

    results = run_all(quick=not args.full)
    for result in results:
        print(result.line())
    return 0 if all(r.passed for r in results) else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hvguard", description="Hypervisor integrity-monitor simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one or more scenario files")
    p.add_argument("scenarios", nargs="+", metavar="scenario")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for several scenarios")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("oracle", help="print detection-oracle predictions per attack")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("selftest", help="run the invariant suite")
    p.add_argument("--full", action="store_true", help="use the full case counts")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (HvGuardError, OSError, ValueError) as exc:
        print(f"hvguard: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
