"""Command-line scenario runner.

    ccnstream list
    ccnstream run basic --seed 7 --trace out.jsonl
    ccnstream check out.jsonl tests/golden/basic.seed7.jsonl

Exit status: 0 when every expectation holds, 1 on expectation failure or
trace mismatch, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import fabric, trace_checks
from .scenarios import SCENARIOS, Flags, run_scenario


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value < 1:
            raise argparse.ArgumentTypeError(f"must be >= 1: {text}")
        return value
    return parse


def _rate(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"drop rate must be in [0, 1]: {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccnstream",
                                     description="Bidirectional streams over a simulated CCN fabric.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and evaluate its expectations")
    run.add_argument("scenario", choices=sorted(SCENARIOS))
    run.add_argument("--seed", type=int, default=1)
    run.add_argument("--crypto", choices=("null", "real"), default="null")
    run.add_argument("--drop-rate", type=_rate, default=None,
                     help="Bernoulli loss on every link (default 0; loss-stress defaults to 0.05)")
    run.add_argument("--latency-ms", type=int, default=10)
    run.add_argument("--segment-size", type=_positive(int), default=1024)
    run.add_argument("--window", type=_positive(int), default=8)
    run.add_argument("--rto-ms", type=_positive(int), default=500)
    run.add_argument("--max-retries", type=int, default=5)
    run.add_argument("--open-retries", type=int, default=3)
    run.add_argument("--open-timeout-ms", type=_positive(int), default=1000)
    run.add_argument("--pit-timeout-ms", type=_positive(int), default=4000)
    run.add_argument("--max-time", type=int, default=None, help="simulated-time limit in ms")
    run.add_argument("--trace", type=Path, help="write the JSONL trace here")
    run.add_argument("--golden", type=Path, help="also compare the trace with this golden file")
    run.add_argument("-q", "--quiet", action="store_true")

    check = sub.add_parser("check", help="compare a trace with a golden trace")
    check.add_argument("trace", type=Path)
    check.add_argument("golden", type=Path)
    check.add_argument("--crypto", choices=("null", "real"), default="null",
                       help="real: compare everything except sizes")

    sub.add_parser("list", help="list scenarios")
    return parser


def compare_traces(trace, golden_path: Path, crypto: str = "null") -> tuple[bool, str]:
    """Compare a trace (a file path or in-memory records) with a golden file."""
    from_file = isinstance(trace, (str, Path))
    if crypto == "null":
        # Byte-exact: lines as written, not re-serialized.
        actual = (Path(trace).read_text(encoding="utf-8").splitlines() if from_file
                  else [r.to_json() for r in trace])
        expected = Path(golden_path).read_text(encoding="utf-8").splitlines()
    else:
        records = fabric.read_trace(trace) if from_file else list(trace)
        golden = fabric.read_trace(golden_path)
        # Signatures and wraps differ in real mode, so sizes are not comparable.
        def shape(recs):
            return [f"{r.t} {r.node} {r.direction.value} {r.kind.value} {r.name_uri} {r.content_kind}"
                    for r in recs]
        actual, expected = shape(records), shape(golden)
    diff = trace_checks.first_divergence(actual, expected)
    if diff is None:
        return True, f"identical ({len(actual)} records)"
    line, a, e = diff
    return False, f"first divergence at line {line}:\n  trace:  {a}\n  golden: {e}"


def cmd_run(args) -> int:
    flags = Flags(
        seed=args.seed, crypto=args.crypto, drop_rate=args.drop_rate,
        latency_ms=args.latency_ms, segment_size=args.segment_size, window=args.window,
        rto_ms=args.rto_ms, max_retries=args.max_retries, max_time=args.max_time,
        open_retries=args.open_retries, open_timeout_ms=args.open_timeout_ms,
        pit_timeout_ms=args.pit_timeout_ms,
    )
    try:
        result = run_scenario(args.scenario, flags)
    except fabric.TimeLimitExceeded as e:
        print(f"FAIL {args.scenario}: {e}", file=sys.stderr)
        return 1
    if args.trace:
        fabric.write_trace(result.trace, args.trace)
    ok = result.passed
    if not args.quiet:
        for c in result.checks:
            detail = f"  ({c.detail})" if c.detail else ""
            print(f"{'PASS' if c.ok else 'FAIL'}  {c.name}{detail}")
    if args.golden:
        same, msg = compare_traces(result.trace, args.golden, args.crypto)
        print(f"{'PASS' if same else 'FAIL'}  golden trace {args.golden}: {msg}")
        ok = ok and same
    print(f"{args.scenario}: {'ok' if ok else 'FAILED'} "
          f"({len(result.trace)} records, t={result.sim.now} ms)")
    return 0 if ok else 1


def cmd_check(args) -> int:
    for p in (args.trace, args.golden):
        if not p.is_file():
            print(f"no such file: {p}", file=sys.stderr)
            return 2
    try:
        same, msg = compare_traces(args.trace, args.golden, args.crypto)
    except (ValueError, KeyError) as e:
        print(f"unreadable trace: {e}", file=sys.stderr)
        return 2
    print(msg)
    return 0 if same else 1


def cmd_list(args) -> int:
    width = max(map(len, SCENARIOS))
    for sid, sc in SCENARIOS.items():
        print(f"{sid:<{width}}  {sc.title}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return {"run": cmd_run, "check": cmd_check, "list": cmd_list}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
