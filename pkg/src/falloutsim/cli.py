"""Command-line entry point.

Results (CSV or JSON) go to stdout or the -o file; human diagnostics,
traces, and store-buffer dumps go to stderr. Exit codes: 0 success, 1
scenario contract violation, 2 usage error.
"""

from __future__ import annotations

import argparse
import secrets
import sys

from .arch_profile import load_profile
from .errors import ConfigError, FalloutSimError
from .scenarios import DEFAULT_SEED, SCENARIO_NAMES, ScenarioSpec, run_scenario

USAGE_EXIT = 2
FAILURE_EXIT = 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="falloutsim",
        description="Deterministic simulator of store-buffer transient-forwarding leaks")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a named scenario")
    run_p.add_argument("scenario", help=f"one of: {', '.join(SCENARIO_NAMES)}")
    run_p.add_argument("--profile", default="skylake",
                       help="microarchitecture profile (builtin or from "
                            "FALLOUTSIM_PROFILE_DIR)")
    run_p.add_argument("--trials", type=int, default=None,
                       help="trial count (scenario-specific default)")
    run_p.add_argument("--seed", default=str(DEFAULT_SEED),
                       help="integer seed, or 'random' for entropy")
    run_p.add_argument("-o", "--output", default=None, help="write results to a file")
    run_p.add_argument("--format", choices=("csv", "json"), default="json")
    run_p.add_argument("-O", "--override", action="append", default=[],
                       metavar="KEY=VALUE", help="scenario parameter override")
    run_p.add_argument("--kpti", action="store_true",
                       help="kernel page-table isolation: flush on kernel exit")
    run_p.add_argument("--hyperthread", action="store_true",
                       help="sibling hyperthread active (partitioned store buffer)")
    run_p.add_argument("--countermeasure", action="store_true",
                       help="flush the store buffer on every domain switch")
    run_p.add_argument("--jobs", type=int, default=1,
                       help="worker processes for independent trials")
    run_p.add_argument("--trace", action="store_true",
                       help="print per-µOP event log to stderr")
    run_p.add_argument("--dump-sb", action="store_true",
                       help="print the final store-buffer table to stderr")
    return parser


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} must look like key=value")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _parse_seed(raw: str) -> int:
    if raw == "random":
        return secrets.randbits(48)
    try:
        return int(raw, 0)
    except ValueError:
        raise ConfigError(f"seed must be an integer or 'random', got {raw!r}") from None


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        load_profile(args.profile)  # reject unknown names before any simulation
        spec = ScenarioSpec(
            name=args.scenario,
            profile=args.profile,
            trials=args.trials,
            seed=_parse_seed(args.seed),
            overrides=_parse_overrides(args.override),
            kpti=args.kpti,
            hyperthread=args.hyperthread,
            countermeasure=args.countermeasure,
            jobs=args.jobs,
            trace=args.trace,
            dump_sb=args.dump_sb,
        )
    except ConfigError as exc:
        print(f"falloutsim: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return USAGE_EXIT

    try:
        report = run_scenario(spec)
    except FalloutSimError as exc:
        print(f"falloutsim: scenario {args.scenario!r} failed: {exc}", file=sys.stderr)
        return FAILURE_EXIT

    for key in ("trace", "sb_dump"):
        payload = report.summary.pop(key, None)
        if payload:
            text = "\n".join(payload) if isinstance(payload, list) else payload
            print(text, file=sys.stderr)

    rendered = report.to_csv() if args.format == "csv" else report.to_json()
    if args.output:
        with open(args.output, "w", encoding="utf-8") as handle:
            handle.write(rendered)
        print(f"falloutsim: wrote {args.output}", file=sys.stderr)
    else:
        sys.stdout.write(rendered)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
