"""Command-line entry point: run, grid, report, verify."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ExperimentConfig
from .episode import run_episode
from .grid import grid_spec_from_file, run_grid
from .summary import load_records, summarize_edges, write_summary
from .verify import SUITES, run_suites

EXIT_OK = 0
EXIT_PROPERTY_FAILURE = 1
EXIT_CONFIG_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="normtrace",
        description="Deterministic audit, detection, and intervention engine "
        "for multi-agent resource games.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one seeded episode")
    p_run.add_argument("--config", required=True, help="JSON config file")
    p_run.add_argument("--seed", type=int, required=True)
    p_run.add_argument("--out", help="append the record to this JSONL file")
    p_run.add_argument("--dump-ledger", help="write the sealed snapshot export")
    p_run.add_argument("--trace-detectors", help="write per-step detector trace")
    p_run.add_argument("--dump-edges", help="write the causal edge dump")
    p_run.add_argument("--dump-interventions", help="write intervention log lines")

    p_grid = sub.add_parser("grid", help="run the Monte-Carlo sweep")
    p_grid.add_argument("--spec", help="JSON grid spec (defaults to the full sweep)")
    p_grid.add_argument("--out", required=True, help="JSONL output path")
    p_grid.add_argument("--resume", action="store_true")
    p_grid.add_argument("--jobs", type=int, default=1)

    p_report = sub.add_parser("report", help="summarize run records")
    p_report.add_argument("--in", dest="records", required=True, help="records JSONL")
    p_report.add_argument("--out", required=True, help="output directory")
    p_report.add_argument("--edges", help="also digest a causal edge dump")

    p_verify = sub.add_parser("verify", help="run property suites")
    p_verify.add_argument("suite", help="suite name or 'all'")
    p_verify.add_argument(
        "--quick", action="store_true", help="reduced-scale desk run"
    )
    return parser


def _cmd_run(args) -> int:
    try:
        config = ExperimentConfig.from_file(args.config)
        config.validate()
    except (OSError, ValueError, TypeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    record = run_episode(
        config,
        args.seed,
        dump_ledger=args.dump_ledger,
        trace_detectors=args.trace_detectors,
        dump_edges=args.dump_edges,
        dump_interventions=args.dump_interventions,
    )
    line = record.to_json_line()
    if args.out:
        with open(args.out, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
    print(line)
    return EXIT_OK


def _cmd_grid(args) -> int:
    try:
        spec = grid_spec_from_file(args.spec) if args.spec else None
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    total = run_grid(
        spec,
        args.out,
        resume=args.resume,
        jobs=args.jobs,
        log=lambda msg: print(msg, file=sys.stderr),
    )
    print(f"records: {total} -> {args.out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    try:
        records = load_records(args.records)
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    table, chart = write_summary(records, args.out)
    print(f"summary: {table}")
    print(f"gini chart data: {chart}")
    if args.edges:
        digest = summarize_edges(args.edges)
        print(
            f"edges: {digest['edges']} (F mean {digest['f_mean']:.4g}, "
            f"max {digest['f_max']:.4g})"
        )
    return EXIT_OK


def _cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    try:
        results = run_suites(names, quick=args.quick)
    except KeyError:
        available = ", ".join(SUITES)
        print(
            f"unknown suite {args.suite!r}; available: {available}, all",
            file=sys.stderr,
        )
        return EXIT_CONFIG_ERROR
    for result in results:
        print(result.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_PROPERTY_FAILURE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "run": _cmd_run,
        "grid": _cmd_grid,
        "report": _cmd_report,
        "verify": _cmd_verify,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
