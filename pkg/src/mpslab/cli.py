"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import BackendError, DataError
from .pipeline.dataset import read_labels
from .pipeline.report import make_report, render, verify_report, write_report
from .pipeline.runner import RunConfig, load_records, load_run_info, read_aggregate_csv, run_extraction

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mpslab", description="Extract and compare minimal sufficient pixel sets.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("extract", help="run extraction for every (model, image) pair")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--force", action="store_true", help="recompute existing records")

    s = sub.add_parser("compare", help="write the full report (JSON, CSV, Markdown, SVG)")
    s.add_argument("--records", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("stats", help="print the hypothesis tests and effect estimate as JSON")
    s.add_argument("--records", required=True, type=Path)
    s.add_argument("--labels", type=Path)

    s = sub.add_parser("report", help="print Table 1 and the overlap matrices")
    s.add_argument("--records", required=True, type=Path)
    s.add_argument("--format", choices=("csv", "md"), default="md")

    s = sub.add_parser("plot", help="violin plot of MPS area per model")
    s.add_argument("--records", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("verify", help="recompute the area table from the aggregate CSV")
    s.add_argument("--records", required=True, type=Path)
    s.add_argument("--report", required=True, type=Path)
    return p


def _load(records_dir, labels=None):
    records = load_records(records_dir)
    if labels is not None:
        table = read_labels(labels)
        for r in records:
            r.with_ground_truth(table.get(r.image_id))
    info = load_run_info(records_dir)
    significance = (info.get("config") or {}).get("significance", 0.01)
    return records, info, significance


def _tags(info):
    return {m["model_id"]: m.get("architecture_tag", m["model_id"]) for m in info.get("models", [])}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        if args.command == "extract":
            if args.workers < 1:
                parser.error("--workers must be >= 1")
            config = RunConfig.load(args.config)
            summary = run_extraction(config, workers=args.workers, force=args.force)
            print(
                json.dumps(
                    {
                        "output": str(summary.output),
                        "records": summary.records,
                        "new_records": summary.new_records,
                        "oracle_calls": summary.oracle_calls,
                        "failed_models": summary.failed_models,
                        "failed_jobs": summary.failed_jobs,
                        "config_hash": summary.config_hash,
                    },
                    indent=2,
                )
            )
            if summary.failed_models and len(summary.failed_models) == len(config.models):
                return EXIT_BACKEND
        elif args.command == "compare":
            records, info, sig = _load(args.records)
            report = make_report(records, info, sig)
            for p in write_report(report, args.out, records, _tags(info)):
                print(p)
        elif args.command == "stats":
            records, info, sig = _load(args.records, args.labels)
            report = make_report(records, info, sig)
            print(json.dumps({"header": report.header, "tests": report.tests, "effect": report.effect}, indent=2))
        elif args.command == "report":
            records, info, sig = _load(args.records)
            sys.stdout.write(render(make_report(records, info, sig), args.format))
        elif args.command == "plot":
            from .pipeline.plotting import plot_violin

            records, info, _ = _load(args.records)
            try:
                plot_violin(records, _tags(info), args.out)
            except ValueError as exc:
                raise DataError(str(exc)) from exc
            print(args.out)
        elif args.command == "verify":
            with open(args.report) as fh:
                report_json = json.load(fh)
            problems = verify_report(report_json, read_aggregate_csv(Path(args.records) / "mps.csv"))
            for line in problems:
                print(line)
            if problems:
                return EXIT_DATA
            print("ok")
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (DataError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
