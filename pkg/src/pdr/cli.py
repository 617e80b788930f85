"""Command-line entry point.

Exit codes: 0 success, 1 configuration or input error, 2 partial failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .corpus import DEFAULT_OVERLAP_CHARS, DEFAULT_TARGET_CHARS, TASKS, load_dataset
from .errors import ConfigError, IncompleteRun, PDRError
from .evaluation import format_table, read_summary
from .index import DEFAULT_DIM, HashingEmbedder, index_build, save_index
from .pipeline import read_manifest, run_eval, run_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


def cmd_ingest(args: argparse.Namespace) -> int:
    samples, corpus = load_dataset(args.dataset, args.task, args.target_chars, args.overlap_chars)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in (
        ("samples.jsonl", [s.to_dict() for s in samples]),
        ("documents.jsonl", [d.to_dict() for d in corpus.documents]),
        ("chunks.jsonl", [c.to_dict() for c in corpus.chunks]),
    ):
        with open(out / name, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    save_index(index_build(corpus, HashingEmbedder(args.dim)), out / "private.pdrix")
    print(f"{len(samples)} samples, {len(corpus.documents)} documents, {len(corpus.chunks)} chunks -> {out}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.run_dir:
        config.run_dir = Path(args.run_dir)
    if args.workers:
        config.workers = args.workers
    manifest = run_pipeline(config)
    failed = manifest.failed
    print(f"{len(manifest.samples) - len(failed)}/{len(manifest.samples)} samples ok -> {config.run_dir}")
    for sid in failed:
        print(f"  failed: {sid}: {manifest.samples[sid].get('error', '')}", file=sys.stderr)
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else None
    if config is not None:
        config.run_dir = Path(args.run)
    summary = run_eval(config, args.run)
    print(format_table(summary))
    for sid, err in summary.failures.items():
        print(f"  failed: {sid}: {err}", file=sys.stderr)
    return EXIT_PARTIAL if summary.failures else EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    read_manifest(run_dir)
    try:
        summary = read_summary(run_dir)
    except FileNotFoundError as exc:
        raise IncompleteRun(f"{run_dir} has not been evaluated; run 'pdr eval --run {run_dir}' first") from exc
    if args.format == "csv":
        sys.stdout.write(summary.to_csv())
    else:
        print(format_table(summary, delimiter="\t" if args.format == "tsv" else " | "))
    if not args.no_figure:
        from .plotting import plot_summary

        fig = plot_summary(summary, run_dir / "eval" / "summary.png", title=run_dir.name)
        print(f"figure: {fig}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdr", description="Personalized deep research runs and evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and chunk a dataset, write normalized JSONL and an index cache")
    p.add_argument("dataset")
    p.add_argument("out")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--target-chars", type=int, default=DEFAULT_TARGET_CHARS)
    p.add_argument("--overlap-chars", type=int, default=DEFAULT_OVERLAP_CHARS)
    p.add_argument("--dim", type=int, default=DEFAULT_DIM)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("run", help="run the pipeline described by a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--run-dir", help="override run_dir from the config")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score the reports of a finished run")
    p.add_argument("--run", required=True)
    p.add_argument("--config", help="defaults to the settings recorded in the run manifest")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="print the evaluation summary table and render a figure")
    p.add_argument("--run", required=True)
    p.add_argument("--format", choices=("table", "tsv", "csv"), default="table")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IncompleteRun) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PDRError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
