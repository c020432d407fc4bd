"""Command-line front end: ``malcl run | report | plot | list``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from malcl.errors import ConfigurationError, MalclError
from malcl.harness.config import load_document
from malcl.harness.persistence import load_runs, read_index
from malcl.harness.report import ACCURACY, TIME, build_report, plot_curves, render_text, render_tsv
from malcl.harness.sweep import run_sweep
from malcl.strategies import REGISTRY, ROW_ORDER, make_strategy

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
OUT_ENV = "MALCL_OUT"

log = logging.getLogger("malcl")


def _out_dir(args, fallback: str | None = None) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or fallback or "results")


def _csv(text: str | None, cast=str):
    if text is None:
        return None
    try:
        return [cast(t.strip()) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse list {text!r}") from None


def cmd_run(args) -> int:
    doc = load_document(args.config)
    if args.strategies is not None:
        doc.strategies = _csv(args.strategies)
    if args.fractions is not None:
        doc.fractions = _csv(args.fractions, float)
    if args.seeds is not None:
        doc.seeds = _csv(args.seeds, int)
    doc.validate()
    cells = doc.expand()
    out = _out_dir(args, doc.output_dir)
    summary = run_sweep(cells, out, force=args.force, jobs=args.jobs)
    print(f"{summary.planned} runs planned, {summary.skipped} already present, "
          f"{len(summary.completed)} completed, {len(summary.failed)} failed -> {out}")
    return EXIT_RUNTIME if summary.failed else EXIT_OK


def cmd_report(args) -> int:
    out = _out_dir(args)
    table = build_report(load_runs(out))
    text = render_text(table)
    (out / "report.txt").write_text(text)
    (out / "report.tsv").write_text(render_tsv(table))
    sys.stdout.write(text)
    return EXIT_OK


def cmd_plot(args) -> int:
    out = _out_dir(args)
    runs = load_runs(out)
    kinds = [ACCURACY, TIME] if args.kind == "all" else [args.kind]
    figures = Path(args.figures) if args.figures else out / "figures"
    for kind in kinds:
        for path in plot_curves(runs, figures, kind):
            print(path)
    return EXIT_OK


def cmd_list(args) -> int:
    if args.what == "strategies":
        for name in ROW_ORDER:
            s = make_strategy(name)
            print(f"{name:12s} {s.label:8s} {s.family:17s} {','.join(s.scenarios)}")
        return EXIT_OK
    records = read_index(_out_dir(args))
    for r in records:
        print(f"{r['run_id']}  {r['dataset']:12s} {r['scenario']:10s} {r['label']:10s} "
              f"seed={r['seed']:<4d} {r['status']}")
    if not records:
        print("no runs", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="malcl", description="Continual-learning experiments on tabular streams")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_out(p):
        p.add_argument("--out", help=f"results root (default: ${OUT_ENV}, then the config's output_dir)")
        return p

    run = with_out(sub.add_parser("run", help="execute every strategy x seed cell of a config"))
    run.add_argument("--config", required=True, help="YAML or JSON experiment document")
    run.add_argument("--seeds", help="comma-separated seed list, replaces the config's")
    run.add_argument("--strategies", help=f"comma-separated subset of {sorted(REGISTRY)}; pjr:0.2 allowed")
    run.add_argument("--fractions", help="comma-separated PJR fractions for bare 'pjr'")
    run.add_argument("--force", action="store_true", help="rerun cells already persisted")
    run.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    run.set_defaults(func=cmd_run)

    report = with_out(sub.add_parser("report", help="summary table from persisted runs"))
    report.set_defaults(func=cmd_report)

    plot = with_out(sub.add_parser("plot", help="accuracy or training-time curves"))
    plot.add_argument("--kind", choices=[ACCURACY, TIME, "all"], default="all")
    plot.add_argument("--figures", help="figure directory (default: <out>/figures)")
    plot.set_defaults(func=cmd_plot)

    lst = with_out(sub.add_parser("list", help="persisted runs or available strategies"))
    lst.add_argument("what", nargs="?", choices=["runs", "strategies"], default="runs")
    lst.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MalclError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
