"""Command-line entry point: train, synthesize, evaluate, plot."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import EvotabError, ParseError, SchemaError
from .metrics import MetricSpec
from .schema import load_csv, write_csv


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None


def cmd_train(args) -> int:
    from .trainer import TrainConfig, train

    raw = _read_json(args.config)
    if "metrics" not in raw:
        raise SchemaError(f"{args.config}: config needs a 'metrics' section")
    spec = MetricSpec.from_dict(raw["metrics"])
    cfg = TrainConfig.from_dict(raw.get("train", {}))
    schema = _read_json(args.schema) if args.schema else raw.get("schema")
    table = load_csv(args.data, schema)
    state = train(table, cfg, spec, args.out)
    inc = state.incumbent
    print(f"done: {state.epoch} epochs, incumbent from epoch {inc.epoch} (utility {inc.f_u:.4f}, risk {inc.f_r:.4f})")
    return 0


def _selection(value: str):
    return int(value) if value.lstrip("-").isdigit() else value


def cmd_synthesize(args) -> int:
    from .trainer import synthesize

    table = synthesize(args.checkpoint, args.rows, args.seed, _selection(args.selection))
    write_csv(table, args.out)
    return 0


def cmd_evaluate(args) -> int:
    from .metrics import evaluate

    spec_raw = _read_json(args.spec)
    spec = MetricSpec.from_dict(spec_raw.get("metrics", spec_raw))
    original = load_csv(args.original, _read_json(args.schema) if args.schema else None)
    # the synthetic file must be read against the original's categories
    synthetic = load_csv(args.synthetic, original.schema)
    report = evaluate(original, synthetic, spec)
    Path(args.out).write_text(report.to_json() + "\n")
    print(f"utility {report.utility:.4f} (cio {report.cio:.4f}, roc {report.roc:.4f}), risk {report.risk:.4f}")
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_run

    for path in plot_run(args.run):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evotab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a generator population")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True, help="JSON with 'train' and 'metrics' sections")
    t.add_argument("--schema", help="optional schema JSON (list of column records)")
    t.add_argument("--out", required=True, help="run directory")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synthesize", help="sample a synthetic table from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--rows", type=int, required=True)
    s.add_argument("--selection", default="improvement", help="improvement, max_utility, or a population index")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synthesize)

    e = sub.add_parser("evaluate", help="utility and risk of a synthetic table")
    e.add_argument("--original", required=True)
    e.add_argument("--synthetic", required=True)
    e.add_argument("--spec", required=True, help="metric spec JSON (or a run config with a 'metrics' section)")
    e.add_argument("--schema")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    pl = sub.add_parser("plot", help="training-curve and population figures for a run")
    pl.add_argument("--run", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.verbose:
        run = logging.getLogger("evotab.run")
        run.addHandler(logging.StreamHandler())
        run.setLevel(logging.INFO)
    try:
        return args.func(args)
    except (EvotabError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
