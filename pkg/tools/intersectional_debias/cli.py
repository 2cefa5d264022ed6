from __future__ import annotations

import argparse
import dataclasses
import json
import logging
from dataclasses import asdict
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Callable, Dict, List, Optional

from .config import DEFAULT_TRADEOFFS, ERROR_FILE, LOG_FILE, LOG_FORMAT, SPLITS_FILE
from .data import (
    generate_synthetic,
    load_dataset_dir,
    load_synthetic_spec,
    save_dataset,
    save_splits,
    split_indices,
)
from .errors import ConfigError, DebiasError
from .experiment_config import ExperimentConfig
from .models import CommandResult
from .reports import frontier_rows, load_points, write_frontier, write_report
from .runner import ExperimentRunner, evaluate_cell, load_run_splits
from .utils_io import write_json


def parse_tradeoffs(raw: str) -> List[float]:
    """Parse "0.05,0.10" into fractions in (0, 1)."""
    try:
        values = [float(part) for part in raw.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"Invalid --tradeoff value '{raw}'") from e
    if not values:
        raise ConfigError("--tradeoff needs at least one value")
    for v in values:
        if not 0 < v < 1:
            raise ConfigError(f"Trade-off {v} must lie in (0, 1)")
    return values


def _parse_fractions(raw: str) -> List[float]:
    try:
        return [float(part) for part in raw.split(",")]
    except ValueError as e:
        raise ConfigError(f"Invalid --split-fractions value '{raw}'") from e


def _attach_run_log(run_dir: Path, level: int) -> RotatingFileHandler:
    run_dir.mkdir(parents=True, exist_ok=True)
    handler = RotatingFileHandler(run_dir / LOG_FILE, maxBytes=1_000_000, backupCount=3)
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(handler)
    return handler


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> CommandResult:
    spec = load_synthetic_spec(Path(args.spec))
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    out_dir = Path(args.out)
    dataset = generate_synthetic(spec)
    fractions = _parse_fractions(args.split_fractions)
    indices = split_indices(dataset, fractions, spec.seed, args.stratify)
    files = save_dataset(dataset, out_dir)
    save_splits(indices, out_dir / SPLITS_FILE)
    logging.info(
        "Generated %d rows (d=%d, k=%d) in %s", dataset.n, dataset.d, dataset.schema.k, out_dir
    )
    outputs: Dict[str, object] = {name: str(path) for name, path in files.items()}
    outputs["splits"] = str(out_dir / SPLITS_FILE)
    outputs["rows"] = dataset.n
    outputs["positive_rate"] = dataset.positive_rate
    return CommandResult("generate", "ok", outputs)


def cmd_run(args: argparse.Namespace) -> CommandResult:
    config = ExperimentConfig.load(Path(args.config))
    if args.seed is not None:
        config.seed = args.seed
    run_dir = Path(args.out) if args.out else config.output_dir
    if run_dir is None:
        raise ConfigError("No output directory: pass --out or set output_dir in the config")
    handler = _attach_run_log(run_dir, logging.getLogger().level)
    try:
        summary = ExperimentRunner(config, run_dir, jobs=args.jobs).run()
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    return CommandResult("run", "ok", summary)


def cmd_report(args: argparse.Namespace) -> CommandResult:
    run_dirs = [Path(r) for r in args.runs]
    tradeoffs = parse_tradeoffs(args.tradeoff)
    out_dir = Path(args.out) if args.out else run_dirs[0] / "report"
    outputs = write_report(out_dir, load_points(run_dirs), tradeoffs)
    return CommandResult("report", "ok", dict(outputs))


def cmd_pareto(args: argparse.Namespace) -> CommandResult:
    run_dirs = [Path(r) for r in args.runs]
    out_dir = Path(args.out) if args.out else run_dirs[0] / "report"
    rows = frontier_rows(load_points(run_dirs), split=args.split)
    outputs: Dict[str, object] = dict(write_frontier(out_dir, rows))
    outputs["frontier_points"] = len(rows)
    return CommandResult("pareto", "ok", outputs)


def cmd_evaluate(args: argparse.Namespace) -> CommandResult:
    run_dir = Path(args.run)
    if args.data:
        dataset = load_dataset_dir(Path(args.data), split=args.split)
    else:
        train, dev, test = load_run_splits(run_dir)
        dataset = {"train": train, "dev": dev, "test": test}[args.split]
    f1, report, manifest = evaluate_cell(
        run_dir, args.cell, dataset, iterate=args.iterate, min_positives=args.min_positives
    )
    outputs = {
        "cell": manifest["cell"],
        "method": manifest["method"],
        "grouping": manifest["grouping"],
        "iterate": manifest["iterate"],
        "split": args.split,
        "f1": f1,
        "violations": report.to_dict(),
    }
    if args.out:
        write_json(Path(args.out) / "evaluation.json", outputs)
    return CommandResult("evaluate", "ok", outputs)


COMMANDS: Dict[str, Callable[[argparse.Namespace], CommandResult]] = {
    "generate": cmd_generate,
    "run": cmd_run,
    "report": cmd_report,
    "pareto": cmd_pareto,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default="INFO")

    parser = argparse.ArgumentParser(
        description="Intersectional debiasing experiments (INLP and constrained training)."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[common], help="Generate a synthetic dataset")
    gen.add_argument("--spec", required=True, help="Synthetic spec (JSON or YAML)")
    gen.add_argument("--out", required=True, help="Dataset output directory")
    gen.add_argument("--seed", type=int, help="Override the spec seed")
    gen.add_argument("--split-fractions", default="0.7,0.15,0.15")
    gen.add_argument("--stratify", default="label", choices=["label", "label_and_group"])

    run = sub.add_parser("run", parents=[common], help="Run an experiment sweep")
    run.add_argument("--config", required=True, help="Experiment config (YAML)")
    run.add_argument("--out", help="Run directory (default: config output_dir)")
    run.add_argument("--seed", type=int, help="Override the config seed")
    run.add_argument("--jobs", type=int, help="Parallel sweep cells")

    rep = sub.add_parser("report", parents=[common], help="Selection table and frontier")
    rep.add_argument("runs", nargs="+", help="Run directories")
    rep.add_argument(
        "--tradeoff",
        default=",".join(f"{t:.2f}" for t in DEFAULT_TRADEOFFS),
        help="Comma-separated F1 trade-off fractions (default: 0.05,0.10)",
    )
    rep.add_argument("--out", help="Report directory (default: <first run>/report)")

    par = sub.add_parser("pareto", parents=[common], help="Pareto frontier only")
    par.add_argument("runs", nargs="+", help="Run directories")
    par.add_argument("--split", default="test", choices=["dev", "test"])
    par.add_argument("--out", help="Output directory (default: <first run>/report)")

    ev = sub.add_parser("evaluate", parents=[common], help="Re-score a stored cell model")
    ev.add_argument("--run", required=True, help="Run directory")
    ev.add_argument("--cell", required=True, help="Cell id, e.g. 001-inlp-gerry")
    ev.add_argument("--iterate", type=int, help="Earlier iterate (default: final)")
    ev.add_argument("--data", help="Dataset directory (default: the run's own splits)")
    ev.add_argument("--split", default="test", choices=["train", "dev", "test"])
    ev.add_argument("--min-positives", type=int, default=5)
    ev.add_argument("--out", help="Directory for evaluation.json")
    return parser


def _error_dir(args: argparse.Namespace) -> Optional[Path]:
    out = getattr(args, "out", None)
    if out:
        return Path(out)
    if args.command == "evaluate":
        return None
    runs = getattr(args, "runs", None)
    return Path(runs[0]) if runs else None


def main(argv: List[str] | None = None) -> int:
    """Dispatch one subcommand and print its JSON summary."""
    args = build_parser().parse_args(argv)

    # Configure logging once, based on the CLI log-level.
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(levelname)s %(message)s",
    )

    try:
        result = COMMANDS[args.command](args)
    except DebiasError as e:
        logging.error("%s failed: %s", args.command, e)
        record = {"status": "error", "error": type(e).__name__, "message": str(e)}
        error_dir = _error_dir(args)
        if error_dir is not None and error_dir.is_dir():
            write_json(error_dir / ERROR_FILE, record)
        print(json.dumps(record, indent=2))
        return 2

    print(json.dumps(asdict(result), indent=2))
    return 0
