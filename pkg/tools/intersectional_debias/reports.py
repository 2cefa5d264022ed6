"""Pareto and trade-off selection reports for the CLI."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .config import BIASED_LABEL, POINTS_FILE
from .errors import ReportError, SelectionError
from .metrics import pareto_frontier, points_by_family, select_dev_point, select_under_tradeoff
from .models import EvalPoint
from .utils_io import read_jsonl, write_json, write_text

FRONTIER_COLUMNS = [
    "family",
    "f1",
    "avg_violation",
    "max_violation",
    "fairness",
    "iterate",
    "hparams",
]
TABLE_COLUMNS = ["Approach", "F1", "Max violation", "Avg violation"]


def load_points(run_dirs: Sequence[Path]) -> List[EvalPoint]:
    """Read points.jsonl from every run directory, in the order given."""
    if not run_dirs:
        raise ReportError("At least one run directory is required")
    points: List[EvalPoint] = []
    for run_dir in run_dirs:
        path = Path(run_dir) / POINTS_FILE
        if not path.exists():
            raise ReportError(f"No {POINTS_FILE} in {run_dir}")
        points.extend(EvalPoint.from_record(r) for r in read_jsonl(path))
    if not points:
        raise ReportError("Points files are empty")
    return points


def split_points(points: Sequence[EvalPoint], split: str) -> List[EvalPoint]:
    return [p for p in points if p.provenance.split == split]


def _row(
    tradeoff: Optional[float], approach: str, dev: EvalPoint, test: EvalPoint
) -> Dict[str, Any]:
    return {
        "tradeoff": tradeoff,
        "approach": approach,
        "f1": test.f1,
        "max_violation": test.max_violation,
        "avg_violation": test.avg_violation,
        "dev_f1": dev.f1,
        "dev_avg_violation": dev.avg_violation,
        "iterate": dev.provenance.iterate,
        "hparams": dev.provenance.hparams,
        "cell": dev.provenance.cell,
    }


def build_selection(
    points: Sequence[EvalPoint], tradeoffs: Sequence[float]
) -> List[Dict[str, Any]]:
    """Selection rows: one per (trade-off, family) plus the biased-model reference row.

    The biased row uses the baseline point with the best dev F1.
    """
    dev_points = split_points(points, "dev")
    test_by_key = {p.provenance.key(): p for p in split_points(points, "test")}
    if not dev_points or not test_by_key:
        raise ReportError("Reports need both dev and test points")
    families = points_by_family(dev_points)

    rows: List[Dict[str, Any]] = []
    biased = families.pop(BIASED_LABEL, None)
    if biased:
        chosen = max(biased, key=lambda p: (p.f1, -p.avg_violation))
        twin = test_by_key.get(chosen.provenance.key())
        if twin is None:
            raise ReportError(f"{BIASED_LABEL}: no test point matches {chosen.provenance.key()}")
        rows.append(_row(None, BIASED_LABEL, chosen, twin))
    for tradeoff in tradeoffs:
        for family in sorted(families):
            family_points = families[family]
            try:
                test_point = select_under_tradeoff(family_points, test_by_key, tradeoff)
            except SelectionError as e:
                raise ReportError(f"{family} @ {tradeoff:g}: {e}") from e
            dev_point = select_dev_point(family_points, tradeoff)
            rows.append(_row(tradeoff, family, dev_point, test_point))
    return rows


def format_selection_table(rows: Sequence[Dict[str, Any]]) -> str:
    """Aligned plain-text table: one block per trade-off, biased row in every block."""
    biased = [r for r in rows if r["tradeoff"] is None]
    tradeoffs: List[float] = []
    for r in rows:
        if r["tradeoff"] is not None and r["tradeoff"] not in tradeoffs:
            tradeoffs.append(r["tradeoff"])
    if not tradeoffs:
        tradeoffs_blocks: List[Optional[float]] = [None]
    else:
        tradeoffs_blocks = list(tradeoffs)

    width = max([len(TABLE_COLUMNS[0])] + [len(r["approach"]) for r in rows])
    lines: List[str] = []
    for tradeoff in tradeoffs_blocks:
        title = "Reference" if tradeoff is None else f"Trade-off {tradeoff * 100:g}%"
        lines.append(title)
        header = f"{TABLE_COLUMNS[0]:<{width}}  " + "  ".join(f"{c:>13}" for c in TABLE_COLUMNS[1:])
        lines.append(header)
        lines.append("-" * len(header))
        block = biased + [r for r in rows if r["tradeoff"] == tradeoff and tradeoff is not None]
        for r in block:
            lines.append(
                f"{r['approach']:<{width}}  {r['f1']:>13.3f}  "
                f"{r['max_violation']:>13.3f}  {r['avg_violation']:>13.3f}"
            )
        lines.append("")
    return "\n".join(lines)


def frontier_rows(points: Sequence[EvalPoint], split: str = "test") -> List[Dict[str, Any]]:
    """Pareto frontier of each family on one split."""
    rows: List[Dict[str, Any]] = []
    families = points_by_family(split_points(points, split))
    if not families:
        raise ReportError(f"No {split} points to build a frontier from")
    for family in sorted(families):
        for p in pareto_frontier(families[family]):
            rows.append(
                {
                    "family": family,
                    "f1": p.f1,
                    "avg_violation": p.avg_violation,
                    "max_violation": p.max_violation,
                    "fairness": p.fairness,
                    "iterate": p.provenance.iterate,
                    "hparams": p.provenance.hparams,
                }
            )
    return rows


def frontier_csv(rows: Sequence[Dict[str, Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(FRONTIER_COLUMNS)
    for r in rows:
        writer.writerow(
            [
                r["family"],
                repr(r["f1"]),
                repr(r["avg_violation"]),
                repr(r["max_violation"]),
                repr(r["fairness"]),
                "" if r["iterate"] is None else r["iterate"],
                json.dumps(r["hparams"], sort_keys=True),
            ]
        )
    return buffer.getvalue()


def write_frontier(out_dir: Path, rows: Sequence[Dict[str, Any]]) -> Dict[str, str]:
    out_dir = Path(out_dir)
    write_text(out_dir / "frontier.csv", frontier_csv(rows))
    write_json(out_dir / "frontier.json", list(rows))
    return {
        "frontier_csv": str(out_dir / "frontier.csv"),
        "frontier_json": str(out_dir / "frontier.json"),
    }


def write_report(
    out_dir: Path, points: Sequence[EvalPoint], tradeoffs: Sequence[float]
) -> Dict[str, str]:
    """Write selection.txt, selection.json, frontier.csv and frontier.json."""
    out_dir = Path(out_dir)
    rows = build_selection(points, tradeoffs)
    write_text(out_dir / "selection.txt", format_selection_table(rows))
    write_json(out_dir / "selection.json", rows)
    outputs = {
        "selection_txt": str(out_dir / "selection.txt"),
        "selection_json": str(out_dir / "selection.json"),
    }
    outputs.update(write_frontier(out_dir, frontier_rows(points)))
    return outputs
