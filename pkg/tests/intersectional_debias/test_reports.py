"""Selection table and Pareto frontier reports."""

import json
import sys
from pathlib import Path

import pytest

# Add the tools directory to the path
repo_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(repo_root / "tools"))

from intersectional_debias.errors import ReportError
from intersectional_debias.models import EvalPoint, Provenance
from intersectional_debias.reports import (
    FRONTIER_COLUMNS,
    build_selection,
    format_selection_table,
    frontier_csv,
    frontier_rows,
    load_points,
    write_report,
)
from intersectional_debias.utils_io import write_jsonl

# (method, grouping, iterate, dev f1, dev avg, test f1, test avg)
TRAJECTORIES = [
    ("biased-baseline", "NONE", 3, 0.80, 0.20, 0.78, 0.22),
    ("inlp", "GERRY", 1, 0.79, 0.15, 0.77, 0.16),
    ("inlp", "GERRY", 2, 0.77, 0.08, 0.75, 0.09),
    ("inlp", "GERRY", 3, 0.70, 0.02, 0.69, 0.03),
    ("constrained", "GERRY", 1, 0.78, 0.10, 0.76, 0.11),
    ("constrained", "GERRY", 2, 0.74, 0.05, 0.72, 0.06),
]


def _points():
    points = []
    for method, grouping, iterate, dev_f1, dev_avg, test_f1, test_avg in TRAJECTORIES:
        for split, f1, avg in (("dev", dev_f1, dev_avg), ("test", test_f1, test_avg)):
            provenance = Provenance(method, grouping, {"T": 3}, split, iterate=iterate)
            points.append(EvalPoint(f1, avg, avg * 2, provenance))
    return points


def _write_run(run_dir):
    run_dir.mkdir(parents=True, exist_ok=True)
    write_jsonl(run_dir / "points.jsonl", [p.to_record() for p in _points()])
    return run_dir


def test_selection_rows_follow_dev_choice():
    rows = build_selection(_points(), [0.05, 0.12])
    assert [(r["tradeoff"], r["approach"]) for r in rows] == [
        (None, "Biased model"),
        (0.05, "CON-GERRY"),
        (0.05, "INLP-GERRY"),
        (0.12, "CON-GERRY"),
        (0.12, "INLP-GERRY"),
    ]
    chosen = {(r["tradeoff"], r["approach"]): (r["iterate"], r["f1"]) for r in rows}
    assert chosen[(0.05, "INLP-GERRY")] == (2, 0.75)
    assert chosen[(0.12, "INLP-GERRY")] == (3, 0.69)
    assert chosen[(0.05, "CON-GERRY")] == (1, 0.76)
    assert chosen[(0.12, "CON-GERRY")] == (2, 0.72)
    assert rows[0]["f1"] == 0.78


def test_selection_table_repeats_biased_row_per_block():
    text = format_selection_table(build_selection(_points(), [0.05, 0.12]))
    assert "Trade-off 5%" in text
    assert "Trade-off 12%" in text
    assert text.count("Biased model") == 2
    assert "Approach" in text and "Avg violation" in text


def test_family_with_single_point_is_selected_at_every_tradeoff():
    points = [
        EvalPoint(0.6, 0.1, 0.2, Provenance("constrained", "INDEP", {"nu": 0.1}, split, 5))
        for split in ("dev", "test")
    ]
    rows = build_selection(points, [0.05, 0.10])
    assert [r["iterate"] for r in rows] == [5, 5]


def test_selection_requires_test_points():
    dev_only = [p for p in _points() if p.provenance.split == "dev"]
    with pytest.raises(ReportError):
        build_selection(dev_only, [0.05])


def test_biased_point_without_test_twin_is_a_report_error():
    points = [
        p
        for p in _points()
        if not (p.provenance.method == "biased-baseline" and p.provenance.split == "test")
    ]
    with pytest.raises(ReportError, match="Biased model"):
        build_selection(points, [0.05])


def test_frontier_drops_dominated_points():
    rows = frontier_rows(_points(), split="test")
    by_family = {}
    for r in rows:
        by_family.setdefault(r["family"], []).append(r["iterate"])
    # Every test trajectory here trades F1 for violation monotonically.
    assert by_family == {"Biased model": [3], "CON-GERRY": [1, 2], "INLP-GERRY": [1, 2, 3]}
    extra = _points() + [
        EvalPoint(0.60, 0.30, 0.30, Provenance("inlp", "GERRY", {"T": 3}, "test", iterate=9))
    ]
    assert 9 not in [r["iterate"] for r in frontier_rows(extra) if r["family"] == "INLP-GERRY"]


def test_frontier_csv_header_and_rows():
    rows = frontier_rows(_points(), split="dev")
    lines = frontier_csv(rows).splitlines()
    assert lines[0] == ",".join(FRONTIER_COLUMNS)
    assert len(lines) == len(rows) + 1


def test_load_points_reads_several_runs(tmp_path):
    first = _write_run(tmp_path / "a")
    second = _write_run(tmp_path / "b")
    assert len(load_points([first, second])) == 2 * len(_points())


def test_load_points_errors(tmp_path):
    with pytest.raises(ReportError):
        load_points([])
    with pytest.raises(ReportError):
        load_points([tmp_path])
    (tmp_path / "points.jsonl").write_text("", encoding="utf-8")
    with pytest.raises(ReportError):
        load_points([tmp_path])


def test_write_report_outputs(tmp_path):
    run_dir = _write_run(tmp_path / "run")
    outputs = write_report(tmp_path / "report", load_points([run_dir]), [0.05, 0.10])
    assert set(outputs) == {"selection_txt", "selection_json", "frontier_csv", "frontier_json"}
    for path in outputs.values():
        assert Path(path).exists()
    selection = json.loads((tmp_path / "report" / "selection.json").read_text(encoding="utf-8"))
    assert len(selection) == 5
