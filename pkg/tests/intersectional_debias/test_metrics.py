"""Metric, frontier and selection oracles."""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

# Add the tools directory to the path
repo_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(repo_root / "tools"))

from intersectional_debias.errors import InvalidInputError, NoIncludedGroupsError, SelectionError
from intersectional_debias.groups import gerry_group_set
from intersectional_debias.metrics import (
    evaluate_predictions,
    f1_score,
    majority_baseline_f1,
    pareto_frontier,
    points_by_family,
    select_dev_point,
    select_under_tradeoff,
    tpr_violations,
)
from intersectional_debias.models import Dataset, EvalPoint, Provenance

from .helpers import binary_schema, tiny_dataset


def _point(f1, avg, mx=None, method="inlp", grouping="GERRY", split="dev", iterate=None, tag=""):
    provenance = Provenance(method, grouping, {"tag": tag}, split, iterate=iterate, cell=tag)
    return EvalPoint(f1, avg, avg if mx is None else mx, provenance)


def _oracle_f1(preds, labels):
    tp = fp = fn = 0
    for p, y in zip(preds, labels):
        if p == 1 and y == 1:
            tp += 1
        elif p == 1 and y == 0:
            fp += 1
        elif p == 0 and y == 1:
            fn += 1
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def test_f1_matches_brute_force_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        preds = rng.integers(0, 2, size=n)
        labels = rng.integers(0, 2, size=n)
        assert f1_score(preds, labels) == _oracle_f1(preds.tolist(), labels.tolist())
    assert time.perf_counter() - start < 30


def test_f1_edge_cases():
    assert f1_score(np.zeros(4), np.array([1, 0, 1, 0])) == 0.0
    assert f1_score(np.array([1, 1]), np.array([1, 1])) == 1.0
    with pytest.raises(InvalidInputError):
        f1_score(np.zeros(3), np.zeros(4))


def test_tpr_violations_match_brute_force_oracle():
    rng = np.random.default_rng(1)
    schema = binary_schema(3)
    for _ in range(1000):
        n = int(rng.integers(60, 120))
        protected = rng.integers(0, 2, size=(n, 3))
        labels = rng.integers(0, 2, size=n)
        labels[:10] = 1
        preds = rng.integers(0, 2, size=n)
        dataset = Dataset(np.zeros((n, 1)), labels, protected, schema)
        groups = gerry_group_set(dataset)
        try:
            report = tpr_violations(preds, labels, groups, min_positives=5)
        except NoIncludedGroupsError:
            continue

        positives = [i for i in range(n) if labels[i] == 1]
        overall = sum(preds[i] for i in positives) / len(positives)
        violations = []
        for g in groups.defs:
            rows = [i for i in positives if all(protected[i, a] == v for a, v in g.assignment)]
            if len(rows) >= 5:
                violations.append(abs(sum(preds[i] for i in rows) / len(rows) - overall))
        assert report.included == len(violations)
        assert report.avg == pytest.approx(sum(violations) / len(violations), abs=1e-12)
        assert report.max == pytest.approx(max(violations), abs=1e-12)


def test_tpr_violations_skip_small_groups_and_report_them():
    dataset = tiny_dataset()
    groups = gerry_group_set(dataset)
    report = tpr_violations(dataset.labels, dataset.labels, groups, min_positives=2)
    assert report.avg == 0.0 and report.max == 0.0
    assert "a0=1&a1=1" in report.skipped
    assert report.included + len(report.skipped) == len(groups)
    assert report.to_dict()["denominator"] == report.included


def test_tpr_violations_with_no_included_group():
    dataset = tiny_dataset()
    with pytest.raises(NoIncludedGroupsError):
        tpr_violations(dataset.labels, dataset.labels, gerry_group_set(dataset), min_positives=50)


def test_evaluate_predictions_returns_f1_and_report():
    dataset = tiny_dataset()
    preds = np.array([1, 1, 0, 0, 0, 1, 0, 0])
    f1, report = evaluate_predictions(preds, dataset, gerry_group_set(dataset), min_positives=1)
    assert f1 == pytest.approx(_oracle_f1(preds, dataset.labels))
    # Overall TPR is 3/5; the a0=1 group catches none of its 2 positives.
    assert report.overall_tpr == pytest.approx(0.6)
    by_label = {g.label: g for g in report.per_group}
    assert by_label["a0=1"].tpr == 0.0
    assert by_label["a0=1"].violation == pytest.approx(0.6)


def test_majority_baseline_f1():
    assert majority_baseline_f1(np.array([0, 0, 1]), np.array([1, 0, 1])) == 0.0
    assert majority_baseline_f1(np.array([1, 1, 0]), np.array([1, 0, 0, 0])) == pytest.approx(0.4)


def _oracle_frontier(points):
    keep = []
    for i, p in enumerate(points):
        dominated = False
        for j, q in enumerate(points):
            if j == i:
                continue
            better_or_equal = q.f1 >= p.f1 and q.avg_violation <= p.avg_violation
            strictly = q.f1 > p.f1 or q.avg_violation < p.avg_violation
            duplicate_first = (q.f1, q.avg_violation) == (p.f1, p.avg_violation) and j < i
            if (better_or_equal and strictly) or duplicate_first:
                dominated = True
                break
        if not dominated:
            keep.append(i)
    return sorted(keep, key=lambda i: (-points[i].f1, points[i].avg_violation))


def test_pareto_frontier_matches_dominance_oracle():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(1, 15))
        f1s = rng.integers(0, 6, size=n) / 5
        avgs = rng.integers(0, 6, size=n) / 10
        points = [_point(float(f), float(a), tag=str(i)) for i, (f, a) in enumerate(zip(f1s, avgs))]
        frontier = pareto_frontier(points)
        assert [int(p.provenance.cell) for p in frontier] == _oracle_frontier(points)


def test_pareto_frontier_single_point_and_empty():
    only = _point(0.5, 0.1)
    assert pareto_frontier([only]) == [only]
    with pytest.raises(InvalidInputError):
        pareto_frontier([])


def _oracle_select(points, tradeoff):
    best = max(p.f1 for p in points)
    chosen = None
    for p in points:
        if p.f1 < (1 - tradeoff) * best:
            continue
        iterate = p.provenance.iterate
        key = (p.avg_violation, -p.f1, p.max_violation, -1 if iterate is None else iterate)
        if chosen is None or key < chosen[0]:
            chosen = (key, p)
    return chosen[1]


def test_select_dev_point_matches_exhaustive_search():
    rng = np.random.default_rng(3)
    for _ in range(500):
        n = int(rng.integers(1, 12))
        points = [
            _point(float(rng.random()), a, a + float(rng.random()) * 0.1, iterate=i, tag=str(i))
            for i, a in enumerate(rng.integers(0, 5, size=n) / 20)
        ]
        for tradeoff in (0.05, 0.10):
            assert select_dev_point(points, tradeoff) is _oracle_select(points, tradeoff)


def test_select_under_tradeoff_maps_dev_choice_to_test():
    dev = [_point(0.80, 0.10, tag="a"), _point(0.78, 0.02, tag="b"), _point(0.60, 0.0, tag="c")]
    test = {
        p.provenance.key(): _point(
            p.f1 - 0.01, p.avg_violation, split="test", tag=p.provenance.cell
        )
        for p in dev
    }
    chosen = select_under_tradeoff(dev, test, 0.05)
    assert chosen.provenance.cell == "b"
    assert chosen.provenance.split == "test"
    # A callable evaluator works the same way.
    assert select_under_tradeoff(dev, lambda p: test[p.provenance.key()], 0.05) is chosen


def test_select_with_single_point_returns_it_at_any_tradeoff():
    dev = [_point(0.5, 0.2)]
    for tradeoff in (0.05, 0.10):
        assert select_dev_point(dev, tradeoff) is dev[0]


def test_selection_errors():
    with pytest.raises(SelectionError):
        select_dev_point([], 0.05)
    with pytest.raises(SelectionError):
        select_dev_point([_point(0.5, 0.1)], 1.5)
    with pytest.raises(SelectionError):
        select_under_tradeoff([_point(0.5, 0.1)], {}, 0.05)


def test_points_by_family_labels():
    points = [
        _point(0.5, 0.1, method="constrained", grouping="INDEP"),
        _point(0.5, 0.1, method="biased-baseline", grouping="NONE"),
        _point(0.5, 0.1),
    ]
    assert list(points_by_family(points)) == ["CON-INDEP", "Biased model", "INLP-GERRY"]


def test_eval_point_rejects_avg_above_max():
    with pytest.raises(InvalidInputError):
        _point(0.5, 0.3, 0.1)
