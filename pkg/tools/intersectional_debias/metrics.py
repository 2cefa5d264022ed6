"""Predictive and fairness metrics, Pareto frontiers and trade-off selection."""

from __future__ import annotations

import logging
from typing import Callable, Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np

from .config import MIN_POSITIVES
from .errors import InvalidInputError, NoIncludedGroupsError, SelectionError
from .models import Dataset, EvalPoint, GroupSet, GroupViolation, ViolationReport


def _binary_pair(preds: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds).ravel().astype(np.int64)
    y = np.asarray(labels).ravel().astype(np.int64)
    if p.shape != y.shape:
        raise InvalidInputError(f"preds ({p.size}) and labels ({y.size}) differ in length")
    return p, y


def f1_score(preds: np.ndarray, labels: np.ndarray) -> float:
    """F1 of the positive class; 0 when precision + recall is 0."""
    p, y = _binary_pair(preds, labels)
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def true_positive_rate(preds: np.ndarray, labels: np.ndarray) -> float:
    p, y = _binary_pair(preds, labels)
    positives = y == 1
    if not positives.any():
        return float("nan")
    return float(np.mean(p[positives] == 1))


def majority_baseline_f1(train_labels: np.ndarray, eval_labels: np.ndarray) -> float:
    """F1 of always predicting the training split's majority class."""
    y_train = np.asarray(train_labels).ravel()
    majority = 1 if np.sum(y_train == 1) > np.sum(y_train == 0) else 0
    y_eval = np.asarray(eval_labels).ravel()
    return f1_score(np.full(y_eval.shape, majority), y_eval)


def tpr_violations(
    preds: np.ndarray,
    labels: np.ndarray,
    group_set: GroupSet,
    min_positives: int = MIN_POSITIVES,
) -> ViolationReport:
    """Average and maximum |tpr_g - tpr| over groups with enough positive rows.

    Groups below `min_positives` are reported as skipped and excluded from both
    aggregates; the average divides by the number of included groups.
    """
    p, y = _binary_pair(preds, labels)
    if group_set.masks.shape[1:] != (p.size,):
        raise InvalidInputError("Group masks do not match the number of predictions")
    positives = y == 1
    overall = true_positive_rate(p, y)
    per_group: List[GroupViolation] = []
    skipped: List[str] = []
    for g, mask in zip(group_set.defs, group_set.masks):
        members = mask & positives
        count = int(members.sum())
        if count < max(min_positives, 1):
            skipped.append(g.label)
            continue
        tpr_g = float(np.mean(p[members] == 1))
        per_group.append(GroupViolation(g.label, tpr_g, abs(tpr_g - overall), count))
    if not per_group:
        raise NoIncludedGroupsError(min_positives, len(skipped))
    if skipped:
        logging.debug("Skipped %d groups with fewer than %d positives", len(skipped), min_positives)
    violations = np.asarray([g.violation for g in per_group])
    return ViolationReport(
        avg=float(violations.mean()),
        max=float(violations.max()),
        overall_tpr=overall,
        per_group=tuple(per_group),
        skipped=tuple(skipped),
        included=len(per_group),
    )


def evaluate_predictions(
    preds: np.ndarray,
    dataset: Dataset,
    gerry_set: GroupSet,
    min_positives: int = MIN_POSITIVES,
) -> Tuple[float, ViolationReport]:
    """(F1, GERRY violation report) of predictions on a dataset."""
    return f1_score(preds, dataset.labels), tpr_violations(
        preds, dataset.labels, gerry_set, min_positives
    )


def pareto_frontier(points: Sequence[EvalPoint]) -> List[EvalPoint]:
    """Points not dominated when maximising F1 and minimising avg violation.

    Exact duplicates collapse to their first occurrence; output is sorted by F1 descending.
    """
    if not points:
        raise InvalidInputError("pareto_frontier needs at least one point")
    ordered = sorted(
        enumerate(points), key=lambda ip: (-ip[1].f1, ip[1].avg_violation, ip[0])
    )
    frontier: List[EvalPoint] = []
    best_violation = float("inf")
    for _, point in ordered:
        if point.avg_violation < best_violation:
            frontier.append(point)
            best_violation = point.avg_violation
    return frontier


def _selection_key(point: EvalPoint) -> Tuple[float, float, float, int]:
    iterate = point.provenance.iterate
    return (
        point.avg_violation,
        -point.f1,
        point.max_violation,
        iterate if iterate is not None else -1,
    )


def select_dev_point(dev_points: Sequence[EvalPoint], tradeoff_fraction: float) -> EvalPoint:
    """Least-violating dev point whose F1 is within `tradeoff_fraction` of the best."""
    if not dev_points:
        raise SelectionError("No dev points to select from")
    if not 0 < tradeoff_fraction < 1:
        raise SelectionError(f"tradeoff_fraction must lie in (0, 1), got {tradeoff_fraction}")
    best_f1 = max(p.f1 for p in dev_points)
    threshold = (1.0 - tradeoff_fraction) * best_f1
    eligible = [p for p in dev_points if p.f1 >= threshold]
    if not eligible:
        raise SelectionError(f"No dev point reaches F1 threshold {threshold:.4f}")
    return min(eligible, key=_selection_key)


TestEvaluator = Union[Callable[[EvalPoint], EvalPoint], Mapping[tuple, EvalPoint]]


def select_under_tradeoff(
    dev_points: Sequence[EvalPoint],
    test_evaluator: TestEvaluator,
    tradeoff_fraction: float,
) -> EvalPoint:
    """Pick a model on dev and return its test evaluation.

    `test_evaluator` is either a callable mapping a dev point to its test point or a
    mapping keyed by provenance key.
    """
    chosen = select_dev_point(dev_points, tradeoff_fraction)
    if callable(test_evaluator):
        return test_evaluator(chosen)
    key = chosen.provenance.key()
    if key not in test_evaluator:
        raise SelectionError(f"No test evaluation for selected point {key}")
    return test_evaluator[key]


def points_by_family(points: Sequence[EvalPoint]) -> Dict[str, List[EvalPoint]]:
    """Group points by report family, preserving first-seen family order."""
    out: Dict[str, List[EvalPoint]] = {}
    for point in points:
        out.setdefault(point.provenance.family, []).append(point)
    return out
