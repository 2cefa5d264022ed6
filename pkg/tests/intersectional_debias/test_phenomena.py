"""Behavioural checks on synthetic data: rank collapse, gerrymandering and trade-offs.

These train real probes and models, so they use a handful of seeds and loose margins.
"""

import sys
from pathlib import Path

import pytest

# Add the tools directory to the path
repo_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(repo_root / "tools"))

from intersectional_debias.constrained import (
    constrained_train,
    constraint_spec_for,
    train_unconstrained,
)
from intersectional_debias.groups import gerry_group_set, group_set_for
from intersectional_debias.inlp import apply_projection, inlp_run
from intersectional_debias.metrics import (
    evaluate_predictions,
    f1_score,
    majority_baseline_f1,
    select_under_tradeoff,
)
from intersectional_debias.models import (
    EvalPoint,
    InlpConfig,
    ProbeConfig,
    Provenance,
    TrainerConfig,
)
from intersectional_debias.probes import predict, train_probe

from .helpers import gerrymandered_spec, splits_of, synthetic_spec

PROBES = ProbeConfig(epochs=20, batch_size=None)
MAIN_PROBE = ProbeConfig(epochs=50, batch_size=None, seed=1)
TRAINER = TrainerConfig(learning_rate=0.01, dual_learning_rate=0.5, batch_size=256)
F1_MATCH = 0.03


def _inlp(train, dev, kind, variant, iterations, on_iteration=None, jobs=1):
    config = InlpConfig(
        group_kind=kind,
        variant=variant,
        max_iterations=iterations,
        probe_config=PROBES,
        early_stop=False,
        jobs=jobs,
        main_probe_config=MAIN_PROBE,
    )
    return inlp_run(train, dev, group_set_for(train, kind), config, on_iteration)


def _gerrymandered(seed):
    return splits_of(gerrymandered_spec(n=20000, d=16, seed=seed, strength=2.0, label_shift=0.2))


def _inlp_test_trajectory(splits, kind, iterations):
    """(test F1, test avg violation) of the main-task probe after every iteration."""
    train, dev, test = splits
    groups = gerry_group_set(test)
    trajectory = []

    def record(state, probe):
        f1, report = evaluate_predictions(
            predict(probe, apply_projection(state, test.features)), test, groups
        )
        trajectory.append((f1, report.avg))

    _inlp(train, dev, kind, "principal", iterations, record)
    return trajectory


def _constrained_test_trajectory(splits, kind, nu):
    """(test F1, test avg violation) of every constrained-training iterate."""
    train, dev, test = splits
    groups = gerry_group_set(test)
    trajectory = []

    def record(t, model):
        f1, report = evaluate_predictions(model.predict(test.features), test, groups)
        trajectory.append((f1, report.avg))

    spec = constraint_spec_for(train, kind, nu=nu)
    constrained_train(train, dev, spec, "linear", 30, seed=0, trainer=TRAINER, on_iterate=record)
    return trajectory


def _matched_violation_ratio(indep, gerry):
    """Best INDEP/GERRY violation ratio over GERRY points with an INDEP point of matched F1.

    Each GERRY point is compared with the least-violating INDEP point whose F1 lies
    within F1_MATCH of it.
    """
    ratios = []
    for gerry_f1, gerry_avg in gerry:
        matched = [avg for f1, avg in indep if abs(f1 - gerry_f1) <= F1_MATCH]
        if matched:
            ratios.append(min(matched) / max(gerry_avg, 1e-12))
    assert ratios, "no INDEP iterate reaches an F1 within 0.03 of a GERRY iterate"
    return max(ratios)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_naive_gerry_collapses_rank_but_principal_keeps_utility(seed):
    train, dev, _ = splits_of(synthetic_spec(n=5000, d=64, k=4, seed=seed, base_rate=0.35))
    majority = majority_baseline_f1(train.labels, dev.labels)

    naive = _inlp(train, dev, "GERRY", "naive", 3)
    assert naive.audit_log[0].rank == 0
    assert naive.status == "rank exhausted"
    naive_f1 = [r.dev_f1 for r in naive.audit_log if r.dev_f1 is not None]
    assert min(naive_f1) <= majority + 0.02

    principal = _inlp(train, dev, "GERRY", "principal", 3)
    assert [r.rank for r in principal.audit_log] == [63, 62, 61]
    assert all(r.dev_f1 >= majority + 0.15 for r in principal.audit_log)


def test_principal_gerry_keeps_main_task_f1_while_leakage_falls():
    train, dev, _ = splits_of(synthetic_spec(n=5000, d=64, k=4, seed=0, base_rate=0.35))
    biased = train_probe(train.features, train.labels, MAIN_PROBE, "label")
    biased_f1 = f1_score(predict(biased, dev.features), dev.labels)

    state = _inlp(train, dev, "GERRY", "principal", 20, jobs=4)
    assert [r.rank for r in state.audit_log] == list(range(63, 43, -1))
    assert all(abs(r.dev_f1 - biased_f1) <= 0.05 for r in state.audit_log)
    leakage = [r.mean_probe_acc for r in state.audit_log]
    assert all(later <= earlier + 0.02 for earlier, later in zip(leakage, leakage[1:]))
    assert leakage[-1] < leakage[0]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_inlp_on_marginals_misses_intersectional_bias(seed):
    splits = _gerrymandered(seed)
    indep = _inlp_test_trajectory(splits, "INDEP", 3)
    gerry = _inlp_test_trajectory(splits, "GERRY", 3)
    assert _matched_violation_ratio(indep, gerry) >= 1.5


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_constraints_on_marginals_miss_intersectional_bias(seed):
    splits = _gerrymandered(seed)
    indep = _constrained_test_trajectory(splits, "INDEP", nu=0.02)
    gerry = _constrained_test_trajectory(splits, "GERRY", nu=0.02)
    assert _matched_violation_ratio(indep, gerry) >= 1.5


def test_selected_constrained_model_beats_biased_baseline():
    train, dev, test = _gerrymandered(0)
    dev_groups = gerry_group_set(dev)
    test_groups = gerry_group_set(test)

    biased = train_unconstrained(train, dev, "linear", 30, seed=0, trainer=TRAINER)
    biased_f1, biased_report = evaluate_predictions(
        biased.model.predict(test.features), test, test_groups
    )

    dev_points = []
    test_points = {}

    def record(t, model):
        for split, data, groups in (("dev", dev, dev_groups), ("test", test, test_groups)):
            f1, report = evaluate_predictions(model.predict(data.features), data, groups)
            provenance = Provenance("constrained", "GERRY", {"nu": 0.05}, split, iterate=t)
            point = EvalPoint(f1, report.avg, report.max, provenance)
            if split == "dev":
                dev_points.append(point)
            else:
                test_points[provenance.key()] = point

    spec = constraint_spec_for(train, "GERRY", nu=0.05)
    constrained_train(train, dev, spec, "linear", 30, seed=0, trainer=TRAINER, on_iterate=record)
    chosen = select_under_tradeoff(dev_points, test_points, 0.05)
    assert chosen.provenance.split == "test"
    assert chosen.avg_violation < biased_report.avg
    assert chosen.f1 >= biased_f1 - 0.1
