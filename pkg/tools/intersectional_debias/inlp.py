"""Iterative nullspace projection over multiple, possibly overlapping, protected groups.

Two variants are supported:

- ``naive``: every iteration removes the whole rowspace spanned by the stacked probe
  weights, composing ``P <- P_new . P``.
- ``principal``: every iteration removes only the leading direction(s) of the stacked
  weights, Gram-Schmidt orthogonalised against everything removed so far, and rebuilds
  the projector as the nullspace of the accumulated sum of rank-one projectors.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .config import (
    AUDIT_LOG_FILE,
    DIRECTIONS_FILE,
    PROJECTOR_FILE,
    RESIDUAL_TOL,
    STATE_FILE,
)
from .errors import ConfigError, DegenerateBiasError, DimensionMismatchError, InvalidInputError
from .linalg import (
    Projector,
    gram_schmidt,
    nullspace_of_sum,
    nullspace_projector,
    projector_from_basis,
    row_basis,
    symmetrize,
    top_directions,
)
from .metrics import f1_score
from .models import AuditRecord, Dataset, GroupSet, InlpConfig, LinearProbe, ProjectionState
from .probes import majority_rate, predict, probe_accuracy, train_probe, train_probes
from .utils_io import (
    read_json,
    read_jsonl,
    read_matrix_csv,
    write_json,
    write_jsonl,
    write_matrix_csv,
)

IterationCallback = Callable[[ProjectionState, Optional[LinearProbe]], None]

# (name, train targets, dev targets) for every probe trained per iteration.
ProbeTarget = Tuple[str, np.ndarray, np.ndarray]


def initial_state(d: int) -> ProjectionState:
    return ProjectionState(projector=Projector.identity(d), direction_sum=np.zeros((d, d)))


def apply_projection(
    state: Union[ProjectionState, Projector], features: np.ndarray
) -> np.ndarray:
    """Project every row of `features`; returns X P^T."""
    projector = state.projector if isinstance(state, ProjectionState) else state
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[1] != projector.d:
        raise DimensionMismatchError(projector.d, X.shape[-1] if X.ndim else 0)
    return X @ projector.matrix.T


def probe_targets(train: Dataset, dev: Dataset, group_set: GroupSet) -> List[ProbeTarget]:
    """Targets for one iteration's probes.

    INDEP trains one (one-vs-rest) probe per attribute; INTER and GERRY train one
    membership probe per group.
    """
    if group_set.masks.shape[1] != train.n:
        raise InvalidInputError("Group set was not built on the training split")
    if group_set.kind == "INDEP":
        attributes: List[int] = []
        for g in group_set.defs:
            for a in g.fixed_attributes:
                if a not in attributes:
                    attributes.append(a)
        names = train.schema.names
        return [(names[a], train.protected[:, a], dev.protected[:, a]) for a in attributes]
    return [
        (g.label, mask.astype(np.int64), g.matches(dev.protected).astype(np.int64))
        for g, mask in zip(group_set.defs, group_set.masks)
    ]


def _iteration_seed(base_seed: int, iteration: int, attempt: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), iteration, attempt]).generate_state(1)[0])


def _train_iteration_probes(
    X: np.ndarray,
    targets: List[ProbeTarget],
    config: InlpConfig,
    iteration: int,
    attempt: int,
) -> Tuple[List[Tuple[ProbeTarget, LinearProbe]], List[str]]:
    usable = []
    skipped = []
    for target in targets:
        if np.unique(target[1]).size < 2:
            logging.warning("Skipping probe '%s': single-class membership", target[0])
            skipped.append(target[0])
        else:
            usable.append(target)
    seed = _iteration_seed(config.probe_config.seed, iteration, attempt)
    probes = train_probes(
        X,
        [t[1] for t in usable],
        config.probe_config.with_seed(seed),
        jobs=config.jobs,
        names=[t[0] for t in usable],
    )
    return list(zip(usable, probes)), skipped


def _remove_naive(state: ProjectionState, stacked: np.ndarray) -> int:
    effective = stacked @ state.projector.matrix
    if not np.any(np.abs(effective) > RESIDUAL_TOL):
        raise DegenerateBiasError("Probe weights vanish on the current projected space")
    basis = row_basis(effective)
    composed = nullspace_projector(effective).matrix @ state.projector.matrix
    state.directions.extend(list(basis))
    for v in basis:
        state.direction_sum += np.outer(v, v)
    rank = max(state.d - len(state.directions), 0)
    matrix = symmetrize(composed) if rank > 0 else np.zeros((state.d, state.d))
    state.projector = Projector(matrix, rank)
    return basis.shape[0]


def _remove_principal(state: ProjectionState, stacked: np.ndarray, count: int) -> int:
    added = 0
    for v in top_directions(stacked, count):
        residual, norm = gram_schmidt(v, state.directions)
        if norm < RESIDUAL_TOL:
            break
        state.directions.append(residual)
        state.direction_sum += np.outer(residual, residual)
        added += 1
    if added:
        state.projector = nullspace_of_sum(symmetrize(state.direction_sum))
    return added


def _fit_main_probe(
    train: Dataset, dev: Dataset, state: ProjectionState, config: InlpConfig
) -> Tuple[LinearProbe, float]:
    probe = train_probe(
        apply_projection(state, train.features), train.labels, config.main_probe_config, "label"
    )
    preds = predict(probe, apply_projection(state, dev.features))
    return probe, f1_score(preds, dev.labels)


def inlp_run(
    train: Dataset,
    dev: Dataset,
    group_set: GroupSet,
    config: InlpConfig,
    on_iteration: Optional[IterationCallback] = None,
) -> ProjectionState:
    """Run extended INLP and return the accumulated projection with its audit log."""
    d = train.d
    if dev.d != d:
        raise DimensionMismatchError(d, dev.d, "dev features")
    if config.max_iterations > d:
        raise ConfigError(f"max_iterations {config.max_iterations} exceeds feature dim {d}")
    if group_set.kind not in (None, config.group_kind) or len(group_set) == 0:
        raise InvalidInputError(
            f"Group set of kind {group_set.kind} does not match {config.group_kind}"
        )

    state = initial_state(d)
    targets = probe_targets(train, dev, group_set)
    logging.info(
        "INLP %s/%s: %d probes per iteration, up to %d iterations",
        config.variant,
        config.group_kind,
        len(targets),
        config.max_iterations,
    )

    for iteration in range(1, config.max_iterations + 1):
        if state.rank == 0:
            state.status = "rank exhausted"
            break
        X_train = apply_projection(state, train.features)
        X_dev = apply_projection(state, dev.features)

        removed = 0
        attempt = 0
        while True:
            fitted, skipped = _train_iteration_probes(X_train, targets, config, iteration, attempt)
            if not fitted:
                state.status = "bias subspace exhausted"
                break
            probe_acc = {t[0]: probe_accuracy(p, X_dev, t[2]) for t, p in fitted}
            majority = {t[0]: majority_rate(t[2]) for t, _ in fitted}
            if config.early_stop and all(
                probe_acc[name] <= majority[name] + config.leakage_margin for name in probe_acc
            ):
                state.status = "converged"
                break
            stacked = np.vstack([p.weights for _, p in fitted])
            try:
                if config.variant == "naive":
                    removed = _remove_naive(state, stacked)
                else:
                    removed = _remove_principal(state, stacked, config.directions_per_iteration)
            except DegenerateBiasError as e:
                logging.warning("Iteration %d: %s", iteration, e)
                removed = 0
            if removed or attempt >= 1:
                break
            attempt += 1
            logging.info("Iteration %d: no new direction; retraining probes once", iteration)
        if state.status in ("converged", "bias subspace exhausted"):
            break
        if not removed:
            state.status = "bias subspace exhausted"
            break

        state.iteration = iteration
        main_probe: Optional[LinearProbe] = None
        dev_f1: Optional[float] = None
        if on_iteration is not None or iteration % config.audit_every == 0:
            main_probe, dev_f1 = _fit_main_probe(train, dev, state, config)
        state.audit_log.append(
            AuditRecord(
                iteration=iteration,
                rank=state.rank,
                probe_acc=probe_acc,
                majority=majority,
                dev_f1=dev_f1,
                directions_removed=removed,
                skipped=tuple(skipped),
            )
        )
        logging.info(
            "Iteration %d: removed %d direction(s), rank=%d, mean probe acc=%.4f, dev_f1=%s",
            iteration,
            removed,
            state.rank,
            state.audit_log[-1].mean_probe_acc,
            "n/a" if dev_f1 is None else f"{dev_f1:.4f}",
        )
        if on_iteration is not None:
            on_iteration(state, main_probe)
    else:
        state.status = "max_iterations"

    logging.info("INLP finished after %d iterations: %s", state.iteration, state.status)
    return state


def directions_matrix(state: ProjectionState) -> np.ndarray:
    if not state.directions:
        return np.zeros((0, state.d))
    return np.vstack(state.directions)


def projector_at(state: ProjectionState, iteration: int) -> Projector:
    """Projector after `iteration` recorded iterations (0 = identity)."""
    if not 0 <= iteration <= state.iteration:
        raise InvalidInputError(f"Iteration {iteration} outside [0, {state.iteration}]")
    count = sum(r.directions_removed for r in state.audit_log if r.iteration <= iteration)
    return projector_from_basis(directions_matrix(state)[:count], state.d)


def save_projection_state(state: ProjectionState, out_dir: Path) -> None:
    """Write projector.csv, directions.csv, audit_log.jsonl and state.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out_dir / PROJECTOR_FILE, state.projector.matrix)
    write_matrix_csv(out_dir / DIRECTIONS_FILE, directions_matrix(state))
    write_jsonl(out_dir / AUDIT_LOG_FILE, [r.to_dict() for r in state.audit_log])
    write_json(
        out_dir / STATE_FILE,
        {"d": state.d, "rank": state.rank, "iteration": state.iteration, "status": state.status},
    )


def load_projection_state(directory: Path) -> ProjectionState:
    directory = Path(directory)
    meta: Dict = read_json(directory / STATE_FILE)
    d = int(meta["d"])
    matrix = read_matrix_csv(directory / PROJECTOR_FILE, d)
    directions = read_matrix_csv(directory / DIRECTIONS_FILE, d)
    state = initial_state(d)
    state.projector = Projector(matrix, int(meta["rank"]))
    state.directions = [row.copy() for row in directions]
    for v in state.directions:
        state.direction_sum += np.outer(v, v)
    state.iteration = int(meta["iteration"])
    state.status = str(meta["status"])
    state.audit_log = [AuditRecord.from_dict(r) for r in read_jsonl(directory / AUDIT_LOG_FILE)]
    return state
