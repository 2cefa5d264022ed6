"""Sweep execution: dataset resolution, per-cell training and ordered result writing."""

from __future__ import annotations

import json
import logging
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Set, Tuple

import numpy as np

from .config import (
    CELL_MANIFEST_FILE,
    MIN_POSITIVES,
    POINTS_FILE,
    RUN_MANIFEST_FILE,
    SPLIT_NAMES,
    SPLITS_FILE,
)
from .constrained import (
    TaskModel,
    constrained_train,
    constraint_spec_for,
    load_task_model,
    retention_stride,
    save_train_state,
    train_unconstrained,
)
from .data import (
    generate_synthetic,
    load_dataset_dir,
    load_split_datasets,
    load_splits,
    save_dataset,
    save_splits,
    split_indices,
)
from .errors import ConfigError, InvalidInputError
from .experiment_config import Cell, ExperimentConfig
from .groups import gerry_group_set, group_set_for
from .inlp import (
    apply_projection,
    inlp_run,
    load_projection_state,
    projector_at,
    save_projection_state,
)
from .metrics import evaluate_predictions
from .models import (
    Dataset,
    EvalPoint,
    GroupSet,
    LinearProbe,
    ProjectionState,
    Provenance,
    ViolationReport,
)
from .probes import load_probe, predict, save_probe
from .utils_io import append_jsonl, iso_today, read_json, read_jsonl, write_json

DATA_DIR = "data"
CELLS_DIR = "cells"
MAIN_PROBES_DIR = "main_probes"


@dataclass
class Splits:
    """Train/dev/test datasets with the GERRY evaluation groups of dev and test."""

    train: Dataset
    dev: Dataset
    test: Dataset
    dev_groups: GroupSet
    test_groups: GroupSet


def resolve_dataset(config: ExperimentConfig, run_dir: Path) -> Splits:
    """Generate or load the dataset, split it and keep a copy under run_dir/data."""
    source = config.dataset
    data_dir = run_dir / DATA_DIR
    if source.synthetic is not None:
        full = generate_synthetic(source.synthetic)
        indices = split_indices(full, source.split_fractions, config.seed, source.stratify)
        save_dataset(full, data_dir)
        save_splits(indices, data_dir / SPLITS_FILE)
    else:
        assert source.path is not None
        full = load_dataset_dir(source.path)
        manifest = source.path / SPLITS_FILE
        if manifest.exists():
            indices = load_splits(manifest, full.n)
        else:
            indices = split_indices(full, source.split_fractions, config.seed, source.stratify)
        if data_dir.resolve() != source.path.resolve():
            save_dataset(full, data_dir)
            save_splits(indices, data_dir / SPLITS_FILE)
    train, dev, test = (full.take(indices[name], name) for name in SPLIT_NAMES)
    logging.info("Splits: train=%d dev=%d test=%d", train.n, dev.n, test.n)
    return Splits(train, dev, test, gerry_group_set(dev), gerry_group_set(test))


def point_key(record: Dict) -> Tuple[str, str, str]:
    return (record["method"], record["grouping"], json.dumps(record["hparams"], sort_keys=True))


class ExperimentRunner:
    """Runs every sweep cell of an experiment and appends points in cell order.

    Cells whose provenance keys already appear in points.jsonl are skipped, so an
    interrupted run resumes where it stopped. Resuming under a different seed is refused.
    """

    def __init__(self, config: ExperimentConfig, run_dir: Path, jobs: Optional[int] = None):
        self.config = config
        self.run_dir = Path(run_dir)
        self.jobs = jobs or config.jobs
        self.points_path = self.run_dir / POINTS_FILE

    def completed_keys(self) -> Set[Tuple[str, str, str]]:
        if not self.points_path.exists():
            return set()
        return {point_key(r) for r in read_jsonl(self.points_path)}

    def check_resumable(self) -> None:
        """Raise ConfigError if existing points were produced under another seed."""
        manifest_path = self.run_dir / RUN_MANIFEST_FILE
        if not (self.points_path.exists() and manifest_path.exists()):
            return
        previous = read_json(manifest_path).get("seed")
        if previous is not None and int(previous) != self.config.seed:
            raise ConfigError(
                f"{self.run_dir} holds points for seed {previous}; "
                f"refusing to resume with seed {self.config.seed}"
            )

    def run(self) -> Dict[str, object]:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.check_resumable()
        splits = resolve_dataset(self.config, self.run_dir)
        cells = self.config.cells()
        done = self.completed_keys()
        pending = [c for c in cells if c.key() not in done]
        if len(pending) < len(cells):
            logging.info(
                "Resuming: %d of %d cells already complete", len(cells) - len(pending), len(cells)
            )

        written = 0
        if self.jobs <= 1 or len(pending) <= 1:
            for cell in pending:
                written += self._append(self.run_cell(cell, splits))
        else:
            with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                futures: List[Future] = [pool.submit(self.run_cell, c, splits) for c in pending]
                # Results are appended strictly in cell order.
                for future in futures:
                    written += self._append(future.result())

        manifest = {
            "name": self.config.name,
            "seed": self.config.seed,
            "created": iso_today(),
            "cells": [c.cell_id for c in cells],
            "points": written,
            "train": splits.train.n,
            "dev": splits.dev.n,
            "test": splits.test.n,
        }
        write_json(self.run_dir / RUN_MANIFEST_FILE, manifest)
        return {
            "run_dir": str(self.run_dir),
            "cells": len(cells),
            "skipped_cells": len(cells) - len(pending),
            "points_written": written,
        }

    def _append(self, points: List[EvalPoint]) -> int:
        for point in points:
            append_jsonl(self.points_path, point.to_record())
        return len(points)

    # ------------------------------------------------------------------
    # Cells
    # ------------------------------------------------------------------

    def cell_dir(self, cell: Cell) -> Path:
        return self.run_dir / CELLS_DIR / cell.cell_id

    def run_cell(self, cell: Cell, splits: Splits) -> List[EvalPoint]:
        logging.info("Cell %s: %s %s %s", cell.cell_id, cell.method, cell.grouping, cell.hparams)
        out_dir = self.cell_dir(cell)
        out_dir.mkdir(parents=True, exist_ok=True)
        if cell.method == "inlp":
            points = self._run_inlp(cell, splits, out_dir)
        else:
            points = self._run_trainer(cell, splits, out_dir)
        write_json(
            out_dir / CELL_MANIFEST_FILE,
            {
                "cell": cell.cell_id,
                "method": cell.method,
                "grouping": cell.grouping,
                "hparams": cell.hparams,
                "seed": self.config.seed,
                "points": len(points),
            },
        )
        logging.info("Cell %s finished with %d points", cell.cell_id, len(points))
        return points

    def _evaluate(
        self,
        cell: Cell,
        preds_dev: np.ndarray,
        preds_test: np.ndarray,
        splits: Splits,
        iterate: Optional[int],
        rank: Optional[int] = None,
    ) -> List[EvalPoint]:
        points = []
        for split_name, preds, dataset, groups in (
            ("dev", preds_dev, splits.dev, splits.dev_groups),
            ("test", preds_test, splits.test, splits.test_groups),
        ):
            f1, report = evaluate_predictions(preds, dataset, groups, self.config.min_positives)
            provenance = Provenance(
                method=cell.method,
                grouping=cell.grouping,
                hparams=cell.hparams,
                split=split_name,
                iterate=iterate,
                rank=rank,
                cell=cell.cell_id,
            )
            points.append(EvalPoint(f1, report.avg, report.max, provenance))
        return points

    def _run_inlp(self, cell: Cell, splits: Splits, out_dir: Path) -> List[EvalPoint]:
        config = cell.inlp_config(self.config.seed, jobs=1)
        group_set = group_set_for(splits.train, cell.grouping)
        points: List[EvalPoint] = []

        def on_iteration(state: ProjectionState, probe: Optional[LinearProbe]) -> None:
            assert probe is not None
            save_probe(probe, out_dir / MAIN_PROBES_DIR / f"iter_{state.iteration:03d}.json")
            preds_dev = predict(probe, apply_projection(state, splits.dev.features))
            preds_test = predict(probe, apply_projection(state, splits.test.features))
            points.extend(
                self._evaluate(cell, preds_dev, preds_test, splits, state.iteration, state.rank)
            )

        state = inlp_run(splits.train, splits.dev, group_set, config, on_iteration)
        save_projection_state(state, out_dir)
        return points

    def _evaluate_model(
        self, cell: Cell, model: TaskModel, splits: Splits, iterate: int
    ) -> List[EvalPoint]:
        preds_dev = model.predict(splits.dev.features)
        preds_test = model.predict(splits.test.features)
        return self._evaluate(cell, preds_dev, preds_test, splits, iterate)

    def _run_trainer(self, cell: Cell, splits: Splits, out_dir: Path) -> List[EvalPoint]:
        h = cell.hparams
        T = int(h["T"])
        kind = str(h["model_kind"])
        trainer = cell.trainer_config(self.config.min_positives)
        seed = self.config.seed

        if cell.method == "biased-baseline":
            state = train_unconstrained(splits.train, splits.dev, kind, T, seed, trainer)
            points = self._evaluate_model(cell, state.model, splits, T)
        else:
            stride = retention_stride(T)
            points = []

            def on_iterate(t: int, model: TaskModel) -> None:
                if t % stride == 0 or t == T:
                    points.extend(self._evaluate_model(cell, model, splits, t))

            spec = constraint_spec_for(
                splits.train, cell.grouping, float(h["nu"]), str(h.get("gamma_mode", "uniform"))
            )
            state = constrained_train(
                splits.train, splits.dev, spec, kind, T, seed, trainer, on_iterate
            )
        save_train_state(state, out_dir)
        return points


def load_cell_manifest(run_dir: Path, cell_id: str) -> Dict[str, Any]:
    path = Path(run_dir) / CELLS_DIR / cell_id / CELL_MANIFEST_FILE
    if not path.exists():
        raise InvalidInputError(f"No cell manifest at {path}")
    return read_json(path)


def load_run_splits(run_dir: Path) -> Tuple[Dataset, Dataset, Dataset]:
    return load_split_datasets(Path(run_dir) / DATA_DIR)


def evaluate_cell(
    run_dir: Path,
    cell_id: str,
    dataset: Dataset,
    iterate: Optional[int] = None,
    min_positives: int = MIN_POSITIVES,
) -> Tuple[float, ViolationReport, Dict[str, Any]]:
    """Re-score a stored cell model (optionally an earlier iterate) on a dataset."""
    manifest = load_cell_manifest(run_dir, cell_id)
    cell_dir = Path(run_dir) / CELLS_DIR / cell_id
    if manifest["method"] == "inlp":
        state = load_projection_state(cell_dir)
        iteration = state.iteration if iterate is None else iterate
        if state.iteration < 1:
            raise InvalidInputError(f"Cell {cell_id} has no recorded INLP iteration")
        if not 1 <= iteration <= state.iteration:
            raise InvalidInputError(
                f"Cell {cell_id} recorded INLP iterations 1..{state.iteration}, got {iteration}"
            )
        probe = load_probe(cell_dir / MAIN_PROBES_DIR / f"iter_{iteration:03d}.json")
        projected = apply_projection(projector_at(state, iteration), dataset.features)
        preds = predict(probe, projected)
        used = iteration
    else:
        model = load_task_model(cell_dir, iterate)
        preds = model.predict(dataset.features)
        used = iterate if iterate is not None else int(manifest["hparams"]["T"])
    f1, report = evaluate_predictions(preds, dataset, gerry_group_set(dataset), min_positives)
    return f1, report, {**manifest, "iterate": used}
