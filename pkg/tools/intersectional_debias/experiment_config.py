"""Experiment configuration: YAML loading, schema validation and sweep-grid expansion.

Example YAML structure:
    name: gerry-demo
    seed: 0
    dataset:
      synthetic: synthetic_k2.yaml      # or inline mapping, or `path: <dataset dir>`
      split_fractions: [0.7, 0.15, 0.15]
      stratify: label
    experiments:
      - method: biased-baseline
        T: 30
      - method: inlp
        grouping: [INDEP, GERRY]        # list-valued keys are grid axes
        variant: principal
        max_iterations: 10
      - method: constrained
        grouping: GERRY
        nu: [0.05, 0.1]
        T: 30
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .config import (
    DEFAULT_SPLIT_FRACTIONS,
    GAMMA_MODES,
    GROUP_KINDS,
    INLP_VARIANTS,
    MAX_OUTER_ITERATIONS,
    METHODS,
    MIN_POSITIVES,
    MODEL_KINDS,
    STRATIFY_MODES,
)
from .errors import ConfigError
from .models import InlpConfig, ProbeConfig, SyntheticSpec, TrainerConfig
from .utils_io import read_structured

NO_GROUPING = "NONE"

TRAINER_KEYS = {"model_kind", "T", "learning_rate", "batch_size", "hidden_dim"}
PROBE_KEYS = {"probe_learning_rate", "probe_epochs", "probe_l2", "probe_batch_size"}


class ExperimentSchema:
    """Allowed and required hyperparameter keys per method."""

    REQUIRED_KEYS = {
        "biased-baseline": {"T"},
        "inlp": {"grouping", "variant", "max_iterations"},
        "constrained": {"grouping", "nu", "T"},
    }

    ALLOWED_KEYS = {
        "biased-baseline": TRAINER_KEYS,
        "inlp": {
            "grouping",
            "variant",
            "max_iterations",
            "audit_every",
            "directions_per_iteration",
            "early_stop",
            "leakage_margin",
        }
        | PROBE_KEYS,
        "constrained": TRAINER_KEYS
        | {"grouping", "nu", "gamma_mode", "dual_learning_rate", "lambda_init"},
    }

    VALID_VALUES: Dict[str, Sequence[Any]] = {
        "grouping": GROUP_KINDS,
        "variant": INLP_VARIANTS,
        "model_kind": MODEL_KINDS,
        "gamma_mode": GAMMA_MODES,
    }

    @classmethod
    def validate(cls, index: int, entry: Dict[str, Any]) -> None:
        where = f"experiments[{index}]"
        method = entry.get("method")
        if method not in METHODS:
            raise ConfigError(f"{where}: invalid method '{method}'. Must be one of: {METHODS}")
        keys = set(entry) - {"method"}
        missing = cls.REQUIRED_KEYS[method] - keys
        if missing:
            raise ConfigError(f"{where}: missing required keys: {sorted(missing)}")
        unknown = keys - cls.ALLOWED_KEYS[method]
        if unknown:
            raise ConfigError(f"{where}: unknown keys for {method}: {sorted(unknown)}")
        for key, value in entry.items():
            if key == "method":
                continue
            values = value if isinstance(value, list) else [value]
            if not values:
                raise ConfigError(f"{where}: '{key}' grid is empty")
            for v in values:
                cls._check_value(where, key, v)

    @classmethod
    def _check_value(cls, where: str, key: str, value: Any) -> None:
        if key in cls.VALID_VALUES and value not in cls.VALID_VALUES[key]:
            raise ConfigError(
                f"{where}: invalid {key} '{value}'. Must be one of: {list(cls.VALID_VALUES[key])}"
            )
        if key == "T" and not (isinstance(value, int) and 1 <= value <= MAX_OUTER_ITERATIONS):
            raise ConfigError(f"{where}: T must be an integer in [1, {MAX_OUTER_ITERATIONS}]")
        if key == "nu" and not (isinstance(value, (int, float)) and 1e-4 <= value <= 1):
            raise ConfigError(f"{where}: nu must lie in [1e-4, 1], got {value}")
        if key == "max_iterations" and not (isinstance(value, int) and value >= 1):
            raise ConfigError(f"{where}: max_iterations must be a positive integer")


@dataclass(frozen=True)
class Cell:
    """One point of a sweep grid."""

    index: int
    method: str
    grouping: str
    hparams: Dict[str, Any]

    @property
    def cell_id(self) -> str:
        return f"{self.index:03d}-{self.method}-{self.grouping.lower()}"

    def key(self) -> Tuple[str, str, str]:
        return (self.method, self.grouping, json.dumps(self.hparams, sort_keys=True))

    def trainer_config(self, min_positives: int) -> TrainerConfig:
        return TrainerConfig.from_dict({**self.hparams, "min_positives": min_positives})

    def inlp_config(self, seed: int, jobs: int) -> InlpConfig:
        h = self.hparams
        probe = ProbeConfig.from_dict(
            {k[len("probe_") :]: v for k, v in h.items() if k.startswith("probe_")}, seed=seed
        )
        return InlpConfig(
            group_kind=self.grouping,
            variant=str(h["variant"]),
            max_iterations=int(h["max_iterations"]),
            probe_config=probe,
            audit_every=int(h.get("audit_every", 1)),
            directions_per_iteration=int(h.get("directions_per_iteration", 1)),
            early_stop=bool(h.get("early_stop", True)),
            leakage_margin=float(h.get("leakage_margin", 0.01)),
            jobs=jobs,
            main_probe_config=probe.with_seed(seed + 1),
        )


@dataclass
class DatasetSource:
    synthetic: Optional[SyntheticSpec] = None
    path: Optional[Path] = None
    split_fractions: Tuple[float, ...] = DEFAULT_SPLIT_FRACTIONS
    stratify: str = "label"


@dataclass
class ExperimentConfig:
    """A validated experiment definition."""

    name: str
    seed: int
    dataset: DatasetSource
    experiments: List[Dict[str, Any]]
    output_dir: Optional[Path] = None
    min_positives: int = MIN_POSITIVES
    jobs: int = 1
    source: Optional[Path] = None
    raw: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def load(cls, path: Path) -> "ExperimentConfig":
        path = Path(path).resolve()
        data = read_structured(path)
        if not isinstance(data, dict):
            raise ConfigError(f"Experiment config must be a mapping at root level: {path}")
        config = cls.from_dict(data, base_dir=path.parent)
        config.source = path
        logging.info("Loaded experiment config %s (%d cells)", path, len(config.cells()))
        return config

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Optional[Path] = None) -> "ExperimentConfig":
        base_dir = base_dir or Path.cwd()
        if "dataset" not in data:
            raise ConfigError("Experiment config missing required key: dataset")
        experiments = data.get("experiments")
        if experiments is None and "method" in data:
            allowed = set().union(*ExperimentSchema.ALLOWED_KEYS.values()) | {"method"}
            experiments = [{k: v for k, v in data.items() if k in allowed}]
        if not isinstance(experiments, list) or not experiments:
            raise ConfigError("Experiment config needs a non-empty 'experiments' list")
        for i, entry in enumerate(experiments):
            if not isinstance(entry, dict):
                raise ConfigError(f"experiments[{i}] must be a mapping")
            ExperimentSchema.validate(i, entry)

        seed = data.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
        jobs = int(data.get("jobs", 1))
        if jobs < 1:
            raise ConfigError("jobs must be at least 1")
        out = data.get("output_dir")
        return cls(
            name=str(data.get("name", "experiment")),
            seed=seed,
            dataset=cls._parse_dataset(data["dataset"], base_dir),
            experiments=[dict(e) for e in experiments],
            output_dir=(base_dir / out) if out else None,
            min_positives=int(data.get("min_positives", MIN_POSITIVES)),
            jobs=jobs,
            raw=data,
        )

    @staticmethod
    def _parse_dataset(raw: Any, base_dir: Path) -> DatasetSource:
        if not isinstance(raw, dict):
            raise ConfigError("dataset must be a mapping")
        fractions = tuple(float(f) for f in raw.get("split_fractions", DEFAULT_SPLIT_FRACTIONS))
        stratify = str(raw.get("stratify", "label"))
        if stratify not in STRATIFY_MODES:
            raise ConfigError(f"dataset.stratify must be one of {list(STRATIFY_MODES)}")
        synthetic = raw.get("synthetic")
        path = raw.get("path")
        if (synthetic is None) == (path is None):
            raise ConfigError("dataset needs exactly one of 'synthetic' or 'path'")
        if synthetic is not None:
            if isinstance(synthetic, str):
                synthetic = read_structured(base_dir / synthetic)
            if not isinstance(synthetic, dict):
                raise ConfigError("dataset.synthetic must be a mapping or a spec file path")
            return DatasetSource(SyntheticSpec.from_dict(synthetic), None, fractions, stratify)
        return DatasetSource(None, base_dir / str(path), fractions, stratify)

    def cells(self) -> List[Cell]:
        """Expand every experiment's list-valued keys into grid cells.

        Axes are expanded lexicographically by key name; cells keep experiment order.
        """
        cells: List[Cell] = []
        for entry in self.experiments:
            method = entry["method"]
            keys = sorted(k for k in entry if k != "method")
            axes = [entry[k] if isinstance(entry[k], list) else [entry[k]] for k in keys]
            for combo in itertools.product(*axes):
                hparams = dict(zip(keys, combo))
                grouping = str(hparams.pop("grouping", NO_GROUPING))
                if method != "inlp":
                    hparams.setdefault("model_kind", "linear")
                cells.append(Cell(len(cells), method, grouping, hparams))
        return cells
