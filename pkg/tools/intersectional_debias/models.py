from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Tuple

import numpy as np

from .config import (
    BIASED_LABEL,
    DUAL_LEARNING_RATE,
    GROUP_KINDS,
    INLP_VARIANTS,
    LEAKAGE_MARGIN,
    METHOD_PREFIX,
    MIN_POSITIVES,
    MLP_HIDDEN_DIM,
    PRIMAL_LEARNING_RATE,
    PROBE_BATCH_SIZE,
    PROBE_EPOCHS,
    PROBE_L2,
    PROBE_LEARNING_RATE,
    SPLIT_NAMES,
    TRAIN_BATCH_SIZE,
    WILDCARD,
)
from .errors import ConfigError, InvalidInputError

if TYPE_CHECKING:
    from .linalg import Projector

# Partial assignment over attributes; None marks a wildcard position.
Combination = Tuple[Optional[int], ...]


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered protected attributes and their cardinalities."""

    attributes: Tuple[Tuple[str, int], ...]

    def __post_init__(self) -> None:
        if not self.attributes:
            raise InvalidInputError("Schema must declare at least one attribute")
        seen = set()
        for name, cardinality in self.attributes:
            if not name:
                raise InvalidInputError("Attribute names must be non-empty")
            if name in seen:
                raise InvalidInputError(f"Duplicate attribute name '{name}'")
            if int(cardinality) < 2:
                raise InvalidInputError(
                    f"Attribute '{name}' has cardinality {cardinality}; at least 2 required"
                )
            seen.add(name)

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.attributes]

    @property
    def cardinalities(self) -> List[int]:
        return [int(c) for _, c in self.attributes]

    @property
    def k(self) -> int:
        return len(self.attributes)

    def to_dict(self) -> Dict[str, Any]:
        return {"attributes": [{"name": n, "cardinality": int(c)} for n, c in self.attributes]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AttributeSchema":
        raw = data.get("attributes") if isinstance(data, dict) else None
        if not isinstance(raw, list):
            raise ConfigError("Schema must be an object with an 'attributes' list")
        attributes = []
        for item in raw:
            if not isinstance(item, dict) or "name" not in item or "cardinality" not in item:
                raise ConfigError(f"Invalid schema attribute entry: {item!r}")
            attributes.append((str(item["name"]), int(item["cardinality"])))
        return cls(tuple(attributes))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with binary task labels and categorical protected attributes."""

    features: np.ndarray  # n x d
    labels: np.ndarray  # n, values in {0, 1}
    protected: np.ndarray  # n x k category indices
    schema: AttributeSchema
    split: str = "train"
    ids: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64)
        protected = np.asarray(self.protected, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
            raise InvalidInputError(
                f"Features must be a non-empty 2-d matrix, got {features.shape}"
            )
        n = features.shape[0]
        if not np.all(np.isfinite(features)):
            raise InvalidInputError("Features contain non-finite values")
        if labels.shape != (n,):
            raise InvalidInputError(f"Expected {n} labels, got shape {labels.shape}")
        if not np.all((labels == 0) | (labels == 1)):
            raise InvalidInputError("Labels must be binary (0/1)")
        if protected.shape != (n, self.schema.k):
            raise InvalidInputError(
                f"Protected table must be {n} x {self.schema.k}, got {protected.shape}"
            )
        for a, cardinality in enumerate(self.schema.cardinalities):
            column = protected[:, a]
            if np.any(column < 0) or np.any(column >= cardinality):
                raise InvalidInputError(
                    f"Attribute '{self.schema.names[a]}' has values outside [0, {cardinality})"
                )
        if self.split not in SPLIT_NAMES:
            raise InvalidInputError(f"Unknown split '{self.split}'")
        ids = self.ids or tuple(f"row-{i:06d}" for i in range(n))
        if len(ids) != n:
            raise InvalidInputError(f"Expected {n} ids, got {len(ids)}")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "protected", protected)
        object.__setattr__(self, "ids", tuple(ids))

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    @property
    def positive_rate(self) -> float:
        return float(self.labels.mean())

    def take(self, indices: np.ndarray, split: str) -> "Dataset":
        """Return the rows at `indices` (kept in ascending order) tagged with `split`."""
        idx = np.sort(np.asarray(indices, dtype=np.int64))
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            protected=self.protected[idx],
            schema=self.schema,
            split=split,
            ids=tuple(self.ids[i] for i in idx),
        )


def parse_combination(key: str, k: int) -> Combination:
    """Parse a comma-separated partial assignment such as "1,*,0"."""
    parts = [p.strip() for p in str(key).split(",")]
    if len(parts) != k:
        raise ConfigError(f"Combination '{key}' must list {k} values")
    values: List[Optional[int]] = []
    for part in parts:
        if part == WILDCARD:
            values.append(None)
        else:
            try:
                values.append(int(part))
            except ValueError as e:
                raise ConfigError(f"Invalid value '{part}' in combination '{key}'") from e
    return tuple(values)


def format_combination(combo: Combination) -> str:
    return ",".join(WILDCARD if v is None else str(v) for v in combo)


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs of the seeded synthetic-bias generator."""

    n: int
    d: int
    schema: AttributeSchema
    label_signal: float
    attribute_signal: Tuple[float, ...]
    intersection_signal: Tuple[Tuple[Combination, float], ...]
    label_bias: Tuple[float, ...]
    noise_std: float
    seed: int
    base_rate: float = 0.5
    intersection_label_bias: Tuple[Tuple[Combination, float], ...] = ()
    intersection_direction: str = "per_combo"  # per_combo | shared

    def __post_init__(self) -> None:
        k = self.schema.k
        if self.n < 1 or self.d < 1:
            raise ConfigError("Synthetic spec needs n >= 1 and d >= 1")
        if len(self.attribute_signal) != k or len(self.label_bias) != k:
            raise ConfigError(f"attribute_signal and label_bias must have {k} entries")
        if self.label_signal < 0 or any(s < 0 for s in self.attribute_signal):
            raise ConfigError("Signals must be non-negative")
        if any(abs(b) > 1 for b in self.label_bias):
            raise ConfigError("label_bias entries must lie in [-1, 1]")
        if self.noise_std <= 0:
            raise ConfigError("noise_std must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if not 0 < self.base_rate < 1:
            raise ConfigError("base_rate must lie in (0, 1)")
        if self.intersection_direction not in ("per_combo", "shared"):
            raise ConfigError("intersection_direction must be 'per_combo' or 'shared'")
        for combo, _ in self.intersection_signal + self.intersection_label_bias:
            if len(combo) != k:
                raise ConfigError(f"Combination {combo} must have {k} entries")
            for a, value in enumerate(combo):
                if value is not None and not 0 <= value < self.schema.cardinalities[a]:
                    raise ConfigError(f"Combination {combo} has out-of-range value at {a}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SyntheticSpec":
        try:
            schema = AttributeSchema.from_dict(data["schema"])
            k = schema.k

            def _combos(raw: Optional[Dict[str, Any]]) -> Tuple[Tuple[Combination, float], ...]:
                items = (raw or {}).items()
                return tuple(
                    sorted(
                        ((parse_combination(key, k), float(v)) for key, v in items),
                        key=lambda kv: format_combination(kv[0]),
                    )
                )

            return cls(
                n=int(data["n"]),
                d=int(data["d"]),
                schema=schema,
                label_signal=float(data.get("label_signal", 0.0)),
                attribute_signal=tuple(float(x) for x in data.get("attribute_signal", [0.0] * k)),
                intersection_signal=_combos(data.get("intersection_signal")),
                label_bias=tuple(float(x) for x in data.get("label_bias", [0.0] * k)),
                noise_std=float(data.get("noise_std", 1.0)),
                seed=int(data.get("seed", 0)),
                base_rate=float(data.get("base_rate", 0.5)),
                intersection_label_bias=_combos(data.get("intersection_label_bias")),
                intersection_direction=str(data.get("intersection_direction", "per_combo")),
            )
        except KeyError as e:
            raise ConfigError(f"Synthetic spec missing required key: {e}") from e
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid synthetic spec: {e}") from e

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "d": self.d,
            "schema": self.schema.to_dict(),
            "label_signal": self.label_signal,
            "attribute_signal": list(self.attribute_signal),
            "intersection_signal": {
                format_combination(c): v for c, v in self.intersection_signal
            },
            "label_bias": list(self.label_bias),
            "noise_std": self.noise_std,
            "seed": self.seed,
            "base_rate": self.base_rate,
            "intersection_label_bias": {
                format_combination(c): v for c, v in self.intersection_label_bias
            },
            "intersection_direction": self.intersection_direction,
        }


@dataclass(frozen=True)
class GroupDef:
    """A subgroup as a partial assignment attribute-index -> value-index."""

    assignment: Tuple[Tuple[int, int], ...]  # sorted by attribute index
    kind: str  # INDEP | INTER | GERRY
    label: str

    def __post_init__(self) -> None:
        if self.kind not in GROUP_KINDS:
            raise InvalidInputError(f"Unknown group kind '{self.kind}'")
        if not self.assignment:
            raise InvalidInputError("A group must fix at least one attribute")

    @property
    def fixed_attributes(self) -> Tuple[int, ...]:
        return tuple(a for a, _ in self.assignment)

    def matches(self, protected: np.ndarray) -> np.ndarray:
        mask = np.ones(protected.shape[0], dtype=bool)
        for attribute, value in self.assignment:
            mask &= protected[:, attribute] == value
        return mask


@dataclass(frozen=True, eq=False)
class GroupSet:
    """Group definitions with their membership masks over one dataset."""

    defs: Tuple[GroupDef, ...]
    masks: np.ndarray  # G x n booleans
    positive_counts: Tuple[int, ...]

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(int(s) for s in self.masks.sum(axis=1))

    @property
    def labels(self) -> List[str]:
        return [g.label for g in self.defs]

    @property
    def kind(self) -> Optional[str]:
        kinds = {g.kind for g in self.defs}
        return kinds.pop() if len(kinds) == 1 else None

    def __len__(self) -> int:
        return len(self.defs)

    def report(self) -> List[Dict[str, Any]]:
        return [
            {"label": g.label, "size": size, "positives": pos}
            for g, size, pos in zip(self.defs, self.sizes, self.positive_counts)
        ]


@dataclass(frozen=True)
class ProbeConfig:
    """Optimiser settings for logistic-regression probes."""

    learning_rate: float = PROBE_LEARNING_RATE
    epochs: int = PROBE_EPOCHS
    l2: float = PROBE_L2
    seed: int = 0
    batch_size: Optional[int] = PROBE_BATCH_SIZE  # None = full batch

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("Probe learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigError("Probe epochs must be at least 1")
        if self.l2 < 0:
            raise ConfigError("Probe l2 must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("Probe batch_size must be positive or null")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]], seed: int = 0) -> "ProbeConfig":
        data = data or {}
        batch = data.get("batch_size", PROBE_BATCH_SIZE)
        return cls(
            learning_rate=float(data.get("learning_rate", PROBE_LEARNING_RATE)),
            epochs=int(data.get("epochs", PROBE_EPOCHS)),
            l2=float(data.get("l2", PROBE_L2)),
            seed=int(data.get("seed", seed)),
            batch_size=None if batch is None else int(batch),
        )

    def with_seed(self, seed: int) -> "ProbeConfig":
        return ProbeConfig(self.learning_rate, self.epochs, self.l2, seed, self.batch_size)


@dataclass(frozen=True, eq=False)
class LinearProbe:
    """Logistic-regression classifier; one row for binary targets, one-vs-rest otherwise."""

    weights: np.ndarray  # C x d
    intercepts: np.ndarray  # C
    target: str
    classes: Tuple[int, ...]
    loss_history: Tuple[float, ...] = ()

    @property
    def d(self) -> int:
        return int(self.weights.shape[1])

    @property
    def is_binary(self) -> bool:
        return len(self.classes) == 2

    def to_dict(self) -> Dict[str, Any]:
        return {
            "target": self.target,
            "classes": list(self.classes),
            "weights": self.weights.tolist(),
            "intercepts": self.intercepts.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LinearProbe":
        return cls(
            weights=np.asarray(data["weights"], dtype=float),
            intercepts=np.asarray(data["intercepts"], dtype=float),
            target=str(data.get("target", "")),
            classes=tuple(int(c) for c in data.get("classes", (0, 1))),
        )


@dataclass(frozen=True)
class InlpConfig:
    """Settings of one extended INLP run."""

    group_kind: str  # INDEP | INTER | GERRY
    variant: str  # naive | principal
    max_iterations: int
    probe_config: ProbeConfig = field(default_factory=ProbeConfig)
    audit_every: int = 1
    directions_per_iteration: int = 1
    early_stop: bool = True
    leakage_margin: float = LEAKAGE_MARGIN
    jobs: int = 1
    main_probe_config: ProbeConfig = field(default_factory=ProbeConfig)

    def __post_init__(self) -> None:
        if self.group_kind not in GROUP_KINDS:
            raise ConfigError(f"Unknown group kind '{self.group_kind}'")
        if self.variant not in INLP_VARIANTS:
            raise ConfigError(f"Unknown INLP variant '{self.variant}'")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if self.audit_every < 1 or self.directions_per_iteration < 1 or self.jobs < 1:
            raise ConfigError("audit_every, directions_per_iteration and jobs must be >= 1")


@dataclass(frozen=True)
class AuditRecord:
    """Per-iteration INLP audit entry."""

    iteration: int
    rank: int
    probe_acc: Dict[str, float]
    majority: Dict[str, float]
    dev_f1: Optional[float]
    directions_removed: int
    skipped: Tuple[str, ...] = ()

    @property
    def mean_probe_acc(self) -> Optional[float]:
        if not self.probe_acc:
            return None
        return float(np.mean(list(self.probe_acc.values())))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iter": self.iteration,
            "rank": self.rank,
            "probe_acc": self.probe_acc,
            "majority": self.majority,
            "dev_f1": self.dev_f1,
            "directions_removed": self.directions_removed,
            "skipped": list(self.skipped),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AuditRecord":
        return cls(
            iteration=int(data["iter"]),
            rank=int(data["rank"]),
            probe_acc={str(k): float(v) for k, v in data.get("probe_acc", {}).items()},
            majority={str(k): float(v) for k, v in data.get("majority", {}).items()},
            dev_f1=None if data.get("dev_f1") is None else float(data["dev_f1"]),
            directions_removed=int(data.get("directions_removed", 0)),
            skipped=tuple(data.get("skipped", ())),
        )


@dataclass
class ProjectionState:
    """Accumulated debiasing projection and its audit trail."""

    projector: "Projector"
    direction_sum: np.ndarray  # sum of v v^T over removed directions
    directions: List[np.ndarray] = field(default_factory=list)
    iteration: int = 0
    audit_log: List[AuditRecord] = field(default_factory=list)
    status: str = "running"

    @property
    def d(self) -> int:
        return int(self.direction_sum.shape[0])

    @property
    def rank(self) -> int:
        return self.projector.rank


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    """Per-group TPR-deviation constraints gamma_g |tpr_g - tpr| <= nu."""

    group_set: GroupSet
    nu: float
    gamma_mode: str = "uniform"  # uniform | inverse_positive_rate
    metric: str = "tpr"

    def __post_init__(self) -> None:
        if self.nu < 0:
            raise ConfigError("nu must be non-negative")
        if self.gamma_mode not in ("uniform", "inverse_positive_rate"):
            raise ConfigError(f"Unknown gamma_mode '{self.gamma_mode}'")
        if self.metric != "tpr":
            raise ConfigError("Only TPR constraints are supported")

    def gammas(self) -> np.ndarray:
        """Weights gamma_g from the group set's own (training) counts."""
        if self.gamma_mode == "uniform":
            return np.ones(len(self.group_set))
        sizes = np.asarray(self.group_set.sizes, dtype=float)
        positives = np.asarray(self.group_set.positive_counts, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(positives > 0, sizes / np.maximum(positives, 1.0), 0.0)


@dataclass(frozen=True)
class TrainerConfig:
    """Optimiser knobs of the primal/dual game."""

    learning_rate: float = PRIMAL_LEARNING_RATE
    dual_learning_rate: float = DUAL_LEARNING_RATE
    batch_size: int = TRAIN_BATCH_SIZE
    hidden_dim: int = MLP_HIDDEN_DIM
    lambda_init: float = 0.0
    min_positives: int = MIN_POSITIVES

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.dual_learning_rate < 0 or self.lambda_init < 0:
            raise ConfigError("dual_learning_rate and lambda_init must be non-negative")
        if self.batch_size < 1 or self.hidden_dim < 1:
            raise ConfigError("batch_size and hidden_dim must be at least 1")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "TrainerConfig":
        data = data or {}
        return cls(
            learning_rate=float(data.get("learning_rate", PRIMAL_LEARNING_RATE)),
            dual_learning_rate=float(data.get("dual_learning_rate", DUAL_LEARNING_RATE)),
            batch_size=int(data.get("batch_size", TRAIN_BATCH_SIZE)),
            hidden_dim=int(data.get("hidden_dim", MLP_HIDDEN_DIM)),
            lambda_init=float(data.get("lambda_init", 0.0)),
            min_positives=int(data.get("min_positives", MIN_POSITIVES)),
        )


@dataclass(frozen=True)
class IterateSnapshot:
    """Metrics of one constrained-training iterate.

    Dev violations are None when no dev group reaches the positive-count threshold.
    """

    t: int
    dev_f1: float
    dev_avg_violation: Optional[float]
    dev_max_violation: Optional[float]
    lambda_max: float
    lambda_sum: float
    train_max_violation: Optional[float] = None
    lambda_min: float = 0.0
    dev_skipped_groups: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t": self.t,
            "dev_f1": self.dev_f1,
            "dev_avg_violation": self.dev_avg_violation,
            "dev_max_violation": self.dev_max_violation,
            "lambda_max": self.lambda_max,
            "lambda_sum": self.lambda_sum,
            "train_max_violation": self.train_max_violation,
            "lambda_min": self.lambda_min,
            "dev_skipped_groups": self.dev_skipped_groups,
        }


@dataclass
class ConstrainedTrainState:
    """Parameters, multipliers and iterate history of the Lagrangian game."""

    model: Any  # constrained.TaskModel
    lambdas: np.ndarray  # one non-negative multiplier per one-sided constraint
    constraint_labels: List[str]
    T: int
    iterate_log: List[IterateSnapshot] = field(default_factory=list)
    retained: Dict[int, Dict[str, np.ndarray]] = field(default_factory=dict)


@dataclass(frozen=True)
class GroupViolation:
    label: str
    tpr: float
    violation: float
    positives: int


@dataclass(frozen=True)
class ViolationReport:
    """TPR deviations over an evaluation group set."""

    avg: float
    max: float
    overall_tpr: float
    per_group: Tuple[GroupViolation, ...]
    skipped: Tuple[str, ...]
    included: int  # denominator of the average

    def to_dict(self) -> Dict[str, Any]:
        return {
            "avg": self.avg,
            "max": self.max,
            "overall_tpr": self.overall_tpr,
            "denominator": self.included,
            "per_group": [
                {"label": g.label, "tpr": g.tpr, "violation": g.violation, "positives": g.positives}
                for g in self.per_group
            ],
            "skipped": list(self.skipped),
        }


@dataclass(frozen=True)
class Provenance:
    """Where an evaluation point came from."""

    method: str
    grouping: str
    hparams: Dict[str, Any]
    split: str
    iterate: Optional[int] = None
    rank: Optional[int] = None
    cell: Optional[str] = None

    def key(self) -> Tuple[str, str, str, Optional[int]]:
        """Identity shared by the dev and test evaluations of one model."""
        return (self.method, self.grouping, json.dumps(self.hparams, sort_keys=True), self.iterate)

    @property
    def family(self) -> str:
        if self.method not in METHOD_PREFIX:
            return BIASED_LABEL
        return f"{METHOD_PREFIX[self.method]}-{self.grouping}"


@dataclass(frozen=True)
class EvalPoint:
    """(F1, avg violation, max violation) with provenance."""

    f1: float
    avg_violation: float
    max_violation: float
    provenance: Provenance

    def __post_init__(self) -> None:
        if self.avg_violation < 0 or self.max_violation < self.avg_violation - 1e-12:
            raise InvalidInputError(
                f"Invalid violations: avg={self.avg_violation}, max={self.max_violation}"
            )

    @property
    def fairness(self) -> float:
        return 1.0 - self.avg_violation

    def to_record(self) -> Dict[str, Any]:
        p = self.provenance
        record: Dict[str, Any] = {
            "method": p.method,
            "grouping": p.grouping,
            "hparams": p.hparams,
            "split": p.split,
            "f1": self.f1,
            "avg_violation": self.avg_violation,
            "max_violation": self.max_violation,
        }
        if p.rank is not None:
            record["rank"] = p.rank
        if p.iterate is not None:
            record["iterate"] = p.iterate
        if p.cell is not None:
            record["cell"] = p.cell
        return record

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "EvalPoint":
        return cls(
            f1=float(record["f1"]),
            avg_violation=float(record["avg_violation"]),
            max_violation=float(record["max_violation"]),
            provenance=Provenance(
                method=str(record["method"]),
                grouping=str(record["grouping"]),
                hparams=dict(record.get("hparams", {})),
                split=str(record["split"]),
                iterate=record.get("iterate"),
                rank=record.get("rank"),
                cell=record.get("cell"),
            ),
        )


@dataclass
class CommandResult:
    """Outcome summary printed by every CLI command."""

    command: str
    status: str  # ok | error
    outputs: Dict[str, Any]
    message: str = ""
