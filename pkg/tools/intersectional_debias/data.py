"""Dataset ingestion, persistence, splitting and the seeded synthetic-bias generator."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

from .config import (
    FEATURES_FILE,
    LABEL_RATE_CLIP,
    METADATA_FILE,
    SCHEMA_FILE,
    SPLIT_NAMES,
    SPLITS_FILE,
    STRATIFY_MODES,
)
from .errors import (
    DatasetParseError,
    InvalidInputError,
    MalformedRowError,
    NonBinaryLabelError,
    RowCountMismatchError,
    SplitError,
    ValueOutOfRangeError,
)
from .models import AttributeSchema, Combination, Dataset, SyntheticSpec
from .utils_io import (
    dumps_record,
    format_float,
    join_lines,
    read_json,
    read_structured,
    require_file,
    write_json,
    write_text,
)

SchemaLike = Union[AttributeSchema, Path, str]


# ---------------------------------------------------------------------------
# Schema and spec files
# ---------------------------------------------------------------------------


def load_schema(path: Path) -> AttributeSchema:
    return AttributeSchema.from_dict(read_json(Path(path)))


def save_schema(schema: AttributeSchema, path: Path) -> None:
    write_json(Path(path), schema.to_dict())


def load_synthetic_spec(path: Path) -> SyntheticSpec:
    """Load a synthetic spec from JSON or YAML."""
    return SyntheticSpec.from_dict(read_structured(Path(path)))


# ---------------------------------------------------------------------------
# Loading and saving
# ---------------------------------------------------------------------------


def _read_features(path: Path) -> List[List[float]]:
    rows: List[List[float]] = []
    width = None
    with require_file(path).open("r", encoding="utf-8", newline="") as fh:
        for line_num, row in enumerate(csv.reader(fh), start=1):
            if not row:
                raise MalformedRowError("empty feature row", line_num, str(path))
            try:
                values = [float(cell) for cell in row]
            except ValueError as e:
                raise MalformedRowError(f"bad float ({e})", line_num, str(path)) from e
            if not all(np.isfinite(values)):
                raise MalformedRowError("non-finite feature value", line_num, str(path))
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise MalformedRowError(
                    f"expected {width} columns, got {len(values)}", line_num, str(path)
                )
            rows.append(values)
    return rows


def _parse_metadata_row(
    value: Any, line_num: int, path: Path, schema: AttributeSchema
) -> Tuple[str, int, List[int]]:
    if not isinstance(value, dict):
        raise MalformedRowError("expected a JSON object", line_num, str(path))
    if "label" not in value or "attrs" not in value:
        raise MalformedRowError("missing 'label' or 'attrs'", line_num, str(path))
    label = value["label"]
    if isinstance(label, bool) or label not in (0, 1):
        raise NonBinaryLabelError("non-binary label", line_num, str(path))
    attrs = value["attrs"]
    if not isinstance(attrs, dict):
        raise MalformedRowError("'attrs' must be an object", line_num, str(path))
    codes: List[int] = []
    for name, cardinality in schema.attributes:
        if name not in attrs:
            raise MalformedRowError(f"missing attribute '{name}'", line_num, str(path))
        code = attrs[name]
        if isinstance(code, bool) or not isinstance(code, int):
            raise MalformedRowError(f"attribute '{name}' must be an integer", line_num, str(path))
        if not 0 <= code < cardinality:
            raise ValueOutOfRangeError("value out of range", line_num, str(path))
        codes.append(code)
    row_id = str(value.get("id", f"row-{line_num - 1:06d}"))
    return row_id, int(label), codes


def load_dataset(
    features_path: Path, metadata_path: Path, schema: SchemaLike, split: str = "train"
) -> Dataset:
    """Load a dataset from a feature CSV and a metadata JSON Lines file.

    Raises a DatasetParseError subclass naming the offending line on malformed input.
    """
    features_path = Path(features_path)
    metadata_path = Path(metadata_path)
    if not isinstance(schema, AttributeSchema):
        schema = load_schema(Path(schema))

    feature_rows = _read_features(features_path)

    ids: List[str] = []
    labels: List[int] = []
    protected: List[List[int]] = []
    with require_file(metadata_path).open("r", encoding="utf-8") as fh:
        for line_num, line in enumerate(fh, start=1):
            if not line.strip():
                raise MalformedRowError("empty metadata row", line_num, str(metadata_path))
            try:
                value = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedRowError(
                    f"invalid JSON ({e.msg})", line_num, str(metadata_path)
                ) from e
            row_id, label, codes = _parse_metadata_row(value, line_num, metadata_path, schema)
            ids.append(row_id)
            labels.append(label)
            protected.append(codes)

    if len(feature_rows) != len(labels):
        raise RowCountMismatchError(len(feature_rows), len(labels))
    if not feature_rows:
        raise DatasetParseError("dataset is empty", path=str(metadata_path))

    dataset = Dataset(
        features=np.asarray(feature_rows, dtype=float),
        labels=np.asarray(labels, dtype=np.int64),
        protected=np.asarray(protected, dtype=np.int64).reshape(len(labels), schema.k),
        schema=schema,
        split=split,
        ids=tuple(ids),
    )
    logging.info("Loaded dataset %s: n=%d d=%d k=%d", features_path, dataset.n, dataset.d, schema.k)
    return dataset


def save_dataset(dataset: Dataset, out_dir: Path) -> Dict[str, Path]:
    """Write features.csv, metadata.jsonl and schema.json under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "features": out_dir / FEATURES_FILE,
        "metadata": out_dir / METADATA_FILE,
        "schema": out_dir / SCHEMA_FILE,
    }
    write_text(
        paths["features"],
        join_lines([",".join(format_float(x) for x in row) for row in dataset.features]),
    )
    names = dataset.schema.names
    records = [
        dumps_record(
            {
                "id": dataset.ids[i],
                "label": int(dataset.labels[i]),
                "attrs": {name: int(dataset.protected[i, a]) for a, name in enumerate(names)},
            }
        )
        for i in range(dataset.n)
    ]
    write_text(paths["metadata"], join_lines(records))
    save_schema(dataset.schema, paths["schema"])
    return paths


def load_dataset_dir(directory: Path, split: str = "train") -> Dataset:
    directory = Path(directory)
    return load_dataset(
        directory / FEATURES_FILE, directory / METADATA_FILE, directory / SCHEMA_FILE, split
    )


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def _split_sizes(n: int, fractions: Sequence[float]) -> List[int]:
    raw = [n * f for f in fractions]
    sizes = [int(np.floor(r)) for r in raw]
    leftover = n - sum(sizes)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return sizes


def split_indices(
    dataset: Dataset,
    fractions: Sequence[float],
    seed: int,
    stratify: str = "label",
) -> Dict[str, np.ndarray]:
    """Assign every row to train/dev/test, stratified by label (optionally also by group).

    Rows of each stratum are shuffled and spread evenly over [0, 1); the merged order is
    cut into contiguous chunks, so each chunk keeps the parent's stratum proportions.
    """
    fractions = [float(f) for f in fractions]
    if len(fractions) != len(SPLIT_NAMES):
        raise SplitError(f"Expected {len(SPLIT_NAMES)} fractions, got {len(fractions)}")
    if any(f <= 0 for f in fractions):
        raise SplitError(f"Split fractions must be positive: {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"Split fractions must sum to 1, got {sum(fractions):.12g}")
    if stratify not in STRATIFY_MODES:
        raise SplitError(f"Unknown stratify mode '{stratify}'")

    sizes = _split_sizes(dataset.n, fractions)
    for name, size in zip(SPLIT_NAMES, sizes):
        if size == 0:
            raise SplitError(f"Split '{name}' would receive 0 rows (n={dataset.n})")

    if stratify == "label":
        strata = dataset.labels.copy()
    else:
        columns = np.column_stack([dataset.labels, dataset.protected])
        _, strata = np.unique(columns, axis=0, return_inverse=True)
        strata = strata.ravel()

    rng = np.random.default_rng(seed)
    position = np.empty(dataset.n, dtype=float)
    for value in np.unique(strata):
        members = np.flatnonzero(strata == value)
        shuffled = rng.permutation(members)
        position[shuffled] = (np.arange(shuffled.size) + 0.5) / shuffled.size
    order = np.lexsort((strata, position))

    out: Dict[str, np.ndarray] = {}
    start = 0
    for name, size in zip(SPLIT_NAMES, sizes):
        out[name] = np.sort(order[start : start + size])
        start += size
    return out


def split(
    dataset: Dataset,
    fractions: Sequence[float],
    seed: int,
    stratify: str = "label",
) -> Tuple[Dataset, Dataset, Dataset]:
    indices = split_indices(dataset, fractions, seed, stratify)
    train, dev, test = (dataset.take(indices[name], name) for name in SPLIT_NAMES)
    return train, dev, test


def save_splits(indices: Dict[str, np.ndarray], path: Path) -> None:
    write_json(Path(path), {name: [int(i) for i in indices[name]] for name in SPLIT_NAMES})


def load_splits(path: Path, n: int) -> Dict[str, np.ndarray]:
    """Load a split manifest and check it partitions range(n)."""
    data = read_json(Path(path))
    if not isinstance(data, dict) or any(name not in data for name in SPLIT_NAMES):
        raise SplitError(f"Split manifest must contain {list(SPLIT_NAMES)}: {path}")
    out = {name: np.asarray(data[name], dtype=np.int64) for name in SPLIT_NAMES}
    combined = np.concatenate([out[name] for name in SPLIT_NAMES])
    if combined.size != n or not np.array_equal(np.sort(combined), np.arange(n)):
        raise SplitError(f"Split manifest is not a partition of {n} rows: {path}")
    for name in SPLIT_NAMES:
        if out[name].size == 0:
            raise SplitError(f"Split '{name}' is empty in {path}")
    return out


def load_split_datasets(directory: Path) -> Tuple[Dataset, Dataset, Dataset]:
    """Load a dataset directory together with its split manifest."""
    directory = Path(directory)
    full = load_dataset_dir(directory)
    indices = load_splits(directory / SPLITS_FILE, full.n)
    train, dev, test = (full.take(indices[name], name) for name in SPLIT_NAMES)
    return train, dev, test


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------


def _matches(protected: np.ndarray, combo: Combination) -> np.ndarray:
    mask = np.ones(protected.shape[0], dtype=bool)
    for a, value in enumerate(combo):
        if value is not None:
            mask &= protected[:, a] == value
    return mask


def _attribute_codes(values: np.ndarray, cardinality: int) -> np.ndarray:
    """Ordinal code in [-1, 1]; binary attributes map 0 -> -1 and 1 -> +1."""
    return 2.0 * values / (cardinality - 1) - 1.0


def _draw_directions(rng: np.random.Generator, count: int, d: int) -> np.ndarray:
    raw = rng.standard_normal((count, d))
    if count <= d:
        q, r = np.linalg.qr(raw.T)
        # Fix QR's sign ambiguity so the result depends on the draw only.
        signs = np.where(np.diag(r) < 0, -1.0, 1.0)
        return (q * signs).T
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _attribute_embedding(directions: np.ndarray, cardinality: int) -> np.ndarray:
    """Unit vectors per attribute value: +/- one direction when binary, else simplex vertices."""
    if cardinality == 2:
        u = directions[0]
        return np.vstack([-u, u])
    centred = np.eye(cardinality) - 1.0 / cardinality
    scale = np.sqrt((cardinality - 1) / cardinality)
    return (centred @ directions) / scale


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw a dataset whose label and protected signals live on fixed random directions.

    Draw order is fixed: protected codes, directions, label uniforms, noise.
    """
    rng = np.random.default_rng(spec.seed)
    schema = spec.schema
    n, d = spec.n, spec.d

    protected = np.column_stack([rng.integers(0, c, size=n) for c in schema.cardinalities])

    attr_counts = [1 if c == 2 else c for c in schema.cardinalities]
    inter_count = 0
    if spec.intersection_signal:
        shared = spec.intersection_direction == "shared"
        inter_count = 1 if shared else len(spec.intersection_signal)
    directions = _draw_directions(rng, 1 + sum(attr_counts) + inter_count, d)
    mu_label = directions[0]
    cursor = 1
    attr_embeddings = []
    for count, c in zip(attr_counts, schema.cardinalities):
        attr_embeddings.append(_attribute_embedding(directions[cursor : cursor + count], c))
        cursor += count
    inter_directions = directions[cursor : cursor + inter_count]

    rate = np.full(n, spec.base_rate)
    for a, bias in enumerate(spec.label_bias):
        rate += 0.5 * bias * _attribute_codes(protected[:, a], schema.cardinalities[a])
    for combo, shift in spec.intersection_label_bias:
        rate += shift * _matches(protected, combo)
    rate = np.clip(rate, *LABEL_RATE_CLIP)
    labels = (rng.random(n) < rate).astype(np.int64)

    features = spec.label_signal * np.outer(2.0 * labels - 1.0, mu_label)
    for a, signal in enumerate(spec.attribute_signal):
        if signal:
            features += signal * attr_embeddings[a][protected[:, a]]
    for j, (combo, signal) in enumerate(spec.intersection_signal):
        direction = inter_directions[0 if spec.intersection_direction == "shared" else j]
        features += signal * np.outer(_matches(protected, combo), direction)
    features = features + spec.noise_std * rng.standard_normal((n, d))

    if not np.all(np.isfinite(features)):
        raise InvalidInputError("Synthetic generator produced non-finite features")
    logging.info(
        "Generated synthetic dataset: n=%d d=%d k=%d positive_rate=%.3f",
        n,
        d,
        schema.k,
        float(labels.mean()),
    )
    return Dataset(features=features, labels=labels, protected=protected, schema=schema)
