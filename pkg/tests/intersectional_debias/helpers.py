"""Shared builders for the intersectional_debias tests."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

# Add the tools directory to the path
repo_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(repo_root / "tools"))

from intersectional_debias.data import generate_synthetic, split
from intersectional_debias.models import AttributeSchema, Dataset, SyntheticSpec


def binary_schema(k: int) -> AttributeSchema:
    return AttributeSchema(tuple((f"a{i}", 2) for i in range(k)))


def schema_dict(cardinalities: Sequence[int]) -> Dict[str, Any]:
    return {
        "attributes": [{"name": f"a{i}", "cardinality": c} for i, c in enumerate(cardinalities)]
    }


def synthetic_spec(
    n: int = 600,
    d: int = 8,
    k: int = 2,
    seed: int = 0,
    label_signal: float = 1.5,
    attribute_signal: float = 1.5,
    label_bias: float = 0.0,
    **extra: Any,
) -> SyntheticSpec:
    data: Dict[str, Any] = {
        "n": n,
        "d": d,
        "seed": seed,
        "schema": schema_dict([2] * k),
        "label_signal": label_signal,
        "attribute_signal": [attribute_signal] * k,
        "label_bias": [label_bias] * k,
        "noise_std": 1.0,
    }
    data.update(extra)
    return SyntheticSpec.from_dict(data)


def gerrymandered_spec(
    n: int = 3000, d: int = 16, seed: int = 0, strength: float = 1.5, label_shift: float = 0.3
) -> SyntheticSpec:
    """Bias injected only at the 2x2 intersections; every attribute marginal is balanced."""
    signs = {"0,0": 1.0, "1,1": 1.0, "0,1": -1.0, "1,0": -1.0}
    return SyntheticSpec.from_dict(
        {
            "n": n,
            "d": d,
            "seed": seed,
            "schema": schema_dict([2, 2]),
            "label_signal": 1.0,
            "attribute_signal": [0.0, 0.0],
            "label_bias": [0.0, 0.0],
            "noise_std": 1.0,
            "intersection_direction": "shared",
            "intersection_signal": {key: strength * s for key, s in signs.items()},
            "intersection_label_bias": {key: label_shift * s for key, s in signs.items()},
        }
    )


def splits_of(
    spec: SyntheticSpec, seed: Optional[int] = None
) -> Tuple[Dataset, Dataset, Dataset]:
    dataset = generate_synthetic(spec)
    return split(dataset, (0.7, 0.15, 0.15), spec.seed if seed is None else seed)


def tiny_dataset() -> Dataset:
    """Eight rows covering every combination of two binary attributes twice."""
    protected = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 2)
    labels = np.array([1, 1, 1, 1, 0, 1, 0, 0])
    features = np.arange(16, dtype=float).reshape(8, 2)
    return Dataset(features=features, labels=labels, protected=protected, schema=binary_schema(2))
