"""Subgroup enumeration for independent, intersectional and gerrymandering settings."""

from __future__ import annotations

import itertools
from typing import List, Sequence

import numpy as np

from .config import GROUP_KINDS
from .errors import InvalidInputError
from .models import AttributeSchema, Dataset, GroupDef, GroupSet


def group_label(schema: AttributeSchema, assignment: Sequence[tuple]) -> str:
    return "&".join(f"{schema.names[a]}={v}" for a, v in assignment)


def _defs_fixing(schema: AttributeSchema, attrs: Sequence[int], kind: str) -> List[GroupDef]:
    cards = schema.cardinalities
    defs = []
    for values in itertools.product(*(range(cards[a]) for a in attrs)):
        assignment = tuple(zip(attrs, values))
        defs.append(GroupDef(assignment, kind, group_label(schema, assignment)))
    return defs


def enumerate_groups(schema: AttributeSchema, kind: str) -> List[GroupDef]:
    """Group definitions ordered by (number of fixed attributes, attributes, values).

    INDEP fixes one attribute, INTER fixes all of them and GERRY every nonempty subset
    (the all-wildcard population is excluded).
    """
    if kind not in GROUP_KINDS:
        raise InvalidInputError(f"Unknown group kind '{kind}'")
    k = schema.k
    if kind == "INDEP":
        sizes = [1]
    elif kind == "INTER":
        sizes = [k]
    else:
        sizes = list(range(1, k + 1))
    defs: List[GroupDef] = []
    for size in sizes:
        for attrs in itertools.combinations(range(k), size):
            defs.extend(_defs_fixing(schema, attrs, kind))
    return defs


def build_group_set(defs: Sequence[GroupDef], dataset: Dataset) -> GroupSet:
    """Membership masks and positive counts of each def over `dataset`."""
    cards = dataset.schema.cardinalities
    for g in defs:
        for attribute, value in g.assignment:
            if not 0 <= attribute < len(cards):
                raise InvalidInputError(
                    f"Group '{g.label}' references unknown attribute {attribute}"
                )
            if not 0 <= value < cards[attribute]:
                raise InvalidInputError(f"Group '{g.label}' references unknown value {value}")
    if defs:
        masks = np.vstack([g.matches(dataset.protected) for g in defs])
    else:
        masks = np.zeros((0, dataset.n), dtype=bool)
    positives = tuple(int(c) for c in (masks & (dataset.labels == 1)).sum(axis=1))
    return GroupSet(defs=tuple(defs), masks=masks, positive_counts=positives)


def group_set_for(dataset: Dataset, kind: str) -> GroupSet:
    return build_group_set(enumerate_groups(dataset.schema, kind), dataset)


def gerry_group_set(dataset: Dataset) -> GroupSet:
    """The evaluation group set; every method is scored on GERRY groups."""
    return group_set_for(dataset, "GERRY")
