"""Error types raised by the debiasing library.

Every error derives from DebiasError so the CLI can turn any library failure into a
machine-readable error record with a non-zero exit code.
"""

from __future__ import annotations

from typing import Optional


class DebiasError(Exception):
    """Base class for all library errors."""

    pass


class InvalidInputError(DebiasError):
    """Input violates a documented precondition (non-finite, wrong shape, not unit, ...)."""

    pass


class DimensionMismatchError(InvalidInputError):
    """Feature dimension does not match the model or projector."""

    def __init__(self, expected: int, actual: int, what: str = "features"):
        self.expected = expected
        self.actual = actual
        self.what = what
        super().__init__(f"Dimension mismatch for {what}: expected {expected}, got {actual}")


class DegenerateBiasError(DebiasError):
    """Bias matrix has no nonzero direction to remove."""

    pass


class DatasetParseError(DebiasError):
    """A dataset file could not be parsed."""

    def __init__(self, reason: str, line_num: Optional[int] = None, path: Optional[str] = None):
        self.reason = reason
        self.line_num = line_num
        self.path = path
        where = f", line {line_num}" if line_num is not None else ""
        source = f" ({path})" if path else ""
        super().__init__(f"{reason}{where}{source}")


class RowCountMismatchError(DatasetParseError):
    """Features and metadata files disagree on the number of rows."""

    def __init__(self, feature_rows: int, metadata_rows: int):
        self.feature_rows = feature_rows
        self.metadata_rows = metadata_rows
        super().__init__(
            f"row count mismatch: {feature_rows} feature rows vs {metadata_rows} metadata rows"
        )


class ValueOutOfRangeError(DatasetParseError):
    """Protected attribute value outside the schema cardinality."""

    pass


class NonBinaryLabelError(DatasetParseError):
    """Task label is not 0 or 1."""

    pass


class MalformedRowError(DatasetParseError):
    """Row cannot be decoded (bad float, bad JSON, missing field, ragged width)."""

    pass


class SplitError(DebiasError):
    """Split fractions are invalid or a split would be empty."""

    pass


class DegenerateTargetError(DebiasError):
    """Probe targets contain a single class."""

    def __init__(self, target: str, value: object):
        self.target = target
        self.value = value
        super().__init__(f"Degenerate target '{target}': every row has class {value!r}")


class ConfigError(DebiasError):
    """Configuration file or value is invalid."""

    pass


class DivergenceError(DebiasError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration: int, loss: float):
        self.iteration = iteration
        self.loss = loss
        super().__init__(f"Training diverged at iteration {iteration} (loss={loss})")


class UnconstrainedFallbackError(DebiasError):
    """Every constraint group was dropped, so the constrained problem is unconstrained."""

    pass


class NoIncludedGroupsError(DebiasError):
    """No group has enough positives to enter the violation average."""

    def __init__(self, min_positives: int, skipped: int):
        self.min_positives = min_positives
        self.skipped = skipped
        super().__init__(
            f"No group has at least {min_positives} positive rows ({skipped} groups skipped)"
        )


class SelectionError(DebiasError):
    """No point satisfies the trade-off threshold."""

    pass


class ReportError(DebiasError):
    """Report inputs are missing or empty."""

    pass
