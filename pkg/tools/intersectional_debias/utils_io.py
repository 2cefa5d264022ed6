from __future__ import annotations

import csv
import datetime as dt
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import yaml

from .errors import ConfigError, DatasetParseError, InvalidInputError, MalformedRowError


def iso_today() -> str:
    """Return today's date in ISO-8601 format (YYYY-MM-DD)."""
    return dt.date.today().isoformat()


def require_file(path: Path) -> Path:
    """Return `path` if it names an existing file, else raise InvalidInputError."""
    if not path.is_file():
        raise InvalidInputError(f"File not found: {path}")
    return path


def read_text(path: Path) -> str:
    """Read a UTF-8 text file into a string."""
    return require_file(path).read_text(encoding="utf-8")


def write_text(path: Path, text: str) -> None:
    """Write a UTF-8 string to disk, creating parent directories."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def join_lines(lines: List[str]) -> str:
    """Join lines into a single string with a trailing newline."""
    return "\n".join(lines) + "\n" if lines else ""


def dumps_record(record: Dict[str, Any]) -> str:
    """Canonical one-line JSON used for every JSON Lines file."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_json(path: Path, data: Any) -> None:
    write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path: Path) -> Any:
    try:
        return json.loads(read_text(path))
    except json.JSONDecodeError as e:
        raise DatasetParseError(f"invalid JSON: {e.msg}", e.lineno, str(path)) from e


def read_structured(path: Path) -> Any:
    """Load a YAML or JSON document (JSON is valid YAML)."""
    if not path.exists():
        raise ConfigError(f"File not found: {path}")
    try:
        return yaml.safe_load(read_text(path))
    except yaml.YAMLError as e:
        raise ConfigError(f"Failed to parse {path}: {e}") from e


def write_jsonl(path: Path, records: Iterable[Dict[str, Any]]) -> None:
    write_text(path, join_lines([dumps_record(r) for r in records]))


def append_jsonl(path: Path, record: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(dumps_record(record) + "\n")


def read_jsonl(path: Path) -> List[Dict[str, Any]]:
    """Read JSON Lines, skipping blank lines; errors name the 1-based line."""
    records: List[Dict[str, Any]] = []
    for line_num, line in enumerate(read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            value = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedRowError(f"invalid JSON: {e.msg}", line_num, str(path)) from e
        if not isinstance(value, dict):
            raise MalformedRowError("expected a JSON object", line_num, str(path))
        records.append(value)
    return records


def format_float(x: float) -> str:
    """Shortest string that round-trips to the same double."""
    return repr(float(x))


def write_matrix_csv(path: Path, matrix: np.ndarray) -> None:
    arr = np.atleast_2d(np.asarray(matrix, dtype=float))
    if arr.size == 0:
        write_text(path, "")
        return
    write_text(path, join_lines([",".join(format_float(x) for x in row) for row in arr]))


def read_matrix_csv(path: Path, cols: Optional[int] = None) -> np.ndarray:
    """Read a headerless CSV of floats; every row must have the same width."""
    rows: List[List[float]] = []
    with require_file(path).open("r", encoding="utf-8", newline="") as fh:
        for line_num, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                values = [float(cell) for cell in row]
            except ValueError as e:
                raise MalformedRowError(f"bad float: {e}", line_num, str(path)) from e
            if cols is None:
                cols = len(values)
            if len(values) != cols:
                raise MalformedRowError(
                    f"expected {cols} columns, got {len(values)}", line_num, str(path)
                )
            rows.append(values)
    if not rows:
        return np.zeros((0, cols or 0))
    return np.asarray(rows, dtype=float)
