"""Typed in-memory tables: CSV ingestion, missing-value normalization, splitting.

A table is an immutable grid of variant-typed cells. Cells are typed per
column at load time (number / timestamp / text) and the usual missing-value
placeholders are folded into a dedicated Missing variant by
:func:`normalize_missing`. All operations are pure and return new values, so
datasets can be shared freely across workers.
"""

from __future__ import annotations

import csv
import io
import math
import random
import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import BinaryIO, Iterable, Sequence

from .errors import SchemaError, StructuralError

#: Placeholder spellings commonly used for missing data, matched
#: case-insensitively after trimming.
DEFAULT_PLACEHOLDER_TOKENS = ("N/A", "nan", "none", "null", "")

#: Integers at or above this magnitude are read as epoch milliseconds.
#: (100_000_000_000 ms is early 1973; plain measurements rarely get there.)
EPOCH_MS_MIN = 100_000_000_000

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_INT_RE = re.compile(r"[+-]?\d+")


class CellKind(Enum):
    TEXT = "text"
    NUMBER = "number"
    TIMESTAMP = "timestamp"
    MISSING = "missing"


@dataclass(frozen=True, slots=True)
class Cell:
    """One table cell: text, finite number, epoch-ms timestamp, or missing."""

    kind: CellKind
    value: str | float | int | None

    @staticmethod
    def text(value: str) -> "Cell":
        return Cell(CellKind.TEXT, value)

    @staticmethod
    def number(value: float) -> "Cell":
        # Non-finite numbers are never stored; they collapse to Missing.
        if not math.isfinite(value):
            return MISSING
        return Cell(CellKind.NUMBER, float(value))

    @staticmethod
    def timestamp(epoch_ms: int) -> "Cell":
        if epoch_ms < 0:
            raise ValueError(f"timestamp must be >= 0, got {epoch_ms}")
        return Cell(CellKind.TIMESTAMP, int(epoch_ms))

    @property
    def is_missing(self) -> bool:
        return self.kind is CellKind.MISSING


MISSING = Cell(CellKind.MISSING, None)


def cell_text(cell: Cell) -> str:
    """Canonical string form of a cell (used for CSV output and grouping keys)."""
    if cell.kind is CellKind.TEXT:
        return str(cell.value)
    if cell.kind is CellKind.NUMBER:
        v = float(cell.value)
        return str(int(v)) if v.is_integer() else repr(v)
    if cell.kind is CellKind.TIMESTAMP:
        return str(int(cell.value))
    return ""


@dataclass(frozen=True, slots=True)
class CellRef:
    """Reference to one cell: 0-based row index plus column name."""

    row: int
    column: str


@dataclass(frozen=True)
class PlaceholderSet:
    """Missing-value spellings, matched case-insensitively after trimming."""

    tokens: frozenset[str]

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("placeholder set must not be empty")
        object.__setattr__(
            self, "tokens", frozenset(t.strip().lower() for t in self.tokens)
        )

    @classmethod
    def default(cls) -> "PlaceholderSet":
        return cls(frozenset(DEFAULT_PLACEHOLDER_TOKENS))

    def matches(self, text: str) -> bool:
        return text.strip().lower() in self.tokens


@dataclass(frozen=True)
class Dataset:
    """Immutable table: unique non-empty headers and equal-length cell rows."""

    headers: tuple[str, ...]
    rows: tuple[tuple[Cell, ...], ...]

    def __post_init__(self):
        seen: set[str] = set()
        for name in self.headers:
            if not name:
                raise SchemaError("empty header name")
            if name in seen:
                raise SchemaError(f"duplicate header {name!r}")
            seen.add(name)
        width = len(self.headers)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise StructuralError(
                    f"row {i + 1} has {len(row)} cells, expected {width}", row=i + 1
                )

    @classmethod
    def from_lists(
        cls, headers: Sequence[str], rows: Iterable[Sequence[Cell]]
    ) -> "Dataset":
        return cls(tuple(headers), tuple(tuple(r) for r in rows))

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.headers)

    def column_index(self, name: str) -> int:
        """Resolve a column by name, falling back to a case-insensitive match.

        The fallback exists because rule texts and canonical schemas mix
        spellings like ``Sensor`` and ``sensor``; an ambiguous fold (two
        headers differing only in case) is an error.
        """
        try:
            return self.headers.index(name)
        except ValueError:
            pass
        folded = name.lower()
        hits = [i for i, h in enumerate(self.headers) if h.lower() == folded]
        if not hits:
            raise SchemaError(f"unknown column {name!r}")
        if len(hits) > 1:
            raise SchemaError(f"column name {name!r} is ambiguous")
        return hits[0]

    def has_column(self, name: str) -> bool:
        try:
            self.column_index(name)
            return True
        except SchemaError:
            return False

    def column(self, name: str) -> tuple[Cell, ...]:
        idx = self.column_index(name)
        return tuple(row[idx] for row in self.rows)

    def cell(self, row: int, column: str) -> Cell:
        return self.rows[row][self.column_index(column)]


def _parse_number_text(text: str) -> float | None:
    try:
        return float(text)
    except ValueError:
        return None


def _parse_timestamp_text(text: str) -> int | None:
    s = text.strip()
    if not s:
        return None
    if _INT_RE.fullmatch(s):
        v = int(s)
        return v if v >= EPOCH_MS_MIN else None
    iso = s[:-1] + "+00:00" if s.endswith(("Z", "z")) else s
    try:
        dt = datetime.fromisoformat(iso)
    except ValueError:
        return None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    ms = (dt - _EPOCH) // timedelta(milliseconds=1)
    return ms if ms >= 0 else None


def _infer_column_kind(values: Sequence[str]) -> CellKind:
    # Majority vote over non-empty raw values; timestamps are checked first
    # because epoch integers also parse as floats. Text is the fallback.
    non_empty = [v for v in values if v.strip() != ""]
    if not non_empty:
        return CellKind.TEXT
    half = len(non_empty) / 2
    ts_hits = sum(1 for v in non_empty if _parse_timestamp_text(v) is not None)
    if ts_hits > half:
        return CellKind.TIMESTAMP
    num_hits = sum(1 for v in non_empty if _parse_number_text(v) is not None)
    if num_hits > half:
        return CellKind.NUMBER
    return CellKind.TEXT


def _type_cell(raw: str, kind: CellKind) -> Cell:
    if raw == "":
        return Cell.text("")
    if kind is CellKind.TIMESTAMP:
        ms = _parse_timestamp_text(raw)
        if ms is not None:
            return Cell.timestamp(ms)
    elif kind is CellKind.NUMBER:
        num = _parse_number_text(raw)
        if num is not None:
            return Cell.number(num)  # NaN/inf collapse to Missing here
    return Cell.text(raw)


def load_csv(source: BinaryIO | bytes, has_header: bool = True) -> Dataset:
    """Read an RFC-4180-style UTF-8 CSV into a typed dataset.

    Cell types are inferred per column: mostly-numeric columns become
    numbers, columns of ISO-8601 dates or epoch-millisecond integers become
    timestamps, everything else stays text. Raw empty fields stay as empty
    text until :func:`normalize_missing` runs.
    """
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    text_stream = io.TextIOWrapper(source, encoding="utf-8", newline="")
    reader = csv.reader(text_stream)
    records = list(reader)
    if not records:
        raise StructuralError("empty CSV input")

    if has_header:
        headers = records[0]
        data = records[1:]
    else:
        headers = [f"col_{i + 1}" for i in range(len(records[0]))]
        data = records
    if len(set(headers)) != len(headers):
        dupes = sorted({h for h in headers if headers.count(h) > 1})
        raise SchemaError(f"duplicate header {dupes[0]!r}")

    width = len(headers)
    for i, rec in enumerate(data):
        if len(rec) != width:
            raise StructuralError(
                f"row {i + 1} has {len(rec)} fields, expected {width}", row=i + 1
            )

    kinds = [
        _infer_column_kind([rec[c] for rec in data]) for c in range(width)
    ]
    rows = tuple(
        tuple(_type_cell(rec[c], kinds[c]) for c in range(width)) for rec in data
    )
    return Dataset(tuple(headers), rows)


def dataset_to_csv(d: Dataset) -> str:
    """Render a dataset back to CSV text (missing cells as empty fields)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(d.headers)
    for row in d.rows:
        writer.writerow([cell_text(c) for c in row])
    return buf.getvalue()


def normalize_missing(d: Dataset, placeholders: PlaceholderSet | None = None) -> Dataset:
    """Fold placeholder text cells ("N/A", "null", empty, ...) into Missing.

    Idempotent; never touches number or timestamp cells.
    """
    p = placeholders or PlaceholderSet.default()
    rows = tuple(
        tuple(
            MISSING
            if cell.kind is CellKind.TEXT and p.matches(str(cell.value))
            else cell
            for cell in row
        )
        for row in d.rows
    )
    return Dataset(d.headers, rows)


def split_train_validation(
    d: Dataset, fraction: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Deterministically partition rows into (train, validation).

    The first output gets round(fraction * n_rows) rows (half-up); together
    the outputs are an exact partition of the input rows.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if d.n_rows < 2:
        raise ValueError("need at least 2 rows to split")
    k = math.floor(fraction * d.n_rows + 0.5)
    indices = list(range(d.n_rows))
    random.Random(seed).shuffle(indices)
    train_idx = sorted(indices[:k])
    val_idx = sorted(indices[k:])
    train = Dataset(d.headers, tuple(d.rows[i] for i in train_idx))
    val = Dataset(d.headers, tuple(d.rows[i] for i in val_idx))
    return train, val
