"""Tabular schema, CSV ingestion, [0,1] scaling and one-hot encoding.

Encoded layout: every non-label column in schema order (one slot per
continuous column, one slot per category for categoricals), followed by the
label one-hot block when a label column is declared.
"""

from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidData, InvalidParameter

MAX_CATEGORIES = 10_000


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # "continuous" | "categorical"
    lo: float | None = None
    hi: float | None = None
    categories: tuple = ()

    def __post_init__(self):
        if self.kind == "continuous":
            if self.lo is None or self.hi is None or not self.lo < self.hi:
                raise InvalidParameter(f"column {self.name!r}: need lo < hi, got [{self.lo}, {self.hi}]")
        elif self.kind == "categorical":
            cats = tuple(str(c) for c in self.categories)
            if not cats or len(set(cats)) != len(cats):
                raise InvalidParameter(f"column {self.name!r}: categories must be nonempty and unique")
            object.__setattr__(self, "categories", cats)
        else:
            raise InvalidParameter(f"column {self.name!r}: unknown kind {self.kind!r}")

    @property
    def width(self) -> int:
        return 1 if self.kind == "continuous" else len(self.categories)

    def to_dict(self) -> dict:
        if self.kind == "continuous":
            return {"name": self.name, "kind": self.kind, "range": [float(self.lo), float(self.hi)]}
        return {"name": self.name, "kind": self.kind, "categories": list(self.categories)}

    @classmethod
    def from_dict(cls, d: dict) -> "Column":
        if d["kind"] == "continuous":
            lo, hi = d["range"]
            return cls(d["name"], "continuous", float(lo), float(hi))
        return cls(d["name"], d["kind"], categories=tuple(d["categories"]))


@dataclass(frozen=True)
class Schema:
    columns: tuple
    label_column: str | None = None
    inferred_ranges: bool = field(default=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise InvalidParameter("duplicate column names in schema")
        if self.label_column is not None:
            if self.label_column not in names:
                raise InvalidParameter(f"label column {self.label_column!r} not in schema")
            if self.column(self.label_column).kind != "categorical":
                raise InvalidParameter("label column must be categorical")

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def names(self) -> list:
        return [c.name for c in self.columns]

    @property
    def feature_columns(self) -> list:
        return [c for c in self.columns if c.name != self.label_column]

    @property
    def label_count(self) -> int:
        return 0 if self.label_column is None else len(self.column(self.label_column).categories)

    @property
    def feature_width(self) -> int:
        return sum(c.width for c in self.feature_columns)

    @property
    def d_aug(self) -> int:
        return self.feature_width + self.label_count

    def blocks(self) -> list:
        """``(column, start, stop)`` for every column in encoded order (label last)."""
        out, pos = [], 0
        ordered = self.feature_columns
        if self.label_column is not None:
            ordered = ordered + [self.column(self.label_column)]
        for c in ordered:
            out.append((c, pos, pos + c.width))
            pos += c.width
        return out

    def to_dict(self) -> dict:
        return {"columns": [c.to_dict() for c in self.columns], "label_column": self.label_column}

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        try:
            return cls(tuple(Column.from_dict(c) for c in d["columns"]), d.get("label_column"))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidData(f"malformed schema: {exc}") from exc

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class EncodedDataset:
    features: np.ndarray
    schema_hash: str

    @property
    def n(self) -> int:
        return self.features.shape[0]


def read_csv(path) -> tuple[list, list]:
    """Return ``(header, rows)`` with every cell as a string."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidData(f"{path}: empty file") from None
        rows = []
        for i, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise InvalidData(f"{path}: ragged row {i} ({len(row)} fields, header has {len(header)})")
            rows.append(row)
    if not rows:
        raise InvalidData(f"{path}: no data rows")
    return header, rows


def _parse_float(s: str):
    try:
        v = float(s)
    except ValueError:
        return None
    return v if np.isfinite(v) else None


def infer_schema(header: list, rows: list, label_column: str | None = None) -> Schema:
    columns = []
    for j, name in enumerate(header):
        values = [r[j] for r in rows]
        for i, v in enumerate(values):
            if v.strip() == "":
                raise InvalidData(f"missing value in column {name!r}, row {i}")
        parsed = [_parse_float(v) for v in values]
        if name != label_column and all(p is not None for p in parsed):
            lo, hi = min(parsed), max(parsed)
            if lo == hi:
                warnings.warn(f"column {name!r} is constant; widening its range to [{lo}, {lo + 1}]", stacklevel=2)
                hi = lo + 1.0
            columns.append(Column(name, "continuous", lo, hi))
        else:
            cats = sorted(set(values))
            if len(cats) > MAX_CATEGORIES:
                raise InvalidData(f"column {name!r} has {len(cats)} categories (limit {MAX_CATEGORIES})")
            columns.append(Column(name, "categorical", categories=tuple(cats)))
    return Schema(tuple(columns), label_column, inferred_ranges=True)


def infer_or_load_schema(csv_path=None, schema_path=None, label_column: str | None = None) -> Schema:
    """Load an explicit schema file if given, otherwise infer one from the CSV.

    Inferred ranges come from the private data itself; a warning is issued
    because a deployment must treat scaling ranges as public knowledge.
    """
    if schema_path is not None:
        return Schema.load(schema_path)
    if csv_path is None:
        raise InvalidParameter("need a CSV path or a schema path")
    header, rows = read_csv(csv_path)
    schema = infer_schema(header, rows, label_column)
    warnings.warn("schema ranges/categories were inferred from the private data; "
                  "supply a public schema file for an end-to-end DP guarantee", stacklevel=2)
    return schema


def rows_in_schema_order(header: list, rows: list, schema: Schema) -> list:
    missing = [n for n in schema.names if n not in header]
    if missing:
        raise InvalidData(f"CSV lacks schema columns {missing}")
    idx = [header.index(n) for n in schema.names]
    return [[r[j] for j in idx] for r in rows]


def encode(rows, schema: Schema) -> EncodedDataset:
    """Encode raw rows (values in schema column order) into [0,1]^d_aug.

    Continuous values are affinely scaled by the schema range and clipped;
    clipped values are counted in a single warning.
    """
    rows = list(rows)
    out = np.zeros((len(rows), schema.d_aug))
    position = {c.name: j for j, c in enumerate(schema.columns)}
    clipped = 0
    for c, start, _ in schema.blocks():
        j = position[c.name]
        if c.kind == "continuous":
            try:
                col = np.array([float(r[j]) for r in rows], dtype=np.float64)
            except ValueError as exc:
                raise InvalidData(f"column {c.name!r}: {exc}") from exc
            if not np.all(np.isfinite(col)):
                raise InvalidData(f"column {c.name!r} has missing or nonfinite values")
            scaled = (col - c.lo) / (c.hi - c.lo)
            clipped += int(np.count_nonzero((scaled < 0) | (scaled > 1)))
            out[:, start] = np.clip(scaled, 0.0, 1.0)
        else:
            lookup = {cat: i for i, cat in enumerate(c.categories)}
            for i, r in enumerate(rows):
                try:
                    out[i, start + lookup[str(r[j])]] = 1.0
                except KeyError:
                    raise InvalidData(f"row {i}: unknown category {r[j]!r} in column {c.name!r}") from None
    if clipped:
        warnings.warn(f"{clipped} continuous values fell outside their schema range and were clipped", stacklevel=2)
    return EncodedDataset(out, schema.hash)


def decode(row, schema: Schema) -> list:
    """Map one encoded (or generated) row back to a record in schema column order.

    Categorical blocks decode to their argmax, ties to the lowest index.
    """
    row = np.asarray(row, dtype=np.float64)
    if row.shape != (schema.d_aug,):
        raise InvalidParameter(f"row has shape {row.shape}, schema expects ({schema.d_aug},)")
    values = {}
    for c, start, stop in schema.blocks():
        if c.kind == "continuous":
            values[c.name] = c.lo + float(row[start]) * (c.hi - c.lo)
        else:
            values[c.name] = c.categories[int(np.argmax(row[start:stop]))]
    return [values[n] for n in schema.names]


def decode_batch(matrix, schema: Schema) -> list:
    return [decode(r, schema) for r in np.asarray(matrix)]


def column_values(encoded: np.ndarray, schema: Schema) -> np.ndarray:
    """n x n_columns matrix: scaled value for continuous, category index otherwise.

    Columns follow ``schema.columns`` order.
    """
    encoded = np.asarray(encoded, dtype=np.float64)
    slots = {c.name: (start, stop) for c, start, stop in schema.blocks()}
    out = np.empty((encoded.shape[0], len(schema.columns)))
    for j, c in enumerate(schema.columns):
        start, stop = slots[c.name]
        if c.kind == "continuous":
            out[:, j] = encoded[:, start]
        else:
            out[:, j] = np.argmax(encoded[:, start:stop], axis=1)
    return out


def _format_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_synthetic(records, schema: Schema, path) -> None:
    """Write records as RFC-4180 CSV with LF line endings."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
            writer.writerow(schema.names)
            for r in records:
                writer.writerow([_format_cell(v) for v in r])
    except OSError as exc:
        raise OSError(f"cannot write synthetic data to {path}: {exc}") from exc


def load_encoded(csv_path, schema: Schema) -> EncodedDataset:
    header, rows = read_csv(csv_path)
    return encode(rows_in_schema_order(header, rows, schema), schema)
