"""Tabular schema, CSV ingestion and reproducible row sampling."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, SchemaError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"

# Share of non-missing cells that must parse as numbers for a column to be continuous.
NUMERIC_THRESHOLD = 0.99
MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none", "?"})


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL and not self.categories:
            raise SchemaError(f"column {self.name!r}: categorical column needs categories")
        if self.kind == CONTINUOUS and self.categories:
            raise SchemaError(f"column {self.name!r}: continuous column cannot list categories")
        if len(set(self.categories)) != len(self.categories):
            raise SchemaError(f"column {self.name!r}: duplicate categories")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.is_categorical:
            out["categories"] = list(self.categories)
        return out


@dataclass(frozen=True)
class TableSchema:
    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in {names}")
        if not any(c.is_categorical for c in self.columns):
            raise SchemaError("schema needs at least one categorical column")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise SchemaError(f"unknown column {name!r}")

    def __getitem__(self, name: str) -> ColumnSpec:
        return self.columns[self.index(name)]

    @property
    def categorical_indices(self) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.is_categorical]

    @property
    def continuous_indices(self) -> list[int]:
        return [i for i, c in enumerate(self.columns) if not c.is_categorical]

    def to_json(self) -> list[dict]:
        return [c.to_dict() for c in self.columns]

    @classmethod
    def from_json(cls, records: Sequence[dict]) -> "TableSchema":
        cols = []
        for rec in records:
            try:
                cols.append(ColumnSpec(rec["name"], rec["kind"], tuple(rec.get("categories", ()))))
            except KeyError as exc:
                raise ParseError(f"schema record {rec!r} lacks field {exc}") from None
        return cls(tuple(cols))


@dataclass(frozen=True, eq=False)
class Table:
    """Immutable N x C matrix; categorical cells hold category indices."""

    schema: TableSchema
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.ndim != 2 or vals.shape[1] != len(self.schema.columns):
            raise SchemaError(
                f"row arity {vals.shape[1:] or '?'} does not match {len(self.schema.columns)} columns"
            )
        if not np.all(np.isfinite(vals)):
            raise SchemaError("table contains non-finite values")
        for j in self.schema.categorical_indices:
            col = vals[:, j]
            n_cat = len(self.schema.columns[j].categories)
            if np.any(col != np.round(col)) or np.any(col < 0) or np.any(col >= n_cat):
                raise SchemaError(f"column {self.schema.columns[j].name!r}: category index out of range")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.index(name)]

    def codes(self, name: str) -> np.ndarray:
        """Integer category indices of a categorical column."""
        spec = self.schema[name]
        if not spec.is_categorical:
            raise SchemaError(f"column {name!r} is not categorical")
        return self.column(name).astype(np.int64)

    def take(self, rows: np.ndarray) -> "Table":
        return Table(self.schema, self.values[np.asarray(rows, dtype=np.int64)])

    def to_records(self) -> list[list]:
        out = []
        for row in self.values:
            rec = []
            for spec, v in zip(self.schema.columns, row):
                rec.append(spec.categories[int(v)] if spec.is_categorical else float(v))
            out.append(rec)
        return out

    def equals(self, other: "Table") -> bool:
        return self.schema == other.schema and np.array_equal(self.values, other.values)


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def _to_float(cell: str) -> float | None:
    try:
        v = float(cell)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def infer_schema(header: Sequence[str], rows: Sequence[Sequence[str]]) -> TableSchema:
    cols = []
    for j, name in enumerate(header):
        cells = [r[j] for r in rows]
        numeric = sum(_to_float(c) is not None for c in cells)
        if cells and numeric / len(cells) >= NUMERIC_THRESHOLD:
            cols.append(ColumnSpec(name, CONTINUOUS))
        else:
            cols.append(ColumnSpec(name, CATEGORICAL, tuple(sorted(set(cells)))))
    return TableSchema(tuple(cols))


def read_schema(path: str | Path) -> list[dict]:
    try:
        records = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid schema JSON ({exc})") from None
    if not isinstance(records, list):
        raise ParseError(f"{path}: schema must be a JSON list of column records")
    return records


def _complete_schema(declared: TableSchema | Sequence[dict], header, rows) -> TableSchema:
    """Accept a TableSchema or raw JSON records (categories may be omitted and inferred)."""
    if isinstance(declared, TableSchema):
        schema = declared
    else:
        cols = []
        for rec in declared:
            if rec.get("kind") == CATEGORICAL and not rec.get("categories"):
                j = list(header).index(rec["name"]) if rec["name"] in header else None
                if j is None:
                    raise SchemaError(f"declared column {rec['name']!r} not in CSV header")
                rec = dict(rec, categories=sorted({r[j] for r in rows}))
            cols.append(rec)
        schema = TableSchema.from_json(cols)
    if list(header) != schema.names:
        raise SchemaError(f"CSV header {list(header)} does not match schema columns {schema.names}")
    return schema


def parse_csv(text: str, schema: TableSchema | Sequence[dict] | None = None, source: str = "<csv>") -> Table:
    if not text.strip():
        raise ParseError(f"{source}: empty file")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except csv.Error as exc:
        raise ParseError(f"{source}, line 1: {exc}") from None
    header = [h.strip() for h in header]
    if not header or any(h == "" for h in header):
        raise ParseError(f"{source}, line 1: header row has empty column names")
    rows: list[list[str]] = []
    missing: list[str] = []
    try:
        for row in reader:
            line = reader.line_num
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{source}, line {line}: expected {len(header)} fields, found {len(row)}"
                )
            row = [c.strip() for c in row]
            for name, c in zip(header, row):
                if _is_missing(c):
                    missing.append(f"line {line} column {name!r}")
            rows.append(row)
    except csv.Error as exc:
        raise ParseError(f"{source}, line {reader.line_num}: {exc}") from None
    if not rows:
        raise ParseError(f"{source}: no data rows after header")
    if missing:
        shown = ", ".join(missing[:20]) + (" ..." if len(missing) > 20 else "")
        raise SchemaError(f"{source}: missing values are not supported ({len(missing)} cells): {shown}")

    schema = infer_schema(header, rows) if schema is None else _complete_schema(schema, header, rows)

    values = np.empty((len(rows), len(header)), dtype=np.float64)
    for j, spec in enumerate(schema.columns):
        if spec.is_categorical:
            lookup = {c: i for i, c in enumerate(spec.categories)}
            for i, row in enumerate(rows):
                try:
                    values[i, j] = lookup[row[j]]
                except KeyError:
                    raise SchemaError(
                        f"{source}, line {i + 2}: value {row[j]!r} not in categories of column {spec.name!r}"
                    ) from None
        else:
            bad = []
            for i, row in enumerate(rows):
                v = _to_float(row[j])
                if v is None:
                    bad.append(f"line {i + 2}: {row[j]!r}")
                    continue
                values[i, j] = v
            if bad:
                raise SchemaError(
                    f"{source}: continuous column {spec.name!r} has non-numeric cells "
                    f"({', '.join(bad[:10])}); declare it categorical or clean the data"
                )
    return Table(schema, values)


def load_csv(path: str | Path, schema: TableSchema | Sequence[dict] | None = None) -> Table:
    """Load a comma-delimited UTF-8 CSV with a header row.

    Without a schema, columns where at least 99% of cells parse as numbers are
    continuous; everything else is categorical with lexicographically sorted
    categories.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_csv(text, schema, source=str(path))


def format_table(table: Table) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.schema.names)
    for rec in table.to_records():
        writer.writerow([v if isinstance(v, str) else repr(v) for v in rec])
    return buf.getvalue()


def write_csv(table: Table, path: str | Path) -> None:
    Path(path).write_text(format_table(table), encoding="utf-8")


def write_schema(schema: TableSchema, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema.to_json(), indent=2), encoding="utf-8")


def sample_rows(table: Table, n: int, seed: int) -> Table:
    """Uniform row sample: without replacement when n <= N, with replacement otherwise."""
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    N = len(table)
    idx = rng.permutation(N)[:n] if n <= N else rng.integers(0, N, size=n)
    return table.take(idx)


def table_from_columns(schema: TableSchema, columns: dict[str, Iterable]) -> Table:
    """Build a Table from per-column sequences of raw values (labels for categoricals)."""
    data = []
    for spec in schema.columns:
        col = list(columns[spec.name])
        if spec.is_categorical:
            lookup = {c: i for i, c in enumerate(spec.categories)}
            try:
                data.append([lookup[str(v)] for v in col])
            except KeyError as exc:
                raise SchemaError(f"value {exc} not in categories of column {spec.name!r}") from None
        else:
            data.append([float(v) for v in col])
    return Table(schema, np.array(data, dtype=np.float64).T.reshape(-1, len(schema.columns)))
