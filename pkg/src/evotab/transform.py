"""Mode-specific normalization, one-hot encoding and training-by-sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SchemaError, ShapeError
from .schema import Table, TableSchema
from .vgm import fit_vgm

MAX_MODES = 10
WEIGHT_PRUNE = 0.005
# Scalar slot = (v - mean) / (STD_SCALE * std), clamped to [-1, 1].
STD_SCALE = 4.0


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass(frozen=True)
class ContinuousEncoder:
    column: str
    mode_means: tuple[float, ...]
    mode_stds: tuple[float, ...]
    mode_weights: tuple[float, ...]

    def __post_init__(self):
        k = len(self.mode_means)
        if k < 1 or len(self.mode_stds) != k or len(self.mode_weights) != k:
            raise ValueError(f"encoder for {self.column!r}: inconsistent mode arrays")
        if min(self.mode_stds) <= 0:
            raise ValueError(f"encoder for {self.column!r}: mode stds must be positive")
        if abs(sum(self.mode_weights) - 1.0) > 1e-9 or min(self.mode_weights) < 0:
            raise ValueError(f"encoder for {self.column!r}: weights must be a distribution")

    @property
    def mode_count(self) -> int:
        return len(self.mode_means)

    def mode_probabilities(self, values: np.ndarray) -> np.ndarray:
        """Posterior probability of each mode given the value, shape (n, k)."""
        v = np.asarray(values, dtype=np.float64)[:, None]
        mu, sd, w = (np.asarray(a) for a in (self.mode_means, self.mode_stds, self.mode_weights))
        log_p = np.log(np.maximum(w, 1e-300)) - np.log(sd) - 0.5 * ((v - mu) / sd) ** 2
        log_p -= log_p.max(axis=1, keepdims=True)
        p = np.exp(log_p)
        return p / p.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "column": self.column,
            "mode_means": list(self.mode_means),
            "mode_stds": list(self.mode_stds),
            "mode_weights": list(self.mode_weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ContinuousEncoder":
        return cls(d["column"], tuple(d["mode_means"]), tuple(d["mode_stds"]), tuple(d["mode_weights"]))


def fit_continuous_encoder(
    values, max_modes: int = MAX_MODES, column: str = "", seed: int = 0, prune: float = WEIGHT_PRUNE
) -> ContinuousEncoder:
    values = np.asarray(values, dtype=np.float64)
    if max_modes < 1:
        raise ValueError("max_modes must be >= 1")
    if len(np.unique(values)) < 2:
        raise SchemaError(
            f"column {column!r} is constant; declare it categorical in the schema instead"
        )
    fit = fit_vgm(values, max_modes=max_modes, seed=seed)
    keep = fit.weights >= prune
    w = fit.weights[keep]
    return ContinuousEncoder(
        column,
        tuple(float(m) for m in fit.means[keep]),
        tuple(float(s) for s in fit.stds[keep]),
        tuple(float(x) for x in w / w.sum()),
    )


@dataclass(frozen=True)
class Span:
    """Slice of the encoded row produced by one output activation."""

    start: int
    width: int
    activation: str  # "tanh" or "softmax"


@dataclass(frozen=True)
class ColumnBlock:
    index: int
    name: str
    categorical: bool
    start: int
    width: int
    cond_offset: int = -1  # position of this column's categories in the conditional vector


class DataTransformer:
    """Maps Table rows to the encoded space and back.

    Continuous columns become ``[scalar, mode one-hot]`` and categorical
    columns a one-hot block, in schema order.
    """

    def __init__(self, schema: TableSchema, encoders: dict[str, ContinuousEncoder]):
        self.schema = schema
        self.encoders = dict(encoders)
        blocks, spans = [], []
        pos, cond = 0, 0
        for j, col in enumerate(schema.columns):
            if col.is_categorical:
                width = len(col.categories)
                blocks.append(ColumnBlock(j, col.name, True, pos, width, cond))
                spans.append(Span(pos, width, "softmax"))
                cond += width
            else:
                if col.name not in self.encoders:
                    raise SchemaError(f"no encoder fitted for continuous column {col.name!r}")
                k = self.encoders[col.name].mode_count
                width = 1 + k
                blocks.append(ColumnBlock(j, col.name, False, pos, width))
                spans.append(Span(pos, 1, "tanh"))
                spans.append(Span(pos + 1, k, "softmax"))
            pos += width
        self.blocks: list[ColumnBlock] = blocks
        self.spans: list[Span] = spans
        self.output_dim = pos
        self.cond_dim = cond

    @classmethod
    def fit(cls, table: Table, max_modes: int = MAX_MODES, seed: int = 0) -> "DataTransformer":
        encoders = {}
        for j in table.schema.continuous_indices:
            name = table.schema.columns[j].name
            encoders[name] = fit_continuous_encoder(table.values[:, j], max_modes, name, seed)
        return cls(table.schema, encoders)

    @property
    def categorical_blocks(self) -> list[ColumnBlock]:
        return [b for b in self.blocks if b.categorical]

    def block(self, column_index: int) -> ColumnBlock:
        return self.blocks[column_index]

    def encode(self, table: Table, seed=None) -> np.ndarray:
        """Hard-encode all rows; continuous modes are sampled from their posterior."""
        if table.schema != self.schema:
            raise SchemaError("table schema differs from the fitted schema")
        rng = _rng(seed)
        n = len(table)
        out = np.zeros((n, self.output_dim))
        rows = np.arange(n)
        for b in self.blocks:
            col = table.values[:, b.index]
            if b.categorical:
                out[rows, b.start + col.astype(np.int64)] = 1.0
                continue
            enc = self.encoders[b.name]
            probs = enc.mode_probabilities(col)
            u = rng.random(n)[:, None]
            modes = np.minimum((probs.cumsum(axis=1) < u).sum(axis=1), enc.mode_count - 1)
            mu = np.asarray(enc.mode_means)[modes]
            sd = np.asarray(enc.mode_stds)[modes]
            out[:, b.start] = np.clip((col - mu) / (STD_SCALE * sd), -1.0, 1.0)
            out[rows, b.start + 1 + modes] = 1.0
        return out

    def encode_row(self, row, seed=None) -> np.ndarray:
        return self.encode(Table(self.schema, np.asarray(row, dtype=np.float64)[None, :]), seed)[0]

    def decode(self, encoded: np.ndarray) -> Table:
        """Invert the encoding; soft blocks are decoded by argmax."""
        encoded = np.asarray(encoded, dtype=np.float64)
        if encoded.ndim != 2 or encoded.shape[1] != self.output_dim:
            raise ShapeError(f"expected encoded width {self.output_dim}, got shape {encoded.shape}")
        values = np.empty((encoded.shape[0], len(self.schema.columns)))
        for b in self.blocks:
            block = encoded[:, b.start:b.start + b.width]
            if b.categorical:
                values[:, b.index] = np.argmax(block, axis=1)
                continue
            enc = self.encoders[b.name]
            modes = np.argmax(block[:, 1:], axis=1)
            scalar = np.clip(block[:, 0], -1.0, 1.0)
            values[:, b.index] = (
                scalar * STD_SCALE * np.asarray(enc.mode_stds)[modes] + np.asarray(enc.mode_means)[modes]
            )
        return Table(self.schema, values)

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_json(),
            "encoders": [e.to_dict() for e in self.encoders.values()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DataTransformer":
        encoders = {e["column"]: ContinuousEncoder.from_dict(e) for e in d["encoders"]}
        return cls(TableSchema.from_json(d["schema"]), encoders)


def cond_offsets(schema: TableSchema) -> dict[int, int]:
    """Start of each categorical column's block inside the conditional vector."""
    out, pos = {}, 0
    for j in schema.categorical_indices:
        out[j] = pos
        pos += len(schema.columns[j].categories)
    return out


class CondSampler:
    """Training-by-sampling over the categorical columns of one table.

    ``chosen`` pairs are (schema column index, category index).
    """

    def __init__(self, table: Table):
        schema = table.schema
        freqs, rows = [], []
        for j in schema.categorical_indices:
            width = len(schema.columns[j].categories)
            codes = table.values[:, j].astype(np.int64)
            counts = np.bincount(codes, minlength=width).astype(np.float64)
            freqs.append(counts)
            order = np.argsort(codes, kind="stable")
            bounds = np.concatenate([[0], np.cumsum(counts).astype(np.int64)])
            rows.append([order[bounds[c]:bounds[c + 1]] for c in range(width)])
        self._setup(schema, freqs, rows)

    @classmethod
    def from_frequencies(cls, schema: TableSchema, frequencies) -> "CondSampler":
        """Sampler without row pools; enough for synthesis, not for real-row matching."""
        obj = cls.__new__(cls)
        freqs = [np.asarray(f, dtype=np.float64) for f in frequencies]
        cats = [len(schema.columns[j].categories) for j in schema.categorical_indices]
        if [len(f) for f in freqs] != cats:
            raise ShapeError(f"frequency vectors of lengths {[len(f) for f in freqs]} do not match categories {cats}")
        obj._setup(schema, freqs, None)
        return obj

    def _setup(self, schema: TableSchema, freqs, rows) -> None:
        self.columns = schema.categorical_indices
        self.offsets = cond_offsets(schema)
        self.cond_dim = sum(len(schema.columns[j].categories) for j in self.columns)
        self._freq = freqs
        self._rows = rows
        self._log_p = [np.log1p(f) / np.log1p(f).sum() for f in freqs]
        self._raw_p = [f / f.sum() for f in freqs]

    def _sample(self, n: int, rng: np.random.Generator, probs) -> tuple[np.ndarray, np.ndarray]:
        which = rng.integers(0, len(self.columns), size=n)
        cats = np.empty(n, dtype=np.int64)
        u = rng.random(n)
        for i, p in enumerate(probs):
            mask = which == i
            cats[mask] = np.minimum(np.searchsorted(np.cumsum(p), u[mask], side="right"), len(p) - 1)
        chosen = np.stack([np.array(self.columns)[which], cats], axis=1)
        return self.cond_vectors(chosen), chosen

    def sample_condvec(self, n: int, seed=None) -> tuple[np.ndarray, np.ndarray]:
        """Column uniform, category with probability proportional to log(1 + frequency)."""
        return self._sample(n, _rng(seed), self._log_p)

    def sample_original_condvec(self, n: int, seed=None) -> tuple[np.ndarray, np.ndarray]:
        """Column uniform, category proportional to its raw frequency (used at synthesis time)."""
        return self._sample(n, _rng(seed), self._raw_p)

    def cond_vectors(self, chosen: np.ndarray) -> np.ndarray:
        chosen = np.asarray(chosen, dtype=np.int64).reshape(-1, 2)
        cond = np.zeros((len(chosen), self.cond_dim))
        offsets = np.array([self.offsets[int(c)] for c in chosen[:, 0]], dtype=np.int64)
        cond[np.arange(len(chosen)), offsets + chosen[:, 1]] = 1.0
        return cond

    def sample_real_matching(self, chosen: np.ndarray, seed=None) -> tuple[np.ndarray, np.ndarray]:
        """Row indices drawn uniformly among rows satisfying each (column, category) pair."""
        if self._rows is None:
            raise RuntimeError("this sampler was built from frequencies only and holds no rows")
        rng = _rng(seed)
        chosen = np.asarray(chosen, dtype=np.int64).reshape(-1, 2)
        pos = {j: i for i, j in enumerate(self.columns)}
        idx = np.empty(len(chosen), dtype=np.int64)
        u = rng.random(len(chosen))
        for r, (col, cat) in enumerate(chosen):
            pool = self._rows[pos[int(col)]][int(cat)]
            if len(pool) == 0:
                raise RuntimeError(f"no rows match column {col} category {cat}")
            idx[r] = pool[min(int(u[r] * len(pool)), len(pool) - 1)]
        return idx, self.cond_vectors(chosen)

    def category_frequencies(self) -> list[np.ndarray]:
        return [f.copy() for f in self._freq]


def sample_condvec(table: Table, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    return CondSampler(table).sample_condvec(n, seed)


def sample_real_matching(table: Table, chosen, seed) -> tuple[Table, np.ndarray]:
    """Return (matching rows as a Table, real-side conditional vectors)."""
    idx, cond = CondSampler(table).sample_real_matching(chosen, seed)
    return table.take(idx), cond
