"""Utility (CIO, ROC) and disclosure-risk (TCAP) metrics for synthetic tables."""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .errors import MetricError, MetricWarning, SchemaError
from .schema import Table, TableSchema, sample_rows

N_EVAL = 500
CI_LEVEL = 0.95
IMPROVEMENT_LAMBDA = 2.0
SCORE_TIE = 1e-12


@dataclass(frozen=True)
class Regression:
    target: str
    predictors: tuple[str, ...]

    @property
    def label(self) -> str:
        return f"{self.target} ~ {' + '.join(self.predictors) or '1'}"


@dataclass(frozen=True)
class MetricSpec:
    cio_regressions: tuple[Regression, ...]
    roc_columns: tuple[str, ...]
    tcap_keys: tuple[str, ...]
    tcap_target: str

    def validate(self, schema: TableSchema) -> None:
        names = set(schema.names)
        for reg in self.cio_regressions:
            for col in (reg.target, *reg.predictors):
                if col not in names:
                    raise SchemaError(f"regression {reg.label}: unknown column {col!r}")
            if reg.target in reg.predictors:
                raise SchemaError(f"regression {reg.label}: target is also a predictor")
        for col in (*self.roc_columns, *self.tcap_keys, self.tcap_target):
            if col not in names:
                raise SchemaError(f"metric spec names unknown column {col!r}")
            if not schema[col].is_categorical:
                raise SchemaError(f"column {col!r} must be categorical for ROC/TCAP")
        if self.tcap_target in self.tcap_keys:
            raise SchemaError("tcap_target must not be one of tcap_keys")
        if not self.tcap_keys:
            raise SchemaError("tcap_keys must name at least one column")

    def to_dict(self) -> dict:
        return {
            "cio_regressions": [{"target": r.target, "predictors": list(r.predictors)} for r in self.cio_regressions],
            "roc_columns": list(self.roc_columns),
            "tcap_keys": list(self.tcap_keys),
            "tcap_target": self.tcap_target,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricSpec":
        regs = tuple(Regression(r["target"], tuple(r["predictors"])) for r in d.get("cio_regressions", ()))
        return cls(regs, tuple(d.get("roc_columns", ())), tuple(d["tcap_keys"]), d["tcap_target"])


def _check_schemas(original: Table, synthetic: Table) -> None:
    if original.schema != synthetic.schema:
        raise SchemaError("original and synthetic tables must share one schema")


# ---------------------------------------------------------------- regression fits


class FitFailure(Exception):
    pass


def design_matrix(table: Table, predictors: Sequence[str]) -> tuple[np.ndarray, list[str]]:
    """Intercept, continuous predictors as-is, categoricals as dummies against their first category."""
    cols = [np.ones(len(table))]
    names = ["(intercept)"]
    for name in predictors:
        spec = table.schema[name]
        if spec.is_categorical:
            codes = table.codes(name)
            for c in range(1, len(spec.categories)):
                cols.append((codes == c).astype(np.float64))
                names.append(f"{name}[{spec.categories[c]}]")
        else:
            cols.append(table.column(name))
            names.append(name)
    return np.column_stack(cols), names


def _check_rank(X: np.ndarray) -> None:
    if X.shape[0] <= X.shape[1] or np.linalg.matrix_rank(X) < X.shape[1]:
        raise FitFailure("singular design matrix")


def fit_ols(X: np.ndarray, y: np.ndarray, level: float = CI_LEVEL):
    """Coefficients and t-based confidence intervals."""
    _check_rank(X)
    n, p = X.shape
    if n - p < 1:
        raise FitFailure("no residual degrees of freedom")
    xtx_inv = np.linalg.inv(X.T @ X)
    beta = xtx_inv @ (X.T @ y)
    resid = y - X @ beta
    s2 = resid @ resid / (n - p)
    se = np.sqrt(np.maximum(np.diag(xtx_inv) * s2, 0.0))
    q = stats.t.ppf(0.5 + level / 2, n - p)
    return beta, beta - q * se, beta + q * se


def _mnl_loglik(X, y, theta, p, k):
    eta = np.column_stack([np.zeros(len(X)), X @ theta.reshape(k, p).T])
    log_norm = logsumexp(eta, axis=1)
    ll = float(np.sum(eta[np.arange(len(X)), y] - log_norm))
    return ll, np.exp(eta - log_norm[:, None])


def _fisher_information(X, P, p, k):
    info = np.empty((p * k, p * k))
    for a in range(k):
        for b in range(k):
            w = P[:, a] * ((a == b) - P[:, b])
            info[a * p:(a + 1) * p, b * p:(b + 1) * p] = X.T @ (X * w[:, None])
    return info


def fit_logit(X: np.ndarray, y: np.ndarray, n_classes: int, level: float = CI_LEVEL, max_iter: int = 100):
    """Multinomial logit (binary when ``n_classes == 2``) against reference class 0.

    Newton-Raphson with step halving; Wald intervals from the inverse Fisher
    information. Coefficients are ordered class-major: all predictors for
    class 1, then class 2, ...
    """
    _check_rank(X)
    y = np.asarray(y, dtype=np.int64)
    if np.any(np.bincount(y, minlength=n_classes) == 0):
        raise FitFailure("target category absent from the data")
    n, p = X.shape
    k = n_classes - 1
    Y = np.zeros((n, k))
    rows = np.where(y > 0)[0]
    Y[rows, y[rows] - 1] = 1.0

    theta = np.zeros(p * k)
    ll, probs = _mnl_loglik(X, y, theta, p, k)
    converged = False
    for _ in range(max_iter):
        grad = ((Y - probs[:, 1:]).T @ X).ravel()
        try:
            step = np.linalg.solve(_fisher_information(X, probs[:, 1:], p, k), grad)
        except np.linalg.LinAlgError:
            raise FitFailure("singular information matrix") from None
        t = 1.0
        while True:
            cand = theta + t * step
            cand_ll, cand_probs = _mnl_loglik(X, y, cand, p, k)
            if cand_ll >= ll - 1e-12 or t < 1e-8:
                break
            t *= 0.5
        theta, ll, probs = cand, cand_ll, cand_probs
        if np.max(np.abs(t * step)) < 1e-10 * max(1.0, np.max(np.abs(theta))):
            converged = True
            break
    if not converged or not np.all(np.isfinite(theta)):
        raise FitFailure("logistic regression did not converge (separation?)")
    try:
        cov = np.linalg.inv(_fisher_information(X, probs[:, 1:], p, k))
    except np.linalg.LinAlgError:
        raise FitFailure("singular information matrix") from None
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    q = stats.norm.ppf(0.5 + level / 2)
    return theta, theta - q * se, theta + q * se


def regression_intervals(table: Table, reg: Regression, level: float = CI_LEVEL):
    """(coefficient names, lower bounds, upper bounds) for one regression."""
    X, names = design_matrix(table, reg.predictors)
    target = table.schema[reg.target]
    if target.is_categorical:
        k = len(target.categories)
        _, lo, hi = fit_logit(X, table.codes(reg.target), k, level)
        names = [f"{target.categories[c]}:{nm}" for c in range(1, k) for nm in names]
    else:
        _, lo, hi = fit_ols(X, table.column(reg.target), level)
    return names, lo, hi


# ---------------------------------------------------------------- CIO


def interval_overlap(lo_o: float, hi_o: float, lo_s: float, hi_s: float) -> float:
    """Average of the shared interval length relative to each interval's width."""
    inner = min(hi_o, hi_s) - max(lo_o, lo_s)
    return 0.5 * (inner / (hi_o - lo_o) + inner / (hi_s - lo_s))


class Reference:
    """Original-table quantities reused across many synthetic candidates."""

    def __init__(self, original: Table, spec: MetricSpec):
        self.table = original
        self.spec = spec
        self._intervals = None
        self._roc_counts = None

    @property
    def intervals(self):
        if self._intervals is None:
            out = []
            for reg in self.spec.cio_regressions:
                try:
                    out.append(regression_intervals(self.table, reg))
                except FitFailure as exc:
                    warnings.warn(f"CIO: skipping {reg.label}: original fit failed ({exc})", MetricWarning)
                    out.append(None)
            self._intervals = out
        return self._intervals

    @property
    def roc_counts(self):
        if self._roc_counts is None:
            self._roc_counts = _roc_counts(self.table, self.spec.roc_columns)
        return self._roc_counts


def _reference(original, spec) -> Reference:
    return original if isinstance(original, Reference) else Reference(original, spec)


def cio_details(original: Table | Reference, synthetic: Table, spec: MetricSpec) -> dict:
    ref = _reference(original, spec)
    _check_schemas(ref.table, synthetic)
    per_coef = []
    skipped = []
    for reg, orig in zip(spec.cio_regressions, ref.intervals):
        if orig is None:
            skipped.append(reg.label)
            continue
        names, lo_o, hi_o = orig
        try:
            _, lo_s, hi_s = regression_intervals(synthetic, reg)
        except FitFailure as exc:
            # an unfittable synthetic table earns no overlap credit
            warnings.warn(f"CIO: {reg.label}: synthetic fit failed ({exc}); scored 0", MetricWarning)
            per_coef += [{"regression": reg.label, "coefficient": nm, "overlap": 0.0} for nm in names]
            continue
        for nm, a, b, c, d in zip(names, lo_o, hi_o, lo_s, hi_s):
            if not (b > a and d > c):
                warnings.warn(f"CIO: zero-width interval for {nm} in {reg.label}; skipped", MetricWarning)
                continue
            per_coef.append({"regression": reg.label, "coefficient": nm, "overlap": interval_overlap(a, b, c, d)})
    if not per_coef:
        raise MetricError("CIO undefined: every regression or coefficient was skipped")
    return {
        "cio": float(np.mean([c["overlap"] for c in per_coef])),
        "coefficients": per_coef,
        "skipped_regressions": skipped,
    }


def cio(original: Table | Reference, synthetic: Table, spec: MetricSpec) -> float:
    return cio_details(original, synthetic, spec)["cio"]


# ---------------------------------------------------------------- ROC


def _roc_counts(table: Table, columns: Sequence[str]) -> dict[str, np.ndarray]:
    out = {}
    for col in columns:
        k = len(table.schema[col].categories)
        out[col] = np.bincount(table.codes(col), minlength=k)
    for a, b in itertools.combinations(columns, 2):
        ka, kb = len(table.schema[a].categories), len(table.schema[b].categories)
        flat = table.codes(a) * kb + table.codes(b)
        out[f"{a} x {b}"] = np.bincount(flat, minlength=ka * kb)
    return out


def cell_ratio(p_orig: np.ndarray, p_syn: np.ndarray) -> np.ndarray:
    """min/max per cell; cells empty in both tables agree perfectly."""
    hi = np.maximum(p_orig, p_syn)
    lo = np.minimum(p_orig, p_syn)
    return np.where(hi > 0, lo / np.where(hi > 0, hi, 1.0), 1.0)


def roc_details(original: Table | Reference, synthetic: Table, spec: MetricSpec) -> dict:
    """Cell ratios compare proportions, which equal raw counts when table sizes match."""
    ref = _reference(original, spec)
    _check_schemas(ref.table, synthetic)
    syn_counts = _roc_counts(synthetic, spec.roc_columns)
    n_o, n_s = len(ref.table), len(synthetic)
    per_table = {}
    for name, c_o in ref.roc_counts.items():
        per_table[name] = float(np.mean(cell_ratio(c_o / n_o, syn_counts[name] / n_s)))
    value = float(np.mean(list(per_table.values()))) if per_table else math.nan
    return {"roc": value, "tables": per_table}


def roc(original: Table | Reference, synthetic: Table, spec: MetricSpec) -> float:
    return roc_details(original, synthetic, spec)["roc"]


# ---------------------------------------------------------------- TCAP


@dataclass
class TcapResult:
    raw: float
    baseline: float
    normalized: float
    matched: int
    flag: str = ""


def _key_codes(table: Table, keys: Sequence[str]) -> np.ndarray:
    code = np.zeros(len(table), dtype=np.int64)
    for k in keys:
        code = code * len(table.schema[k].categories) + table.codes(k)
    return code


def tcap(original: Table, synthetic: Table, keys: Sequence[str], target: str) -> TcapResult:
    """Targeted attribution risk of original records from the synthetic table.

    For every original record whose key combination occurs in the synthetic
    table, the intruder's success probability is the share of matching
    synthetic records carrying the record's true target value. ``raw`` averages
    this over matched records; ``baseline`` averages the synthetic marginal
    probability of the same target values. ``normalized`` rescales so that 0 is
    the marginal guess and 1 perfect attribution.
    """
    _check_schemas(original, synthetic)
    n_t = len(synthetic.schema[target].categories)
    key_o, key_s = _key_codes(original, keys), _key_codes(synthetic, keys)
    t_o, t_s = original.codes(target), synthetic.codes(target)

    uniq, inv = np.unique(key_s, return_inverse=True)
    joint = np.zeros((len(uniq), n_t))
    np.add.at(joint, (inv, t_s), 1.0)
    key_tot = joint.sum(axis=1)
    marginal = np.bincount(t_s, minlength=n_t) / len(synthetic)

    pos = np.searchsorted(uniq, key_o)
    pos_c = np.minimum(pos, len(uniq) - 1)
    hit = uniq[pos_c] == key_o
    if not hit.any():
        return TcapResult(math.nan, math.nan, 0.0, 0, "no key matches; risk set to 0")
    rows = pos_c[hit]
    raw = float(np.mean(joint[rows, t_o[hit]] / key_tot[rows]))
    baseline = float(np.mean(marginal[t_o[hit]]))
    if baseline >= 1.0:
        return TcapResult(raw, baseline, 0.0, int(hit.sum()), "degenerate target marginal; risk set to 0")
    return TcapResult(raw, baseline, (raw - baseline) / (1.0 - baseline), int(hit.sum()))


# ---------------------------------------------------------------- aggregates


def utility(original: Table | Reference, synthetic: Table, spec: MetricSpec) -> tuple[float, float, float]:
    """(utility, cio, roc) with utility the plain mean of the two components."""
    c = cio(original, synthetic, spec)
    r = roc(original, synthetic, spec)
    return 0.5 * (c + r), c, r


def improvement_score(current: tuple[float, float], best: tuple[float, float], lam: float = IMPROVEMENT_LAMBDA) -> float:
    """Weighted utility gain minus the increase in (zero-clipped) risk; inputs are (f_u, f_r)."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    (u_i, r_i), (u_b, r_b) = current, best
    gain = lam * (u_i - u_b)
    cost = max(r_i, 0.0) - max(r_b, 0.0)
    # a difference at rounding level is a tie, never an improvement
    if abs(gain - cost) <= SCORE_TIE * max(abs(gain), abs(cost)):
        return 0.0
    return gain - cost


Sampler = Callable[[int, int], Table]


def _split_seed(seed: int) -> tuple[int, int]:
    a, b = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    return int(a), int(b)


def fast_objectives(
    original: Table,
    sampler: Sampler,
    n_eval: int = N_EVAL,
    seed: int = 0,
    spec: MetricSpec | None = None,
    reference: Reference | None = None,
) -> tuple[float, float]:
    """(utility, normalized TCAP) from ``n_eval`` synthetic rows against an ``n_eval``-row subsample.

    ``sampler(n, seed)`` must return a Table of n synthetic rows. Pass a
    ``reference`` built on ``evaluation_subsample(original, n_eval, seed)`` to
    reuse the original-side regressions across candidates.
    """
    if n_eval < 100:
        raise ValueError("n_eval must be >= 100")
    if spec is None:
        raise ValueError("a MetricSpec is required")
    _, syn_seed = _split_seed(seed)
    if reference is None:
        reference = Reference(evaluation_subsample(original, n_eval, seed), spec)
    synthetic = sampler(n_eval, syn_seed)
    u, _, _ = utility(reference, synthetic, spec)
    risk = tcap(reference.table, synthetic, spec.tcap_keys, spec.tcap_target)
    return u, risk.normalized


def evaluation_subsample(original: Table, n_eval: int, seed: int) -> Table:
    sub_seed, _ = _split_seed(seed)
    return original if n_eval == len(original) else sample_rows(original, n_eval, sub_seed)


# ---------------------------------------------------------------- reports


TCAP_NORMALIZATION = (
    "risk = (tcap_raw - tcap_baseline) / (1 - tcap_baseline); tcap_baseline is the mean probability "
    "of each matched original record's target value under the synthetic target marginal"
)


@dataclass
class EvaluationReport:
    cio: float
    roc: float
    utility: float
    tcap_raw: float | None
    tcap_baseline: float | None
    risk: float
    n_eval: int
    cio_coefficients: list = field(default_factory=list)
    cio_skipped: list = field(default_factory=list)
    roc_tables: dict = field(default_factory=dict)
    tcap_matched: int = 0
    tcap_flag: str = ""
    normalization: str = TCAP_NORMALIZATION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvaluationReport":
        return cls(**json.loads(text))


def evaluate(original: Table, synthetic: Table, spec: MetricSpec) -> EvaluationReport:
    """Full-size metrics with every intermediate component."""
    spec.validate(original.schema)
    ref = Reference(original, spec)
    c = cio_details(ref, synthetic, spec)
    r = roc_details(ref, synthetic, spec)
    t = tcap(original, synthetic, spec.tcap_keys, spec.tcap_target)
    nan_to_none = lambda v: None if v is None or math.isnan(v) else v  # noqa: E731
    return EvaluationReport(
        cio=c["cio"],
        roc=r["roc"],
        utility=0.5 * (c["cio"] + r["roc"]),
        tcap_raw=nan_to_none(t.raw),
        tcap_baseline=nan_to_none(t.baseline),
        risk=t.normalized,
        n_eval=len(synthetic),
        cio_coefficients=c["coefficients"],
        cio_skipped=c["skipped_regressions"],
        roc_tables=r["tables"],
        tcap_matched=t.matched,
        tcap_flag=t.flag,
    )
