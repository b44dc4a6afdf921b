"""Rank tests, chi-square tails, Bonferroni, and the size/correctness regression."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

SIGNIFICANCE = 0.01
SMALL_GROUP = 5


@dataclass
class TestResult:
    test: str
    statistic: float
    df: int
    p_value: float
    tie_corrected: bool = True
    corrected_p: float | None = None
    threshold: float = SIGNIFICANCE
    significant: bool | None = None
    groups: list[str] | None = None

    __test__ = False  # keep pytest from collecting this class

    def finalize(self, threshold: float = SIGNIFICANCE) -> "TestResult":
        self.threshold = threshold
        p = self.p_value if self.corrected_p is None else self.corrected_p
        self.significant = bool(p < threshold)
        return self

    def to_json(self) -> dict:
        d = asdict(self)
        if d["groups"] is None:
            del d["groups"]
        return d


@dataclass
class EffectEstimate:
    coefficient: float
    std_error: float
    p_value: float
    n: int
    df_resid: int
    models: list[str]
    note: str = "fixed-effects OLS with per-model intercepts (approximates a mixed model)"

    def interval(self, level: float = 0.99) -> tuple[float, float]:
        from statistics import NormalDist

        z = NormalDist().inv_cdf(0.5 + level / 2)
        return self.coefficient - z * self.std_error, self.coefficient + z * self.std_error

    def to_json(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# chi-square upper tail
# --------------------------------------------------------------------------

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 100_000


def _gamma_p_series(a: float, x: float) -> float:
    term = total = 1.0 / a
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_fraction(a: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gamma_q(a: float, x: float) -> float:
    """Regularised upper incomplete gamma Q(a, x)."""
    if a <= 0 or x < 0:
        raise DataError(f"gamma_q domain error: a={a}, x={x}")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _gamma_p_series(a, x))
    return _gamma_q_fraction(a, x)


def chi2_sf(x: float, df: int) -> float:
    """P(X > x) for X ~ chi-square(df)."""
    if df < 1 or not math.isfinite(x) or x < 0:
        raise DataError(f"chi2_sf domain error: x={x}, df={df}")
    return min(1.0, gamma_q(df / 2.0, x / 2.0))


# --------------------------------------------------------------------------
# ranks and rank tests
# --------------------------------------------------------------------------


def rank_midtie(values: Sequence[float]) -> np.ndarray:
    """Ranks 1..n; tied values share the mean of the ranks they span."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v))
    sorted_v = v[order]
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _tie_sizes(values: np.ndarray) -> np.ndarray:
    _, counts = np.unique(values, return_counts=True)
    return counts[counts > 1].astype(np.float64)


def _as_groups(sample) -> tuple[list[str], list[np.ndarray]]:
    if isinstance(sample, Mapping):
        items = list(sample.items())
    else:
        items = [(str(i), g) for i, g in enumerate(sample)]
    labels = [str(k) for k, _ in items]
    groups = [np.asarray(g, dtype=np.float64).ravel() for _, g in items]
    return labels, groups


def kruskal_wallis(sample) -> TestResult:
    """Kruskal-Wallis H with tie correction.

    ``sample`` is a sequence of value lists or a mapping label -> values.
    """
    labels, groups = _as_groups(sample)
    if len(groups) < 2:
        raise DataError("kruskal_wallis needs at least two groups")
    if any(len(g) == 0 for g in groups):
        raise DataError("kruskal_wallis groups must be nonempty")
    pooled = np.concatenate(groups)
    if not np.all(np.isfinite(pooled)):
        raise DataError("kruskal_wallis values must be finite")
    if any(len(g) < SMALL_GROUP for g in groups):
        warnings.warn("a group has fewer than 5 values; the chi-square approximation is rough")
    n = len(pooled)
    ties = _tie_sizes(pooled)
    correction = 1.0 - float(np.sum(ties**3 - ties)) / (n**3 - n)
    if correction <= 0:
        raise DataError("degenerate sample: all values identical")
    ranks = rank_midtie(pooled)
    bounds = np.cumsum([0] + [len(g) for g in groups])
    h = sum(ranks[a:b].sum() ** 2 / (b - a) for a, b in zip(bounds[:-1], bounds[1:]))
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    h /= correction
    h = max(h, 0.0)
    df = len(groups) - 1
    return TestResult("kruskal_wallis", float(h), df, chi2_sf(h, df), groups=labels).finalize()


def friedman(matrix, labels: Sequence[str] | None = None) -> TestResult:
    """Friedman chi-square for an (n blocks x k treatments) matrix, tie-corrected."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
        raise DataError(f"friedman needs at least a 2x2 block matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DataError("friedman values must be finite (no missing cells)")
    n, k = m.shape
    ranks = np.vstack([rank_midtie(row) for row in m])
    tie_terms = sum(float(np.sum(t**3 - t)) for t in (_tie_sizes(row) for row in m))
    correction = 1.0 - tie_terms / (n * k * (k * k - 1))
    if correction <= 0:
        raise DataError("degenerate sample: every block fully tied")
    col = ranks.sum(axis=0)
    stat = 12.0 / (n * k * (k + 1)) * float(np.sum(col**2)) - 3.0 * n * (k + 1)
    stat = max(stat / correction, 0.0)
    df = k - 1
    return TestResult(
        "friedman", float(stat), df, chi2_sf(stat, df),
        groups=None if labels is None else list(labels),
    ).finalize()


def bonferroni(p_values: Iterable[float]) -> list[float]:
    ps = list(p_values)
    for p in ps:
        if not 0.0 <= p <= 1.0:
            raise DataError(f"p-value {p} outside [0, 1]")
    m = len(ps)
    return [min(1.0, m * p) for p in ps]


# --------------------------------------------------------------------------
# size ~ model + incorrect
# --------------------------------------------------------------------------


def design_matrix(records) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Intercept, one indicator per non-reference model, then the incorrect flag."""
    rows = [r for r in records if not r.degenerate and r.correct is not None]
    models = sorted({r.model_id for r in rows})
    if len(models) < 2:
        raise DataError("fit_size_model needs records from at least two models")
    for m in models:
        flags = {r.correct for r in rows if r.model_id == m}
        if flags != {True, False}:
            kind = "correct" if True in flags else "incorrect"
            raise DataError(f"rank-deficient design: model {m} has only {kind} records")
    col = {m: i for i, m in enumerate(models[1:], start=1)}
    x = np.zeros((len(rows), len(models) + 1))
    y = np.empty(len(rows))
    x[:, 0] = 1.0
    for i, r in enumerate(rows):
        if r.model_id in col:
            x[i, col[r.model_id]] = 1.0
        x[i, -1] = 0.0 if r.correct else 1.0
        y[i] = r.area_ratio
    return x, y, models


def fit_size_model(records) -> EffectEstimate:
    """OLS of area_ratio on per-model intercepts plus an incorrect indicator."""
    x, y, models = design_matrix(records)
    n, p = x.shape
    if n <= p or np.linalg.matrix_rank(x) < p:
        raise DataError("rank-deficient design: not enough distinct records")
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta
    dof = n - p
    sigma2 = float(resid @ resid) / dof
    q, r = np.linalg.qr(x)
    rinv = np.linalg.inv(r)
    cov = sigma2 * (rinv @ rinv.T)
    se = math.sqrt(max(cov[-1, -1], 0.0))
    coef = float(beta[-1])
    if se > 0:
        p_value = math.erfc(abs(coef / se) / math.sqrt(2.0))
    else:
        p_value = 0.0 if coef != 0 else 1.0
    return EffectEstimate(coef, se, p_value, n, dof, models)
