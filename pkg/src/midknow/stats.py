"""Tests and estimators for comparing paired and unpaired simulation output.

Everything here is a pure function of its inputs; the permutation tests take
an explicit :class:`~midknow.determinism.Rng` so their p-values replay exactly.
All p-values are two-sided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .determinism import Rng, next_u64, shuffle_inplace

DEFAULT_PERMUTATIONS = 100_000

# relative slack when comparing a resampled statistic against the observed one
_TIE_RTOL = 1e-12


class StatsError(ValueError):
    """Input is degenerate for the requested test."""


@dataclass(frozen=True)
class TestResult:
    effect_size: float
    statistic: float
    df: float
    p_value: float
    method: str


@dataclass(frozen=True)
class Term:
    name: str
    estimate: float
    std_error: float
    t_value: float
    p_value: float


@dataclass(frozen=True)
class RegressionFit:
    terms: tuple[Term, ...]
    residual_df: int
    n: int
    residual_std: float

    def __getitem__(self, name: str) -> Term:
        for term in self.terms:
            if term.name == name:
                return term
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.terms]

    @property
    def estimates(self) -> np.ndarray:
        return np.array([t.estimate for t in self.terms])


@dataclass(frozen=True)
class PairedDataset:
    """Covariate plus untreated/treated outcomes, one row per pair.

    ``paired`` records that both outcomes of each row were produced from the
    same restored state; datasets assembled any other way must leave it False.
    """

    x: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    treatment: float = 1.0
    paired: bool = False

    def __post_init__(self):
        for name in ("x", "y1", "y2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not (self.x.shape == self.y1.shape == self.y2.shape) or self.x.ndim != 1:
            raise StatsError("x, y1 and y2 must be 1-d and equally long")

    def __len__(self) -> int:
        return int(self.x.shape[0])


@dataclass(frozen=True)
class PairedFit:
    """Regression-style summary of a paired treatment experiment."""

    intercept: float
    coefficient: float
    std_error: float
    p_value: float
    correlation: float
    n: int


# --- t distribution --------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, 20_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a > 0 and b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, df: float) -> float:
    """Upper-tail probability P(T > t) of Student's t with ``df`` degrees of freedom."""
    if not df > 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    return tail if t >= 0 else 1.0 - tail


def _two_sided(t: float, df: float) -> float:
    if math.isnan(t):
        return math.nan
    return min(1.0, 2.0 * t_sf(abs(t), df))


# --- t tests -----------------------------------------------------------------


def _sample(a: Sequence[float], name: str, min_size: int) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64).ravel()
    if arr.size < min_size:
        raise StatsError(f"{name} needs at least {min_size} values, got {arr.size}")
    return arr


def welch_t_test(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """Unequal-variance two-sample t test; statistic is (mean(a) - mean(b)) / se."""
    a = _sample(a, "a", 2)
    b = _sample(b, "b", 2)
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 == 0:
        raise StatsError("both samples have zero variance")
    diff = a.mean() - b.mean()
    t = diff / math.sqrt(se2)
    df = se2 * se2 / (va * va / (a.size - 1) + vb * vb / (b.size - 1))
    return TestResult(abs(float(diff)), float(t), float(df), _two_sided(t, df), "welch_t")


def paired_t_test(y1: Sequence[float], y2: Sequence[float]) -> TestResult:
    """One-sample t test on the per-pair differences ``y2 - y1``."""
    y1 = _sample(y1, "y1", 2)
    y2 = _sample(y2, "y2", 2)
    if y1.size != y2.size:
        raise StatsError(f"paired samples differ in length: {y1.size} vs {y2.size}")
    d = y2 - y1
    sd = d.std(ddof=1)
    if sd == 0:
        raise StatsError("differences have zero variance")
    t = d.mean() / (sd / math.sqrt(d.size))
    df = d.size - 1
    return TestResult(abs(float(d.mean())), float(t), float(df), _two_sided(t, df), "paired_t")


# --- permutation tests -----------------------------------------------------


@njit(cache=True)
def _perm_median_count(s, pooled, n_a, n_perm, threshold):
    work = pooled.copy()
    hits = 0
    for _ in range(n_perm):
        shuffle_inplace(s, work)
        stat = abs(np.median(work[:n_a]) - np.median(work[n_a:]))
        if stat >= threshold:
            hits += 1
    return hits


@njit(cache=True)
def _signflip_median_count(s, diffs, n_perm, threshold):
    n = diffs.shape[0]
    work = np.empty(n)
    hits = 0
    for _ in range(n_perm):
        word = np.uint64(0)
        for i in range(n):
            if i % 64 == 0:
                word = next_u64(s)
            if word & np.uint64(1):
                work[i] = -diffs[i]
            else:
                work[i] = diffs[i]
            word >>= np.uint64(1)
        if abs(np.median(work)) >= threshold:
            hits += 1
    return hits


def _threshold(observed: float) -> float:
    return observed - _TIE_RTOL * max(1.0, abs(observed))


def median_diff_test(
    a: Sequence[float],
    b: Sequence[float],
    n_perm: int = DEFAULT_PERMUTATIONS,
    rng: Rng | None = None,
) -> TestResult:
    """Permutation test for a difference of medians between two groups.

    The pooled values are reshuffled ``n_perm`` times and re-split at the
    original group sizes; the p-value is the share of reshuffles whose
    absolute median difference reaches the observed one.
    """
    a = _sample(a, "a", 1)
    b = _sample(b, "b", 1)
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    rng = Rng(0) if rng is None else rng
    observed = abs(float(np.median(a) - np.median(b)))
    pooled = np.concatenate([a, b])
    hits = _perm_median_count(rng.buffer, pooled, a.size, n_perm, _threshold(observed))
    return TestResult(observed, observed, math.nan, hits / n_perm, "median_diff_permutation")


def paired_median_test(
    y1: Sequence[float],
    y2: Sequence[float],
    n_perm: int = DEFAULT_PERMUTATIONS,
    rng: Rng | None = None,
) -> TestResult:
    """Permutation test for the median of paired differences ``y2 - y1``.

    Randomly swapping the two outcomes inside a pair flips the sign of its
    difference, so each resample negates every difference independently with
    probability one half.
    """
    y1 = _sample(y1, "y1", 1)
    y2 = _sample(y2, "y2", 1)
    if y1.size != y2.size:
        raise StatsError(f"paired samples differ in length: {y1.size} vs {y2.size}")
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    rng = Rng(0) if rng is None else rng
    d = y2 - y1
    observed = abs(float(np.median(d)))
    hits = _signflip_median_count(rng.buffer, d, n_perm, _threshold(observed))
    return TestResult(observed, observed, math.nan, hits / n_perm, "paired_median_permutation")


# --- regression ------------------------------------------------------------


def ols(
    y: Sequence[float],
    predictors: Mapping[str, Sequence[float]],
    intercept: bool = True,
) -> RegressionFit:
    """Least squares via the normal equations, with classical standard errors."""
    y = np.asarray(y, dtype=np.float64).ravel()
    names = (["intercept"] if intercept else []) + list(predictors)
    cols = ([np.ones_like(y)] if intercept else []) + [
        np.asarray(v, dtype=np.float64).ravel() for v in predictors.values()
    ]
    if not cols:
        raise StatsError("no terms to fit")
    if any(c.shape != y.shape for c in cols):
        raise StatsError("every predictor must match the length of y")
    X = np.column_stack(cols)
    n, k = X.shape
    if n <= k:
        raise StatsError(f"need more observations ({n}) than terms ({k})")
    if np.linalg.matrix_rank(X) < k:
        raise StatsError("design matrix is rank deficient")
    gram = X.T @ X
    beta = np.linalg.solve(gram, X.T @ y)
    resid = y - X @ beta
    dof = n - k
    sigma2 = float(resid @ resid) / dof
    se = np.sqrt(sigma2 * np.diag(np.linalg.inv(gram)))
    terms = []
    for name, est, err in zip(names, beta, se):
        if err > 0:
            t = est / err
        else:
            t = math.copysign(math.inf, est) if est != 0 else math.nan
        terms.append(Term(name, float(est), float(err), float(t), _two_sided(t, dof)))
    return RegressionFit(tuple(terms), dof, n, math.sqrt(sigma2))


def pearson_test(x: Sequence[float], y: Sequence[float]) -> TestResult:
    """Product-moment correlation with its t test on n - 2 degrees of freedom."""
    x = _sample(x, "x", 3)
    y = _sample(y, "y", 3)
    if x.size != y.size:
        raise StatsError("x and y differ in length")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx == 0 or syy == 0:
        raise StatsError("correlation undefined for a constant variable")
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = x.size - 2
    if abs(r) == 1.0:
        t = math.copysign(math.inf, r)
    else:
        t = r * math.sqrt(df / (1.0 - r * r))
    return TestResult(r, t, float(df), _two_sided(t, df), "pearson")


def paired_coefficient(data: PairedDataset) -> PairedFit:
    """Treatment effect of a paired experiment, reported like a regression slope.

    coefficient = |mean(y1) - mean(y2)| per unit of treatment, std_error =
    sample SD of ``y1 - y2`` (per unit), intercept = mean(y1) - coefficient *
    mean(x).  The p-value comes from a Pearson test of ``x`` against ``y1``.
    """
    if len(data) < 2:
        raise StatsError("need at least two pairs")
    if data.treatment == 0:
        raise StatsError("treatment size is zero; coefficient per unit undefined")
    if float(np.ptp(data.x)) == 0:
        raise StatsError("covariate has zero variance")
    scale = abs(data.treatment)
    diff = data.y1 - data.y2
    coef = abs(float(data.y1.mean() - data.y2.mean())) / scale
    se = float(diff.std(ddof=1)) / scale
    intercept = float(data.y1.mean()) - coef * float(data.x.mean())
    if len(data) >= 3 and float(np.ptp(data.y1)) > 0:
        corr = pearson_test(data.x, data.y1)
        r, p = corr.effect_size, corr.p_value
    else:
        r, p = math.nan, math.nan
    return PairedFit(intercept, coef, se, p, r, len(data))
