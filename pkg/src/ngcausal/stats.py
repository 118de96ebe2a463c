"""Within-subject tests, multiple-comparison corrections and effect sizes.

Tables are (n_subjects, n_conditions) arrays, one row per pair. Degenerate
inputs (zero error variance) produce a result tagged with ``degenerate``
instead of raising, so a batch of analyses is never aborted by one
constant column.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as _dist

from .exceptions import ConfigurationError, InputError

__all__ = [
    "TestResult",
    "OlsResult",
    "rm_anova",
    "paired_t",
    "one_sample_t",
    "holm_bonferroni",
    "benjamini_hochberg",
    "ols_fit",
]

# relative size below which a variance is treated as exactly zero
_DEGENERATE_RTOL = 1e-12


@dataclass
class TestResult:
    test: str
    statistic: float
    df: tuple
    p_raw: float
    effect_size: float
    effect_name: str
    n: int
    p_adjusted: float | None = None
    method: str | None = None
    degenerate: str | None = None

    __test__ = False  # not a pytest class

    def to_dict(self):
        d = asdict(self)
        d["df"] = list(self.df)
        return d


@dataclass
class OlsResult:
    slope: float
    intercept: float
    r2: float
    F: float
    df: tuple
    p_value: float
    n: int

    def to_dict(self):
        d = asdict(self)
        d["df"] = list(self.df)
        return d


def _as_table(table, columns=None):
    """(subjects, conditions) float array from an array, mapping or DataFrame."""
    if isinstance(table, dict):
        keys = list(table) if columns is None else list(columns)
        arr = np.column_stack([np.asarray(table[k], dtype=np.float64) for k in keys])
    elif hasattr(table, "to_numpy"):
        arr = (table if columns is None else table[list(columns)]).to_numpy(dtype=np.float64)
    else:
        arr = np.asarray(table, dtype=np.float64)
        if columns is not None:
            arr = arr[:, list(columns)]
    if arr.ndim != 2:
        raise InputError(f"table must be 2-D (subjects x conditions), got shape {arr.shape}")
    return arr


def rm_anova(table, columns=None):
    """One-way repeated-measures ANOVA without sphericity correction.

    Returns F with df (c - 1, (c - 1)(n - 1)) and partial eta squared
    SS_effect / (SS_effect + SS_error).
    """
    x = _as_table(table, columns)
    n, c = x.shape
    if c < 2 or n < 2:
        raise InputError(f"repeated-measures ANOVA needs >= 2 subjects and >= 2 conditions; got {n}x{c}")
    if not np.all(np.isfinite(x)):
        raise InputError("table has missing cells")
    grand = x.mean()
    cond = x.mean(axis=0)
    subj = x.mean(axis=1)
    ss_effect = n * float(((cond - grand) ** 2).sum())
    resid = x - subj[:, None] - cond[None, :] + grand
    ss_error = float((resid ** 2).sum())
    ss_total = float(((x - grand) ** 2).sum())
    df1, df2 = c - 1, (c - 1) * (n - 1)
    # roundoff floor: SS of residuals at relative precision _DEGENERATE_RTOL of the data
    floor = x.size * (_DEGENERATE_RTOL * float(np.abs(x).max())) ** 2
    if ss_error <= max(_DEGENERATE_RTOL * ss_total, floor) or ss_total == 0.0:
        return TestResult("rm_anova", float("nan"), (df1, df2), float("nan"), float("nan"),
                          "partial_eta_squared", n, degenerate="zero error variance (SS_error = 0)")
    F = (ss_effect / df1) / (ss_error / df2)
    return TestResult("rm_anova", float(F), (df1, df2), float(_dist.f.sf(F, df1, df2)),
                      ss_effect / (ss_effect + ss_error), "partial_eta_squared", n)


def _t_from_sample(d, mu, tail, test):
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1:
        raise InputError(f"{test} needs a 1-D sample")
    n = d.size
    if n < 2:
        raise InputError(f"{test} needs at least 2 observations, got {n}")
    if not np.all(np.isfinite(d)):
        raise InputError(f"{test}: sample contains missing values")
    tail = {"one": "greater"}.get(tail, tail)
    if tail not in ("two", "greater", "less"):
        raise ConfigurationError(f"tail must be 'two', 'one'/'greater' or 'less', got {tail!r}")
    diff = d - mu
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    scale = max(abs(mean), float(np.abs(diff).max()))
    if sd <= _DEGENERATE_RTOL * scale or sd == 0.0:
        if scale == 0.0:
            return TestResult(test, 0.0, (n - 1,), 1.0, 0.0, "cohens_d", n)
        return TestResult(test, float(np.copysign(np.inf, mean)), (n - 1,), float("nan"), float("nan"),
                          "cohens_d", n, degenerate="zero variance with non-zero mean difference")
    t = mean / (sd / np.sqrt(n))
    if tail == "two":
        p = 2.0 * _dist.t.sf(abs(t), n - 1)
    elif tail == "greater":
        p = _dist.t.sf(t, n - 1)
    else:
        p = _dist.t.cdf(t, n - 1)
    return TestResult(test, float(t), (n - 1,), float(min(p, 1.0)), mean / sd, "cohens_d", n)


def paired_t(a, b, tail="two"):
    """Paired t-test on ``a - b``; Cohen's d is mean(diff) / sd(diff)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"paired samples differ in length: {a.shape} vs {b.shape}")
    return _t_from_sample(a - b, 0.0, tail, "paired_t")


def one_sample_t(x, mu=0.0, tail="two"):
    """One-sample t-test of mean(x) against ``mu``.

    ``tail="one"`` (alias ``"greater"``) tests mean > mu.
    """
    return _t_from_sample(x, float(mu), tail, "one_sample_t")


def _prepare(p_values):
    p = np.asarray(p_values, dtype=np.float64)
    if p.ndim != 1:
        raise InputError("p-values must be a 1-D sequence")
    valid = np.isfinite(p)
    if np.any((p[valid] < 0) | (p[valid] > 1)):
        raise InputError("p-values must lie in [0, 1]")
    return p, valid


def holm_bonferroni(p_values):
    """Holm step-down adjustment. NaN entries are ignored and stay NaN."""
    p, valid = _prepare(p_values)
    out = np.full_like(p, np.nan)
    q = p[valid]
    m = q.size
    if m:
        order = np.argsort(q, kind="stable")
        adj = np.maximum.accumulate(q[order] * (m - np.arange(m)))
        res = np.empty(m)
        res[order] = np.minimum(adj, 1.0)
        out[valid] = res
    return out


def benjamini_hochberg(p_values):
    """Benjamini-Hochberg step-up adjustment. NaN entries stay NaN."""
    p, valid = _prepare(p_values)
    out = np.full_like(p, np.nan)
    q = p[valid]
    m = q.size
    if m:
        order = np.argsort(q, kind="stable")
        scaled = q[order] * m / np.arange(1, m + 1)
        adj = np.minimum.accumulate(scaled[::-1])[::-1]
        res = np.empty(m)
        res[order] = np.minimum(adj, 1.0)
        out[valid] = res
    return out


def ols_fit(outcome, predictor):
    """Least-squares line of ``outcome`` on a single ``predictor``.

    Also returns the F test of the slope, df (1, n - 2). For one predictor
    R^2 equals the eta squared of the corresponding one-way decomposition.
    """
    y = np.asarray(outcome, dtype=np.float64)
    x = np.asarray(predictor, dtype=np.float64)
    if y.shape != x.shape or y.ndim != 1:
        raise InputError("outcome and predictor must be 1-D and of equal length")
    n = y.size
    if n < 3:
        raise InputError(f"ols_fit needs at least 3 observations, got {n}")
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0.0:
        raise InputError("predictor is constant")
    slope = float(((x - xm) * (y - ym)).sum() / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    sse = float(resid @ resid)
    sst = float(((y - ym) ** 2).sum())
    r2 = 1.0 - sse / sst if sst > 0 else float("nan")
    df2 = n - 2
    if sse == 0.0:
        F, p = float("inf"), 0.0
    else:
        F = (sst - sse) / (sse / df2)
        p = float(_dist.f.sf(F, 1, df2))
    return OlsResult(slope, intercept, r2, float(F), (1, df2), p, n)
