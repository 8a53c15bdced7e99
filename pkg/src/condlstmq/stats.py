"""Paired one-sided tests used for model comparison and feature importance.

The signed-rank test enumerates the exact null distribution of the
positive-rank sum for small samples (tie midranks included, via doubled
integer ranks) and switches to the tie-corrected normal approximation with
continuity correction for larger ones.  Zero differences are dropped before
ranking in both tests.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


def _phi(z: float) -> float:
    """Standard normal CDF."""
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


@dataclass
class WilcoxonResult:
    statistic: float  # W+, the positive-rank sum
    p_value: float
    n: int  # pairs remaining after dropping zeros
    method: str  # "exact" or "normal"


def _exact_tail(scaled_ranks: np.ndarray, w_scaled: int, alternative: str) -> float:
    """Exact tail probability of the rank-sum over all 2^n sign assignments."""
    total = int(scaled_ranks.sum())
    dist = np.zeros(total + 1, dtype=np.float64)
    dist[0] = 1.0
    for r in scaled_ranks:
        r = int(r)
        shifted = np.zeros_like(dist)
        shifted[r:] = dist[: total + 1 - r]
        dist += shifted
    dist /= 2.0 ** len(scaled_ranks)
    if alternative == "less":
        return float(dist[: w_scaled + 1].sum())
    return float(dist[w_scaled:].sum())


def wilcoxon_signed_rank(deltas, alternative: str = "less",
                         method: str = "auto",
                         exact_max_n: int = 20) -> WilcoxonResult:
    """One-sided Wilcoxon signed-rank test on paired differences.

    ``alternative="less"`` tests whether the differences are shifted below
    zero (small positive-rank sum).  ``method`` is "exact", "normal", or
    "auto" (exact up to ``exact_max_n`` pairs).
    """
    if alternative not in ("less", "greater"):
        raise ValueError(f"unknown alternative {alternative!r}")
    d = np.asarray(deltas, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("differences must be finite")
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        raise ValueError("all paired differences are zero")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if method == "auto":
        method = "exact" if n <= exact_max_n else "normal"
    if method == "exact":
        scaled = np.rint(2.0 * ranks).astype(np.int64)
        w_scaled = int(round(2.0 * w_plus))
        p = _exact_tail(scaled, w_scaled, alternative)
        return WilcoxonResult(w_plus, p, n, "exact")
    if method != "normal":
        raise ValueError(f"unknown method {method!r}")
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, counts = np.unique(np.abs(d), return_counts=True)
    var -= float((counts.astype(float) ** 3 - counts).sum()) / 48.0
    if var <= 0:
        raise ValueError("zero variance in signed-rank statistic (all ties)")
    sd = math.sqrt(var)
    if alternative == "less":
        p = _phi((w_plus - mu + 0.5) / sd)
    else:
        p = _phi(-(w_plus - mu - 0.5) / sd)
    return WilcoxonResult(w_plus, min(max(p, 0.0), 1.0), n, "normal")


@dataclass
class SignTestResult:
    n: int  # non-zero differences
    n_positive: int
    p_value: float


def sign_test(deltas) -> SignTestResult:
    """Exact one-sample sign test: P(Binomial(n, 1/2) >= #positive).

    Zero differences are dropped; if every difference is zero the test is
    uninformative and returns p = 1 with a warning.
    """
    d = np.asarray(deltas, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("differences must be finite")
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        warnings.warn("sign test: all differences are zero; p = 1")
        return SignTestResult(0, 0, 1.0)
    k = int((d > 0).sum())
    tail = sum(math.comb(n, j) for j in range(k, n + 1)) / 2.0 ** n
    return SignTestResult(n, k, float(tail))
