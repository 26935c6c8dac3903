"""Two-sample comparison of run metrics."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.stats import mannwhitneyu

EXACT_BELOW = 8


class MannWhitneyResult(NamedTuple):
    u: float  # statistic of the first sample
    p_value: float
    median_a: float
    median_b: float
    method: str


def mann_whitney(a, b) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test.

    Exact null distribution when the smaller sample has fewer than 8 values
    and there are no ties, otherwise the normal approximation with tie
    correction (and continuity correction).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = a[~np.isnan(a)], b[~np.isnan(b)]
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples need at least one value")
    ties = np.unique(np.concatenate([a, b])).size < a.size + b.size
    method = "exact" if min(a.size, b.size) < EXACT_BELOW and not ties else "asymptotic"
    res = mannwhitneyu(a, b, alternative="two-sided", method=method)
    return MannWhitneyResult(float(res.statistic), float(res.pvalue), float(np.median(a)),
                             float(np.median(b)), method)
