"""Correlation and dispersion statistics.

Accumulation uses math.fsum in input order, so results are bit-reproducible
across runs and platforms regardless of array layout.
"""

from __future__ import annotations

import math
from typing import Sequence

from .errors import DataError


def _check_xy(x: Sequence[float], y: Sequence[float]) -> None:
    if len(x) != len(y):
        raise DataError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise DataError(f"need at least 2 points, got {len(x)}")


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation; raises on length mismatch or zero variance."""
    _check_xy(x, y)
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    sxx = math.fsum((xi - mx) ** 2 for xi in x)
    syy = math.fsum((yi - my) ** 2 for yi in y)
    if sxx == 0.0 or syy == 0.0:
        raise DataError("zero variance input to pearson")
    sxy = math.fsum((xi - mx) * (yi - my) for xi, yi in zip(x, y))
    return max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks; ties receive the mean rank of their block."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean_rank = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = mean_rank
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson over average ranks."""
    _check_xy(x, y)
    try:
        return pearson(average_ranks(x), average_ranks(y))
    except DataError as exc:
        raise DataError(f"spearman: {exc}") from exc


def mean_and_stderr(values: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error (sample sd / sqrt(n)); std_err is 0 for n=1."""
    if len(values) == 0:
        raise DataError("mean_and_stderr of empty list")
    n = len(values)
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var) / math.sqrt(n)


def sample_std(values: Sequence[float]) -> float:
    """Sample standard deviation (n-1 denominator); 0 for n=1."""
    if len(values) == 0:
        raise DataError("sample_std of empty list")
    if len(values) == 1:
        return 0.0
    mean = math.fsum(values) / len(values)
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1))
