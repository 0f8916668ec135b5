"""Distribution summaries, Mann-Whitney U and Cliff's delta.

All comparisons run on exact values (Decimal, int or Fraction); floats only
appear in the final z-score and p-values.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInput

# min(n1, n2) below this switches to the exact null distribution
EXACT_MAX_SMALL_GROUP = 8
# pooled size above which exact counting is skipped even for a small group
EXACT_MAX_POOLED = 5000


@dataclass(frozen=True)
class SummaryStats:
    count: int
    mean: Decimal
    median: Decimal
    q1: Decimal
    q3: Decimal
    max: Decimal
    min: Decimal
    total: Decimal

    def to_dict(self, places: str = "0.01") -> dict:
        q = Decimal(places)
        return {
            "count": self.count,
            "mean": str(self.mean.quantize(q)),
            "median": str(self.median.quantize(q)),
            "q1": str(self.q1.quantize(q)),
            "q3": str(self.q3.quantize(q)),
            "max": str(self.max.quantize(q)),
            "min": str(self.min.quantize(q)),
            "total": str(self.total.quantize(q)),
        }


def _as_decimal(x) -> Decimal:
    if isinstance(x, Decimal):
        return x
    if isinstance(x, Fraction):
        with localcontext() as ctx:
            ctx.prec = 50
            return Decimal(x.numerator) / Decimal(x.denominator)
    return Decimal(str(x))


def quantile(sorted_values: Sequence[Decimal], p: Fraction) -> Decimal:
    """Linear interpolation between closest ranks, h = (n - 1) * p."""
    n = len(sorted_values)
    h = (n - 1) * p
    lo = math.floor(h)
    frac = h - lo
    if frac == 0:
        return sorted_values[lo]
    lower, upper = sorted_values[lo], sorted_values[lo + 1]
    step = Decimal(frac.numerator) / Decimal(frac.denominator)
    return lower + step * (upper - lower)


def summarize(values: Iterable) -> SummaryStats:
    xs = sorted(_as_decimal(v) for v in values)
    if not xs:
        raise EmptyInput("summarize needs at least one value")
    with localcontext() as ctx:
        ctx.prec = 50
        total = sum(xs, Decimal(0))
        mean = total / len(xs)
        return SummaryStats(
            count=len(xs),
            mean=mean,
            median=quantile(xs, Fraction(1, 2)),
            q1=quantile(xs, Fraction(1, 4)),
            q3=quantile(xs, Fraction(3, 4)),
            max=xs[-1],
            min=xs[0],
            total=total,
        )


@dataclass(frozen=True)
class UTestResult:
    u_statistic: Fraction
    z_score: float
    p_value: float
    n1: int
    n2: int
    p_less: float
    p_greater: float
    exact: bool = False
    degenerate: bool = False
    # set on the exact path when the null counts fit in int64
    p_less_exact: Fraction | None = None
    p_greater_exact: Fraction | None = None

    @property
    def u_other(self) -> Fraction:
        return self.n1 * self.n2 - self.u_statistic

    def to_dict(self) -> dict:
        return {
            "u_statistic": float(self.u_statistic),
            "z_score": self.z_score,
            "p_value": self.p_value,
            "p_less": self.p_less,
            "p_greater": self.p_greater,
            "n1": self.n1,
            "n2": self.n2,
            "exact": self.exact,
            "degenerate": self.degenerate,
            "p_less_exact": None if self.p_less_exact is None else str(self.p_less_exact),
            "p_greater_exact": None if self.p_greater_exact is None else str(self.p_greater_exact),
        }


def _doubled_ranks(pooled: Sequence) -> tuple[list[int], list[int]]:
    """Average ranks times two (always integers), in input order, plus tie group sizes."""
    order = sorted(range(len(pooled)), key=lambda i: pooled[i])
    ranks = [0] * len(pooled)
    ties = []
    start = 0
    while start < len(order):
        end = start
        while end + 1 < len(order) and pooled[order[end + 1]] == pooled[order[start]]:
            end += 1
        # ranks start+1 .. end+1 averaged, doubled
        doubled = start + end + 2
        for k in range(start, end + 1):
            ranks[order[k]] = doubled
        ties.append(end - start + 1)
        start = end + 1
    return ranks, ties


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _rank_sum_distribution(doubled: Sequence[int], m: int) -> tuple[np.ndarray, int]:
    """Counts of every doubled rank sum over all m-subsets of the pooled sample.

    Returns (counts indexed by doubled sum, number of subsets).
    """
    total = math.comb(len(doubled), m)
    dtype = np.int64 if total < 2 ** 62 else np.float64
    max_sum = sum(sorted(doubled)[-m:]) if m else 0
    dp = np.zeros((m + 1, max_sum + 1), dtype=dtype)
    dp[0, 0] = 1
    for d in doubled:
        for k in range(m, 0, -1):
            dp[k, d:] += dp[k - 1, : max_sum + 1 - d]
    return dp[m], total


def mann_whitney_u(a: Sequence, b: Sequence) -> UTestResult:
    """Two-sample rank test; ``u_statistic`` counts pairs with a > b (ties count half).

    Uses the tie-corrected normal approximation with continuity correction.
    When the smaller sample has fewer than 8 values the null distribution is
    counted exactly and the exact p-values are reported instead.
    """
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise EmptyInput("mann_whitney_u needs two non-empty samples")
    pooled = list(a) + list(b)
    doubled, ties = _doubled_ranks(pooled)
    n = n1 + n2
    rank_sum_a = Fraction(sum(doubled[:n1]), 2)
    u_a = rank_sum_a - Fraction(n1 * (n1 + 1), 2)

    mu = Fraction(n1 * n2, 2)
    tie_term = sum(t ** 3 - t for t in ties)
    var = Fraction(n1 * n2, 12) * ((n + 1) - Fraction(tie_term, n * (n - 1))) if n > 1 else Fraction(0)
    if var == 0:
        return UTestResult(u_a, 0.0, 1.0, n1, n2, 1.0, 1.0, exact=False, degenerate=True)

    sd = math.sqrt(var)
    diff = u_a - mu
    corrected = max(abs(diff) - Fraction(1, 2), Fraction(0))
    z = math.copysign(float(corrected) / sd, float(diff)) if corrected else 0.0
    p_two = min(1.0, 2.0 * _normal_sf(abs(z)))
    p_less = 1.0 - _normal_sf(float(diff + Fraction(1, 2)) / sd)
    p_greater = _normal_sf(float(diff - Fraction(1, 2)) / sd)

    if min(n1, n2) < EXACT_MAX_SMALL_GROUP and n <= EXACT_MAX_POOLED:
        le, ge = _exact_tails(doubled, n1, n2, u_a)
        p_two = min(1.0, 2.0 * float(min(le, ge)))
        exact_le = le if isinstance(le, Fraction) else None
        exact_ge = ge if isinstance(ge, Fraction) else None
        return UTestResult(u_a, z, p_two, n1, n2, float(le), float(ge), exact=True,
                           p_less_exact=exact_le, p_greater_exact=exact_ge)

    return UTestResult(u_a, z, p_two, n1, n2, min(1.0, p_less), min(1.0, p_greater))


def _tail_probs(counts: np.ndarray, total: int, cut: int) -> tuple[Fraction | float, Fraction | float]:
    """P(S <= cut) and P(S >= cut) for the doubled rank sum S; Fractions when counts are integers."""
    le = counts[: cut + 1].sum() if cut >= 0 else 0
    ge = counts[max(cut, 0):].sum() if cut < len(counts) else 0
    if counts.dtype == np.int64:
        return Fraction(int(le), total), Fraction(int(ge), total)
    return float(le) / total, float(ge) / total


def _exact_tails(doubled: Sequence[int], n1: int, n2: int, u_a: Fraction
                 ) -> tuple[Fraction | float, Fraction | float]:
    """Exact (P(U_a <= u), P(U_a >= u)) under the permutation null."""
    if n1 <= n2:
        counts, total = _rank_sum_distribution(doubled, n1)
        return _tail_probs(counts, total, int(2 * u_a) + n1 * (n1 + 1))
    counts, total = _rank_sum_distribution(doubled, n2)
    u_b = n1 * n2 - u_a
    b_le, b_ge = _tail_probs(counts, total, int(2 * u_b) + n2 * (n2 + 1))
    return b_ge, b_le


@dataclass(frozen=True)
class EffectSize:
    cliffs_delta: float
    greater: int
    less: int
    n_pairs: int

    @property
    def exact(self) -> Fraction:
        return Fraction(self.greater - self.less, self.n_pairs)


def cliffs_delta(a: Sequence, b: Sequence) -> EffectSize:
    """(#{x > y} - #{x < y}) / (n1 * n2) over all cross pairs, in O(n log n)."""
    if not a or not b:
        raise EmptyInput("cliffs_delta needs two non-empty samples")
    ys = sorted(b)
    n2 = len(ys)
    greater = less = 0
    for x in a:
        greater += bisect.bisect_left(ys, x)
        less += n2 - bisect.bisect_right(ys, x)
    n_pairs = len(a) * n2
    return EffectSize(float(Fraction(greater - less, n_pairs)), greater, less, n_pairs)
