"""Confidence intervals by test inversion, and the version interval family.

Each two-sided interval is the intersection of two one-sided 1 - alpha/2
intervals. The lower endpoint is where p_upper(tau0) rises above alpha/2, the
upper endpoint where p_lower(tau0) falls to alpha/2; both are found by
bisection from a bracket grown outward from the point estimate.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.optimize import bisect

from .cohort import FullMatch
from .config import NUMERIC
from .error_handler import CohortValidationError, DomainError, NonMonotoneInversionError
from .rand_test import NullSpec, StatisticKind, StatisticSpec, point_estimate, test
from .utils import validate_alpha, worker_count

# tau0 -> (p_upper, p_lower)
PValueFunction = Callable[[float], Tuple[float, float]]
PValueFactory = Callable[[FullMatch], PValueFunction]

MONOTONE_GRID_POINTS = 41


class IntervalLabel(str, Enum):
    IC = "Ic"
    IA = "Ia"
    IB = "Ib"
    IV = "Iv"
    ISTAR = "Istar"
    BONFERRONI_ALL = "BonferroniAll"
    BONFERRONI_A = "BonferroniA"
    BONFERRONI_B = "BonferroniB"


class Interval(BaseModel):
    model_config = ConfigDict(frozen=True)

    lo: float
    hi: float
    alpha: float
    label: IntervalLabel

    @model_validator(mode='after')
    def _ordered(self) -> "Interval":
        if not (0.0 < self.alpha < 1.0):
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}", {'alpha': self.alpha})
        if self.lo > self.hi:
            raise DomainError(f"interval {self.label.value} has lo {self.lo} > hi {self.hi}")
        return self

    @property
    def lower_one_sided(self) -> Tuple[float, float]:
        """One-sided 1 - alpha/2 interval [lo, inf)"""
        return self.lo, math.inf

    @property
    def upper_one_sided(self) -> Tuple[float, float]:
        """One-sided 1 - alpha/2 interval (-inf, hi]"""
        return -math.inf, self.hi

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi

    def covers(self, other: "Interval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi


class IntervalSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    ic: Interval
    ia: Interval
    ib: Interval
    iv: Interval
    istar: Interval
    statistic: StatisticKind = StatisticKind.MEAN_DIFF
    gamma: float = 1.0
    bonferroni: Optional[Tuple[Interval, Interval, Interval]] = None

    def intervals(self) -> List[Interval]:
        ordered = [self.ia, self.ib, self.ic, self.iv, self.istar]
        return ordered + list(self.bonferroni or ())

    @property
    def bonferroni_length_ratio(self) -> Optional[float]:
        """Length of BC(all) relative to Ic, when the Bonferroni intervals are present"""
        if self.bonferroni is None:
            return None
        return length_ratio(self.bonferroni[0], self.ic)

    def to_rows(self) -> List[Dict[str, object]]:
        """Plot rows (label, lo, hi, gamma): version intervals, Ic, Iv, Istar, then any Bonferroni rows"""
        return [
            {'label': interval.label.value, 'lo': interval.lo, 'hi': interval.hi, 'gamma': self.gamma}
            for interval in self.intervals()
        ]


@dataclass(frozen=True)
class VersionData:
    """Three matches over the same treated units: all controls, version a only, version b only"""

    all: FullMatch
    only_a: FullMatch
    only_b: FullMatch

    def __post_init__(self) -> None:
        treated = [
            sorted(uid for uid, z in zip(match.unit_ids, match.treated) if z)
            for match in (self.all, self.only_a, self.only_b)
        ]
        if not (treated[0] == treated[1] == treated[2]):
            raise CohortValidationError(
                "the three matches must contain the same treated units",
                {'treated_counts': [len(t) for t in treated]},
            )


def randomization_pvalues(match: FullMatch, spec: StatisticSpec, null: NullSpec) -> PValueFunction:
    def pvalues(tau0: float) -> Tuple[float, float]:
        result = test(match, tau0, spec, null)
        return result.p_upper, result.p_lower
    return pvalues


def _search_scale(match: FullMatch) -> Tuple[float, float]:
    """(initial step, search limit) in outcome units"""
    span = float(np.ptp(match.outcome))
    span = span if span > 0 else 1.0
    return 0.1 * span, NUMERIC.search_range_factor * span


def _endpoint(accepts: Callable[[float], bool], start: float, step: float, limit: float,
              outward: float) -> float:
    """Boundary of an acceptance region that extends from the endpoint in direction ``-outward``.

    ``accepts`` is monotone along ``outward``: accepted on the inner side, rejected
    beyond the endpoint. Returns +/-inf when no rejection is found within ``limit``.
    """
    def signed(tau: float) -> float:
        return 1.0 if accepts(tau) else -1.0

    if accepts(start):
        inner, distance = start, step
        while True:
            outer = start + outward * distance
            if not accepts(outer):
                break
            inner = outer
            if distance > limit:
                return outward * math.inf
            distance *= 2.0
    else:
        outer, distance = start, step
        while True:
            inner = start - outward * distance
            if accepts(inner):
                break
            outer = inner
            if distance > limit:
                logger.warning(f"No accepted tau0 within {limit:.3g} of {start:.6g}")
                return inner
            distance *= 2.0

    a, b = sorted((inner, outer))
    return float(bisect(signed, a, b, xtol=NUMERIC.inversion_tolerance))


def _check_monotone(pvalues: PValueFunction, lo: float, hi: float, step: float) -> None:
    left = lo if math.isfinite(lo) else hi - 10 * step
    right = hi if math.isfinite(hi) else lo + 10 * step
    margin = max(right - left, step)
    grid = np.linspace(left - margin, right + margin, MONOTONE_GRID_POINTS)
    path = np.array([pvalues(float(tau)) for tau in grid])
    tol = NUMERIC.tie_tolerance
    if np.any(np.diff(path[:, 0]) < -tol) or np.any(np.diff(path[:, 1]) > tol):
        raise NonMonotoneInversionError(
            "P-values are not monotone in tau0 on the search grid; invert on a grid instead",
            {'grid_lo': float(grid[0]), 'grid_hi': float(grid[-1])},
        )


def invert(match: FullMatch, alpha: float = NUMERIC.alpha, spec: Optional[StatisticSpec] = None,
           null: Optional[NullSpec] = None, label: IntervalLabel = IntervalLabel.IC,
           pvalues: Optional[PValueFunction] = None) -> Interval:
    """1 - alpha interval for a constant effect: {tau0 : both one-sided P-values > alpha / 2}"""
    validate_alpha(alpha)
    spec = spec or StatisticSpec()
    null = null or NullSpec()
    pvalues = pvalues or randomization_pvalues(match, spec, null)
    half = alpha / 2.0
    step, limit = _search_scale(match)
    start = point_estimate(match, spec)

    lo = _endpoint(lambda tau: pvalues(tau)[0] > half, start, step, limit, outward=-1.0)
    hi = _endpoint(lambda tau: pvalues(tau)[1] > half, start, step, limit, outward=1.0)
    if lo > hi:
        # empty up to tolerance: degenerate interval at the crossing
        lo = hi = 0.5 * (lo + hi)
    if spec.kind == StatisticKind.HUBER_M:
        _check_monotone(pvalues, lo, hi, step)

    interval = Interval(lo=lo, hi=hi, alpha=alpha, label=label)
    logger.debug(f"{label.value} at alpha={alpha}: [{lo:.6g}, {hi:.6g}]")
    return interval


def hull(intervals: List[Interval], label: IntervalLabel) -> Interval:
    """Shortest interval containing every interval in ``intervals``"""
    return Interval(
        lo=min(i.lo for i in intervals),
        hi=max(i.hi for i in intervals),
        alpha=intervals[0].alpha,
        label=label,
    )


def _invert_three(v: VersionData, alpha: float, spec: StatisticSpec, null: NullSpec,
                  labels: Tuple[IntervalLabel, IntervalLabel, IntervalLabel],
                  pvalue_factory: Optional[PValueFactory], parallel: bool) -> List[Interval]:
    matches = (v.all, v.only_a, v.only_b)

    def one(k: int) -> Interval:
        pvalues = pvalue_factory(matches[k]) if pvalue_factory else None
        return invert(matches[k], alpha, spec, null, labels[k], pvalues)

    workers = worker_count(3) if parallel else 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(3)))
    return [one(k) for k in range(3)]


def interval_family(v: VersionData, alpha: float = NUMERIC.alpha, spec: Optional[StatisticSpec] = None,
                    null: Optional[NullSpec] = None, pvalue_factory: Optional[PValueFactory] = None,
                    gamma: float = 1.0, parallel: bool = True, bonferroni: bool = False) -> IntervalSet:
    """I_c, I^a, I^b and the hulls I_v (all three) and I_* (versions only).

    With ``bonferroni`` the three alpha / 3 intervals are inverted from the same
    P-value functions and attached to the set.
    """
    spec = spec or StatisticSpec()
    null = null or NullSpec()
    ic, ia, ib = _invert_three(v, alpha, spec, null,
                               (IntervalLabel.IC, IntervalLabel.IA, IntervalLabel.IB),
                               pvalue_factory, parallel)
    adjusted = bonferroni_family(v, alpha, spec, null, pvalue_factory, parallel) if bonferroni else None
    return IntervalSet(
        ic=ic,
        ia=ia,
        ib=ib,
        iv=hull([ic, ia, ib], IntervalLabel.IV),
        istar=hull([ia, ib], IntervalLabel.ISTAR),
        statistic=spec.kind,
        gamma=gamma,
        bonferroni=adjusted,
    )


def bonferroni_family(v: VersionData, alpha: float = NUMERIC.alpha, spec: Optional[StatisticSpec] = None,
                      null: Optional[NullSpec] = None, pvalue_factory: Optional[PValueFactory] = None,
                      parallel: bool = True) -> Tuple[Interval, Interval, Interval]:
    """All three matches inverted at alpha / 3"""
    validate_alpha(alpha)
    spec = spec or StatisticSpec()
    null = null or NullSpec()
    intervals = _invert_three(
        v, alpha / 3.0, spec, null,
        (IntervalLabel.BONFERRONI_ALL, IntervalLabel.BONFERRONI_A, IntervalLabel.BONFERRONI_B),
        pvalue_factory, parallel,
    )
    return intervals[0], intervals[1], intervals[2]


def length_ratio(a: Interval, b: Interval) -> float:
    """Length of ``a`` relative to ``b``"""
    if not (math.isfinite(a.length) and math.isfinite(b.length)):
        return math.inf if math.isinf(a.length) and math.isfinite(b.length) else math.nan
    if b.length == 0:
        return math.inf if a.length > 0 else 1.0
    return a.length / b.length
