"""Sensitivity of randomization inferences to biased treatment assignment.

Within a matched set, two units may differ in their odds of treatment by at most
a factor gamma. P-values are bounded with the separable approximation: each set
takes its worst-case assignment distribution (the k highest-scoring candidates
for the singleton role get odds gamma), and the set moments are combined through
a normal deviate.
"""
import itertools
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import stats
from scipy.optimize import bisect

from .cohort import FullMatch
from .error_handler import DomainError
from .interval_engine import (
    IntervalLabel,
    IntervalSet,
    PValueFactory,
    PValueFunction,
    VersionData,
    interval_family,
)
from .rand_test import (
    NullMethod,
    NullSpec,
    StatisticSpec,
    TestResult,
    set_differences,
    set_weights,
    test,
    unit_scores,
)
from .utils import validate_alpha

MASKING_TOLERANCE = 1e-3


class GammaSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma: float = 1.0

    @field_validator('gamma')
    @classmethod
    def _at_least_one(cls, value: float) -> float:
        if not (value >= 1.0) or math.isinf(value):
            raise DomainError(f"gamma must be a finite value >= 1, got {value}", {'gamma': value})
        return value


class AmplifyPair(BaseModel):
    """Unobserved covariate that multiplies the odds of treatment by lambda and of a worse outcome by delta"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lambda_: float = Field(alias='lambda')
    delta: float

    @field_validator('lambda_', 'delta')
    @classmethod
    def _above_one(cls, value: float) -> float:
        if not (value > 1.0) or math.isinf(value):
            raise DomainError(f"amplification parameters must be finite and > 1, got {value}", {'value': value})
        return value


def worst_case_set_moments(match: FullMatch, scores: np.ndarray, gamma: float) -> Tuple[np.ndarray, np.ndarray]:
    """Per-set mean and variance of D_i under the worst-case biased assignment.

    Sets with one treated unit put the singleton role on the treated unit and use
    the scores as they are; sets with one control use negated scores. For every
    k in 1..n-1 the k largest role scores get odds gamma; k maximizes the mean,
    ties going to the larger variance.
    """
    mu = np.zeros(match.I)
    nu = np.zeros(match.I)
    for (m, n) in sorted(set(zip(match.m.tolist(), match.n.tolist()))):
        sets = np.where((match.m == m) & (match.n == n))[0]
        index = match.offsets[sets][:, None] + np.arange(n)[None, :]
        role = scores[index] if m == 1 else -scores[index]
        role = -np.sort(-role, axis=1)

        c1 = n / (n - 1)
        total = role.sum(axis=1, keepdims=True)
        total_sq = (role ** 2).sum(axis=1, keepdims=True)
        top = np.cumsum(role, axis=1)[:, :n - 1]
        top_sq = np.cumsum(role ** 2, axis=1)[:, :n - 1]
        k = np.arange(1, n)[None, :]
        denominator = k * gamma + n - k

        mean_role = (gamma * top + (total - top)) / denominator
        mean_role_sq = (gamma * top_sq + (total_sq - top_sq)) / denominator
        mean_d = c1 * mean_role - total / (n - 1)
        var_d = np.maximum(c1 ** 2 * (mean_role_sq - mean_role ** 2), 0.0)

        best = mean_d.max(axis=1, keepdims=True)
        tied = mean_d >= best - 1e-12 * np.maximum(1.0, np.abs(best))
        choice = np.argmax(np.where(tied, var_d, -np.inf), axis=1)
        rows = np.arange(len(sets))
        mu[sets] = mean_d[rows, choice]
        nu[sets] = var_d[rows, choice]
    return mu, nu


def _normal_upper_bound(t_obs: float, expectation: float, variance: float) -> float:
    sd = math.sqrt(variance)
    if sd == 0.0:
        return 1.0 if t_obs <= expectation else 0.0
    return float(stats.norm.sf((t_obs - expectation) / sd))


def gamma_pvalue_bound(match: FullMatch, tau0: float, g: GammaSpec,
                       spec: Optional[StatisticSpec] = None) -> TestResult:
    """Upper bounds on the one-sided P-values of H_tau0 when assignment bias is at most gamma"""
    spec = spec or StatisticSpec()
    if g.gamma == 1.0:
        result = test(match, tau0, spec, NullSpec(method=NullMethod.NORMAL))
        return result.model_copy(update={'p_value_kind': "sensitivity-bound"})

    scores = unit_scores(match, tau0, spec)
    weights = set_weights(match)
    t_obs = float(np.dot(weights, set_differences(match, scores)))

    mu_up, nu_up = worst_case_set_moments(match, scores, g.gamma)
    expectation = float(np.dot(weights, mu_up))
    variance = float(np.dot(weights ** 2, nu_up))
    p_upper = _normal_upper_bound(t_obs, expectation, variance)

    # the lower tail of T is the upper tail of -T
    mu_down, nu_down = worst_case_set_moments(match, -scores, g.gamma)
    p_lower = _normal_upper_bound(-t_obs, float(np.dot(weights, mu_down)), float(np.dot(weights ** 2, nu_down)))

    return TestResult(
        tau0=tau0,
        statistic=t_obs,
        p_upper=p_upper,
        p_lower=p_lower,
        p_two_sided=min(1.0, 2.0 * min(p_upper, p_lower)),
        method=NullSpec(method=NullMethod.NORMAL),
        p_value_kind="sensitivity-bound",
        gamma=g.gamma,
        expectation=expectation,
        variance=variance,
    )


def gamma_pvalues(g: GammaSpec, spec: StatisticSpec) -> PValueFactory:
    """P-value factory for interval inversion under a gamma bound"""
    def factory(match: FullMatch) -> PValueFunction:
        def pvalues(tau0: float) -> Tuple[float, float]:
            result = gamma_pvalue_bound(match, tau0, g, spec)
            return result.p_upper, result.p_lower
        return pvalues
    return factory


def sensitivity_interval(v: VersionData, alpha: float, g: GammaSpec,
                         spec: Optional[StatisticSpec] = None, parallel: bool = True,
                         bonferroni: bool = False) -> IntervalSet:
    """Interval family whose P-values are the gamma upper bounds"""
    spec = spec or StatisticSpec()
    null = NullSpec(method=NullMethod.NORMAL)
    if g.gamma == 1.0:
        return interval_family(v, alpha, spec, null, parallel=parallel, bonferroni=bonferroni)
    logger.info(f"Sensitivity intervals at gamma={g.gamma}")
    return interval_family(v, alpha, spec, null, pvalue_factory=gamma_pvalues(g, spec),
                           gamma=g.gamma, parallel=parallel, bonferroni=bonferroni)


def amplify(p: AmplifyPair) -> float:
    """Gamma equivalent to an unobserved covariate with treatment odds lambda and outcome odds delta"""
    return (p.lambda_ * p.delta + 1.0) / (p.lambda_ + p.delta)


def amplify_curve(gamma: float, lambdas: Sequence[float]) -> List[AmplifyPair]:
    """(lambda, delta) pairs that amplify to ``gamma``; lambdas <= gamma have no partner and are skipped"""
    if not (gamma > 1.0) or math.isinf(gamma):
        raise DomainError(f"amplification needs a finite gamma > 1, got {gamma}", {'gamma': gamma})
    pairs = []
    for lam in lambdas:
        if lam <= gamma:
            logger.debug(f"lambda={lam} <= gamma={gamma}: no delta amplifies to gamma")
            continue
        pairs.append(AmplifyPair(**{'lambda': lam, 'delta': (gamma * lam - 1.0) / (lam - gamma)}))
    return pairs


def _accepts(match: FullMatch, tau: float, alpha: float, gamma: float,
             spec: StatisticSpec) -> Tuple[bool, bool]:
    """(tau not rejected by the lower-side test, tau not rejected by the upper-side test)"""
    result = gamma_pvalue_bound(match, tau, GammaSpec(gamma=gamma), spec)
    return result.p_upper > alpha / 2.0, result.p_lower > alpha / 2.0


def masking_gamma(v: VersionData, tau: float, alpha: float, spec: Optional[StatisticSpec] = None,
                  label: IntervalLabel = IntervalLabel.IC, gamma_max: float = 10.0) -> Optional[float]:
    """Smallest gamma in [1, gamma_max] whose sensitivity interval ``label`` contains ``tau``.

    Membership is read off the acceptance regions directly: tau is in I_c when
    neither one-sided test on all controls rejects it, and in I_v when some
    family accepts it on each side.
    """
    validate_alpha(alpha)
    spec = spec or StatisticSpec()
    if label not in (IntervalLabel.IC, IntervalLabel.IV):
        raise DomainError(f"masking gamma is defined for Ic and Iv, not {label.value}")

    def contains(gamma: float) -> bool:
        if label == IntervalLabel.IC:
            lower_ok, upper_ok = _accepts(v.all, tau, alpha, gamma, spec)
            return lower_ok and upper_ok
        sides = [_accepts(match, tau, alpha, gamma, spec) for match in (v.all, v.only_a, v.only_b)]
        return any(s[0] for s in sides) and any(s[1] for s in sides)

    if contains(1.0):
        return 1.0
    if not contains(gamma_max):
        logger.info(f"tau={tau} stays outside {label.value} up to gamma={gamma_max}")
        return None
    found = bisect(lambda gamma: 1.0 if contains(gamma) else -1.0, 1.0, gamma_max, xtol=MASKING_TOLERANCE)
    # report a gamma at which tau is inside
    return float(found) if contains(float(found)) else float(found) + MASKING_TOLERANCE


def biased_set_distribution(scores: Sequence[float], m: int, gamma: float,
                            u: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Exact distribution of D for one set when treated group S has probability proportional to gamma^(sum_{j in S} u_j)"""
    q = np.asarray(scores, dtype=float)
    u_arr = np.asarray(u, dtype=float)
    n = q.shape[0]
    if not (1 <= m <= n - 1):
        raise DomainError(f"set with n={n} cannot have m={m} treated units")
    GammaSpec(gamma=gamma)

    values, weights = [], []
    for members in itertools.combinations(range(n), m):
        treated = np.zeros(n, dtype=bool)
        treated[list(members)] = True
        values.append(q[treated].mean() - q[~treated].mean())
        weights.append(gamma ** u_arr[treated].sum())
    probabilities = np.asarray(weights) / np.sum(weights)
    return np.asarray(values), probabilities
