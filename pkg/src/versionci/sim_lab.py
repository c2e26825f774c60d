"""Power and coverage simulations for designs with two versions of control.

Each matched set holds one treated unit and ``controls_per_version`` controls
of each version. With X_i and eps_ij independent standard normals, treated
outcomes are tau_b + X_i + eps, version-b controls X_i + eps and version-a
controls delta + X_i + eps, so the version effects are tau_b and tau_a = tau_b - delta.
"""
import math
from concurrent.futures import ProcessPoolExecutor
from itertools import repeat
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import stats

from .cohort import FullMatch, Version, VersionArm
from .config import NUMERIC
from .error_handler import DomainError
from .interval_engine import Interval, VersionData, interval_family
from .performance_monitor import perf_monitor
from .rand_test import NullMethod, NullSpec, StatisticSpec
from .utils import validate_alpha, worker_count

POWER_GRID_RATIOS: Tuple[float, ...] = (1.0, 0.95, 0.9, 0.75, 0.65, 0.6, 0.5, 0.25)
POWER_GRID_TAUBS: Tuple[float, ...] = (0.25, 0.4)


class SimDesign(BaseModel):
    model_config = ConfigDict(frozen=True)

    I: int = 100  # noqa: E741
    treated_per_set: int = 1
    controls_per_version: int = 2
    tau_b: float = 0.25
    delta: float = 0.0
    alpha: float = NUMERIC.alpha
    reps: int = 1000
    seed: int = 0
    null_method: NullMethod = NullMethod.NORMAL
    mc_draws: int = NUMERIC.min_mc_draws
    bonferroni: bool = False

    @model_validator(mode='after')
    def _check_design(self) -> "SimDesign":
        if self.I < 1:
            raise DomainError(f"I must be >= 1, got {self.I}", {'I': self.I})
        if self.reps < 1:
            raise DomainError(f"reps must be >= 1, got {self.reps}", {'reps': self.reps})
        if self.controls_per_version < 1:
            raise DomainError("each set needs at least one control of each version",
                              {'controls_per_version': self.controls_per_version})
        if self.treated_per_set != 1:
            # sets carry >= 2 controls, so a full match allows only one treated unit
            raise DomainError("sets with controls of both versions must have exactly one treated unit",
                              {'treated_per_set': self.treated_per_set})
        validate_alpha(self.alpha)
        if not (math.isfinite(self.tau_b) and math.isfinite(self.delta)):
            raise DomainError("tau_b and delta must be finite")
        return self

    @classmethod
    def from_ratio(cls, tau_b: float, ratio_a: float, **kwargs: object) -> "SimDesign":
        """Design with tau_a = ratio_a * tau_b"""
        return cls(tau_b=tau_b, delta=tau_b * (1.0 - ratio_a), **kwargs)

    @property
    def tau_a(self) -> float:
        return self.tau_b - self.delta

    @property
    def tau_min(self) -> float:
        return min(self.tau_a, self.tau_b)

    @property
    def tau_max(self) -> float:
        return max(self.tau_a, self.tau_b)

    @property
    def set_size(self) -> int:
        return self.treated_per_set + 2 * self.controls_per_version


class SimReport(BaseModel):
    design: SimDesign
    power_version_method: float
    power_f_test: float
    coverage_ic: Optional[float]
    coverage_iv: float
    joint_coverage: Optional[float]
    bonferroni_length_ratio: Optional[float] = None
    mc_se: Dict[str, float]


class ReplicateOutcome(NamedTuple):
    ic_excludes_zero: bool
    f_rejects: bool
    ic_covers_tau: bool
    iv_covers_range: bool
    iv_covers_ic_covers_tau: bool
    bonferroni_ratio: Optional[float]


def generate(d: SimDesign, rep: int) -> VersionData:
    """One simulated data set; identical for a given (seed, rep) whatever the scheduling"""
    rng = np.random.default_rng([d.seed, rep])
    size = d.set_size
    t, k = d.treated_per_set, d.controls_per_version

    x = rng.standard_normal(d.I)
    outcome = x[:, None] + rng.standard_normal((d.I, size))
    outcome[:, :t] += d.tau_b
    outcome[:, t:t + k] += d.delta

    treated = np.zeros((d.I, size), dtype=bool)
    treated[:, :t] = True
    version = np.zeros((d.I, size), dtype=np.int8)
    version[:, t:t + k] = 1
    version[:, t + k:] = 2

    labels = np.repeat(np.arange(d.I), size)
    all_controls = FullMatch.from_arrays(
        outcome=outcome.ravel(),
        treated=treated.ravel(),
        set_labels=labels,
        unit_ids=[f"{i}-{j}" for i in range(d.I) for j in range(size)],
        version=version.ravel(),
        covariates=np.repeat(x, size)[:, None],
        covariate_names=('x',),
        version_arm=VersionArm.CONTROL,
    )
    return VersionData(
        all=all_controls,
        only_a=all_controls.restrict_controls(Version.A),
        only_b=all_controls.restrict_controls(Version.B),
    )


def f_test(data: VersionData, alpha: float = NUMERIC.alpha) -> Tuple[float, bool]:
    """Omnibus F-test of equal treated / version-a / version-b means, adjusting linearly for X"""
    validate_alpha(alpha)
    match = data.all
    if match.covariates.shape[1] == 0:
        raise DomainError("the F-test needs the covariate X")

    y = match.outcome
    size = y.shape[0]
    intercept = np.ones(size)
    x = match.covariates[:, 0]
    group_a = ((~match.treated) & (match.version == 1)).astype(float)
    group_b = ((~match.treated) & (match.version == 2)).astype(float)
    if group_a.sum() == 0 or group_b.sum() == 0 or match.treated.sum() == 0:
        raise DomainError("the F-test needs treated units and controls of both versions")

    full = np.column_stack([intercept, group_a, group_b, x])
    reduced = np.column_stack([intercept, x])
    dof = size - 4
    if dof < 1 or np.linalg.matrix_rank(full) < 4:
        raise DomainError("the F-test design matrix is rank deficient", {'N': size})

    rss_full = _rss(full, y)
    rss_reduced = _rss(reduced, y)
    eps = 1e-12 * max(1.0, float(np.dot(y, y)))
    numerator = max(rss_reduced - rss_full, 0.0) / 2.0
    if rss_full <= eps:
        statistic = 0.0 if numerator <= eps else math.inf
    else:
        statistic = numerator / (rss_full / dof)

    critical = float(stats.f.isf(alpha, 2, dof))
    return statistic, bool(statistic > critical)


def _rss(design: np.ndarray, y: np.ndarray) -> float:
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    residual = y - design @ coef
    return float(np.dot(residual, residual))


def _replicate(d: SimDesign, rep: int) -> ReplicateOutcome:
    data = generate(d, rep)
    spec = StatisticSpec()
    null = NullSpec(method=d.null_method, draws=d.mc_draws, seed=d.seed + rep)
    family = interval_family(data, d.alpha, spec, null, parallel=False, bonferroni=d.bonferroni)
    _, rejects = f_test(data, d.alpha)

    target = Interval(lo=d.tau_min, hi=d.tau_max, alpha=d.alpha, label=family.iv.label)
    return ReplicateOutcome(
        ic_excludes_zero=not family.ic.contains(0.0),
        f_rejects=rejects,
        ic_covers_tau=family.ic.contains(d.tau_b),
        iv_covers_range=family.iv.covers(target),
        iv_covers_ic_covers_tau=family.iv.covers(family.ic) and family.ic.contains(d.tau_b),
        bonferroni_ratio=family.bonferroni_length_ratio,
    )


def _rate(flags: Sequence[bool]) -> Tuple[float, float]:
    p = float(np.mean(flags))
    return p, math.sqrt(p * (1.0 - p) / len(flags))


def power_study(d: SimDesign) -> SimReport:
    """Power of the version method (0 outside I_c) and of the F-test, with coverage of I_c and I_v"""
    workers = worker_count()
    perf_monitor.start_operation('power_study')
    if workers > 1 and d.reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes: List[ReplicateOutcome] = list(
                pool.map(_replicate, repeat(d), range(d.reps), chunksize=max(1, d.reps // (4 * workers)))
            )
    else:
        outcomes = [_replicate(d, rep) for rep in range(d.reps)]
    perf_monitor.end_operation('power_study', {'reps': d.reps, 'workers': workers})

    power_version, se_version = _rate([o.ic_excludes_zero for o in outcomes])
    power_f, se_f = _rate([o.f_rejects for o in outcomes])
    coverage_iv, se_iv = _rate([o.iv_covers_range for o in outcomes])
    mc_se = {'power_version_method': se_version, 'power_f_test': se_f, 'coverage_iv': se_iv}

    coverage_ic = joint = None
    if d.delta == 0.0:
        coverage_ic, mc_se['coverage_ic'] = _rate([o.ic_covers_tau for o in outcomes])
        joint, mc_se['joint_coverage'] = _rate([o.iv_covers_ic_covers_tau for o in outcomes])

    ratio = None
    if d.bonferroni:
        finite = [o.bonferroni_ratio for o in outcomes
                  if o.bonferroni_ratio is not None and math.isfinite(o.bonferroni_ratio)]
        ratio = float(np.mean(finite)) if finite else None

    logger.info(f"Power study tau_b={d.tau_b} tau_a={d.tau_a}: version {power_version:.3f}, F {power_f:.3f}")
    return SimReport(
        design=d,
        power_version_method=power_version,
        power_f_test=power_f,
        coverage_ic=coverage_ic,
        coverage_iv=coverage_iv,
        joint_coverage=joint,
        bonferroni_length_ratio=ratio,
        mc_se=mc_se,
    )


def report_row(report: SimReport) -> Dict[str, object]:
    d = report.design
    return {
        'tau_b': d.tau_b,
        'ratio_a': d.tau_a / d.tau_b if d.tau_b != 0 else None,
        'tau_a': d.tau_a,
        'delta': d.delta,
        'power_version': report.power_version_method,
        'power_f': report.power_f_test,
        'coverage_ic': report.coverage_ic,
        'coverage_iv': report.coverage_iv,
        'joint_coverage': report.joint_coverage,
        'mc_se_version': report.mc_se['power_version_method'],
        'mc_se_f': report.mc_se['power_f_test'],
        'reps': d.reps,
    }


def power_grid(taubs: Sequence[float] = POWER_GRID_TAUBS, ratios: Sequence[float] = POWER_GRID_RATIOS,
                reps: int = 1000, seed: int = 0, alpha: float = NUMERIC.alpha,
                null_method: NullMethod = NullMethod.NORMAL) -> pd.DataFrame:
    """Version-method and F-test power over tau_b x (tau_a / tau_b)"""
    rows = []
    for tau_b in taubs:
        for ratio in ratios:
            design = SimDesign.from_ratio(tau_b, ratio, reps=reps, seed=seed, alpha=alpha,
                                          null_method=null_method)
            row = report_row(power_study(design))
            row['ratio_a'] = ratio
            rows.append(row)
    return pd.DataFrame(rows)
