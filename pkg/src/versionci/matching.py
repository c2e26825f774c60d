"""Optimal full matching by minimum-cost network flow.

A full match whose sets each hold one treated unit or one control is a forest
of stars on the bipartite treated/control graph, and its cost (the sum of all
within-set treated-control distances) is the sum of the star edges. The
optimal full match under ratio bounds is therefore a minimum-cost edge cover
in which every unit has degree at least 1, treated degree is at most
``max_controls_per_treated`` and control degree at most
``max_treated_per_control``. The cover is found as a min-cost circulation
with unit lower bounds and then pruned to a star forest.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial.distance import cdist

from .cohort import Cohort, MatchedSet
from .config import NUMERIC
from .debug_logger import debug_logger
from .error_handler import CohortValidationError, InfeasibleMatchError


class RatioConstraint(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_controls_per_treated: int = Field(default=6, ge=1)
    max_treated_per_control: int = Field(default=6, ge=1)


@dataclass(frozen=True)
class DistanceMatrix:
    """Treated-by-control distances; ``np.inf`` marks a forbidden pair"""

    rows: Tuple[str, ...]
    cols: Tuple[str, ...]
    d: np.ndarray

    def __post_init__(self) -> None:
        if self.d.shape != (len(self.rows), len(self.cols)):
            raise ValueError(f"distance shape {self.d.shape} does not match {len(self.rows)}x{len(self.cols)}")
        finite = np.isfinite(self.d)
        if np.any(self.d[finite] < 0) or np.any(np.isnan(self.d)):
            raise ValueError("distances must be nonnegative, finite or +inf")

    def with_caliper(self, caliper: Optional[float]) -> "DistanceMatrix":
        """Forbid every pair farther apart than ``caliper``"""
        if caliper is None:
            return self
        d = np.where(self.d > caliper, np.inf, self.d)
        logger.info(f"Caliper {caliper} forbids {int(np.isinf(d).sum() - np.isinf(self.d).sum())} pairs")
        return DistanceMatrix(self.rows, self.cols, d)


@dataclass(frozen=True)
class MatchResult:
    sets: Tuple[MatchedSet, ...]
    total_cost: float

    def apply(self, cohort: Cohort) -> Cohort:
        return cohort.with_sets(self.sets)


def pooled_covariance(treated: np.ndarray, control: np.ndarray) -> np.ndarray:
    """Pooled within-group covariance, ridge-regularized when singular"""
    k = treated.shape[1]
    dof = treated.shape[0] + control.shape[0] - 2
    scatter = np.zeros((k, k))
    for group in (treated, control):
        if group.shape[0] > 1:
            centered = group - group.mean(axis=0)
            scatter += centered.T @ centered
    cov = scatter / dof if dof > 0 else scatter

    if np.linalg.matrix_rank(cov) < k:
        trace = float(np.trace(cov))
        ridge = NUMERIC.covariance_ridge * trace / k if trace > 0 else 1.0
        debug_logger.log_warning(
            f"Singular covariate covariance; adding {ridge:.3g} to the diagonal",
            "mahalanobis_distances",
        )
        cov = cov + ridge * np.eye(k)
        if np.linalg.matrix_rank(cov) < k:
            cov = cov + np.eye(k)
    return cov


def mahalanobis_distances(cohort: Cohort) -> DistanceMatrix:
    """Mahalanobis distances between treated rows and control columns (pooled within-group covariance)"""
    if not cohort.covariate_names:
        raise CohortValidationError("no covariates to match on")
    treated_units = [u for u in cohort.units if u.treated]
    control_units = [u for u in cohort.units if not u.treated]
    if not treated_units or not control_units:
        raise InfeasibleMatchError(
            "matching needs at least one treated unit and one control",
            {'treated': len(treated_units), 'controls': len(control_units)},
        )

    xt = np.array([u.covariates for u in treated_units], dtype=float)
    xc = np.array([u.covariates for u in control_units], dtype=float)
    inverse = np.linalg.inv(pooled_covariance(xt, xc))
    d = cdist(xt, xc, metric='mahalanobis', VI=inverse)
    return DistanceMatrix(
        rows=tuple(u.id for u in treated_units),
        cols=tuple(u.id for u in control_units),
        d=d,
    )


def check_feasibility(n_treated: int, n_controls: int, ratio: RatioConstraint) -> None:
    if n_treated == 0 or n_controls == 0:
        raise InfeasibleMatchError("empty arm: nothing to match",
                                   {'treated': n_treated, 'controls': n_controls})
    if n_controls > ratio.max_controls_per_treated * n_treated:
        raise InfeasibleMatchError(
            f"{n_controls} controls cannot be placed with {n_treated} treated at "
            f"max {ratio.max_controls_per_treated} controls per treated",
            {'treated': n_treated, 'controls': n_controls},
        )
    if n_treated > ratio.max_treated_per_control * n_controls:
        raise InfeasibleMatchError(
            f"{n_treated} treated cannot be placed with {n_controls} controls at "
            f"max {ratio.max_treated_per_control} treated per control",
            {'treated': n_treated, 'controls': n_controls},
        )


def _build_network(d: np.ndarray, ratio: RatioConstraint) -> nx.DiGraph:
    n_treated, n_controls = d.shape
    graph = nx.DiGraph()
    # unit lower bounds moved into node demands; the sink-to-source arc closes the circulation
    graph.add_node('source', demand=n_treated)
    graph.add_node('sink', demand=-n_controls)
    for i in range(n_treated):
        graph.add_node(('t', i), demand=-1)
    for j in range(n_controls):
        graph.add_node(('c', j), demand=1)

    for i in range(n_treated):
        if ratio.max_controls_per_treated > 1:
            graph.add_edge('source', ('t', i), capacity=ratio.max_controls_per_treated - 1, weight=0)
        for j in range(n_controls):
            if np.isfinite(d[i, j]):
                cost = int(round(d[i, j] * NUMERIC.cost_scale))
                graph.add_edge(('t', i), ('c', j), capacity=1, weight=cost)
    for j in range(n_controls):
        if ratio.max_treated_per_control > 1:
            graph.add_edge(('c', j), 'sink', capacity=ratio.max_treated_per_control - 1, weight=0)
    graph.add_edge('sink', 'source', weight=0)
    return graph


def _prune_to_stars(edges: List[Tuple[int, int]], d: np.ndarray) -> List[Tuple[int, int]]:
    """Drop edges joining two units of degree >= 2 until every component is a star"""
    edges = sorted(edges, key=lambda e: (-d[e], e))
    treated_degree: Dict[int, int] = {}
    control_degree: Dict[int, int] = {}
    for i, j in edges:
        treated_degree[i] = treated_degree.get(i, 0) + 1
        control_degree[j] = control_degree.get(j, 0) + 1

    kept = []
    for i, j in edges:
        if treated_degree[i] > 1 and control_degree[j] > 1:
            treated_degree[i] -= 1
            control_degree[j] -= 1
            continue
        kept.append((i, j))
    return sorted(kept)


def _stars_to_sets(edges: List[Tuple[int, int]], rows: Sequence[str],
                   cols: Sequence[str]) -> Tuple[MatchedSet, ...]:
    treated_degree: Dict[int, int] = {}
    for i, _ in edges:
        treated_degree[i] = treated_degree.get(i, 0) + 1

    groups: Dict[Tuple[str, int], List[Tuple[int, int]]] = {}
    for i, j in edges:
        center = ('t', i) if treated_degree[i] > 1 else ('c', j)
        groups.setdefault(center, []).append((i, j))

    ordered = sorted(groups.values(), key=lambda g: (min(i for i, _ in g), min(j for _, j in g)))
    sets = []
    for set_id, group in enumerate(ordered, start=1):
        treated_ids = sorted({i for i, _ in group})
        control_ids = sorted({j for _, j in group})
        members = tuple(rows[i] for i in treated_ids) + tuple(cols[j] for j in control_ids)
        sets.append(MatchedSet(set_id=set_id, member_ids=members, m=len(treated_ids), n=len(members)))
    return tuple(sets)


def optimal_full_match(distances: DistanceMatrix, ratio: Optional[RatioConstraint] = None) -> MatchResult:
    """Optimal full match minimizing the sum of within-set treated-control distances.

    Ties are broken by the network simplex over arcs inserted in (treated, control) order.
    Costs are scaled by 1e6 and rounded, so optima are exact to 1e-6 distance units.
    """
    ratio = ratio or RatioConstraint()
    d = distances.d
    n_treated, n_controls = d.shape
    check_feasibility(n_treated, n_controls, ratio)

    allowed = np.isfinite(d)
    orphans = [distances.rows[i] for i in np.where(~allowed.any(axis=1))[0]]
    orphans += [distances.cols[j] for j in np.where(~allowed.any(axis=0))[0]]
    if orphans:
        raise InfeasibleMatchError(
            f"{len(orphans)} unit(s) have no permitted partner under the caliper",
            {'units': orphans[:20]},
        )

    graph = _build_network(d, ratio)
    try:
        flow = nx.min_cost_flow(graph)
    except nx.NetworkXUnfeasible as e:
        raise InfeasibleMatchError(
            "no full match satisfies the ratio constraint with the permitted pairs",
            {'treated': n_treated, 'controls': n_controls},
        ) from e

    edges = [(i, j) for i in range(n_treated) for j in range(n_controls)
             if flow[('t', i)].get(('c', j), 0) > 0]
    edges = _prune_to_stars(edges, d)
    sets = _stars_to_sets(edges, distances.rows, distances.cols)
    total_cost = float(sum(d[i, j] for i, j in edges))

    logger.info(f"Full match: {len(sets)} sets from {n_treated} treated and {n_controls} controls, "
                f"cost {total_cost:.6f}")
    return MatchResult(sets=sets, total_cost=total_cost)


def full_match_cohort(cohort: Cohort, ratio: Optional[RatioConstraint] = None,
                      caliper: Optional[float] = None) -> Tuple[Cohort, MatchResult]:
    """Mahalanobis distances, optional caliper, optimal full match, sets attached to the cohort"""
    distances = mahalanobis_distances(cohort).with_caliper(caliper)
    result = optimal_full_match(distances, ratio)
    return result.apply(cohort.without_sets()), result


def match_cost(sets: Sequence[MatchedSet], distances: DistanceMatrix) -> float:
    """Sum of all within-set treated-control distances of an arbitrary full match"""
    row = {uid: i for i, uid in enumerate(distances.rows)}
    col = {uid: j for j, uid in enumerate(distances.cols)}
    total = 0.0
    for matched_set in sets:
        treated = [row[u] for u in matched_set.member_ids if u in row]
        controls = [col[u] for u in matched_set.member_ids if u in col]
        total += float(distances.d[np.ix_(treated, controls)].sum())
    return total
