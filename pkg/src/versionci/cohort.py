"""Data model for matched observational cohorts with version labels.

``Cohort`` is the validated, immutable record of units and (optionally) matched
sets. ``FullMatch`` is the array view of the matched part of a cohort that the
inference modules compute with.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .error_handler import CohortValidationError


class Version(str, Enum):
    A = "A"
    B = "B"


class VersionArm(str, Enum):
    """Which arm carries the version labels"""
    CONTROL = "control"
    TREATED = "treated"


VERSION_CODES = {None: 0, Version.A: 1, Version.B: 2}


class Unit(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    treated: bool
    version: Optional[Version] = None
    outcome: float
    covariates: Tuple[float, ...] = ()

    @field_validator('outcome')
    @classmethod
    def _finite_outcome(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("outcome must be finite")
        return value


def violation_message(set_id: object, m: int, n: int) -> Optional[str]:
    """Return the full-match violation message for a set of size (m, n), or None"""
    if n < 2 or m < 1 or m > n - 1 or min(m, n - m) != 1:
        return f"set {set_id} violates min(m, n−m)=1 (m={m}, n={n})"
    return None


class MatchedSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    set_id: int
    member_ids: Tuple[str, ...]
    m: int
    n: int

    @model_validator(mode='after')
    def _full_match_property(self) -> "MatchedSet":
        if self.n != len(self.member_ids):
            raise CohortValidationError(
                f"set {self.set_id} lists {len(self.member_ids)} members but n={self.n}",
                {'set_id': self.set_id},
            )
        message = violation_message(self.set_id, self.m, self.n)
        if message:
            raise CohortValidationError(message, {'set_id': self.set_id, 'm': self.m, 'n': self.n})
        return self

    @property
    def structure(self) -> str:
        """Table-style label, treated count first: '1-3', '2-1'"""
        return f"{self.m}-{self.n - self.m}"


class Cohort(BaseModel):
    """Units plus optional matched sets.

    Invariants checked on construction: unique unit ids, every set member is a
    unit, no unit in two sets, set treated counts agree with the units, version
    labels only on the version-carrying arm, one covariate value per name.
    """

    model_config = ConfigDict(frozen=True)

    units: Tuple[Unit, ...]
    sets: Optional[Tuple[MatchedSet, ...]] = None
    covariate_names: Tuple[str, ...] = ()
    version_arm: VersionArm = VersionArm.CONTROL
    has_versions: bool = False

    @model_validator(mode='after')
    def _check_invariants(self) -> "Cohort":
        by_id: Dict[str, Unit] = {}
        for unit in self.units:
            if unit.id in by_id:
                raise CohortValidationError(f"duplicate unit id {unit.id!r}", {'id': unit.id})
            by_id[unit.id] = unit
            if len(unit.covariates) != len(self.covariate_names):
                raise CohortValidationError(
                    f"unit {unit.id!r} has {len(unit.covariates)} covariates, "
                    f"expected {len(self.covariate_names)}",
                    {'id': unit.id},
                )
            on_version_arm = unit.treated == (self.version_arm == VersionArm.TREATED)
            if unit.version is not None and not on_version_arm:
                raise CohortValidationError(
                    f"unit {unit.id!r} carries a version on the {('treated' if unit.treated else 'control')} "
                    f"arm, but versions sit on the {self.version_arm.value} arm",
                    {'id': unit.id},
                )
            if self.has_versions and on_version_arm and unit.version is None:
                raise CohortValidationError(
                    f"unit {unit.id!r} on the version arm has no version label", {'id': unit.id}
                )

        if self.sets is not None:
            seen: Dict[str, int] = {}
            for matched_set in self.sets:
                treated_count = 0
                for member in matched_set.member_ids:
                    if member not in by_id:
                        raise CohortValidationError(
                            f"set {matched_set.set_id} references unknown unit {member!r}",
                            {'set_id': matched_set.set_id},
                        )
                    if member in seen:
                        raise CohortValidationError(
                            f"unit {member!r} belongs to sets {seen[member]} and {matched_set.set_id}",
                            {'id': member},
                        )
                    seen[member] = matched_set.set_id
                    treated_count += int(by_id[member].treated)
                if treated_count != matched_set.m:
                    raise CohortValidationError(
                        f"set {matched_set.set_id} declares m={matched_set.m} but has "
                        f"{treated_count} treated units",
                        {'set_id': matched_set.set_id},
                    )
        return self

    @property
    def I(self) -> int:  # noqa: E743
        return len(self.sets) if self.sets is not None else 0

    @property
    def N(self) -> int:
        return sum(s.n for s in self.sets) if self.sets is not None else 0

    @property
    def M(self) -> int:
        return sum(s.m for s in self.sets) if self.sets is not None else 0

    def unit_map(self) -> Dict[str, Unit]:
        return {unit.id: unit for unit in self.units}

    def set_lookup(self) -> Dict[str, int]:
        """unit id -> set id for matched units"""
        lookup: Dict[str, int] = {}
        for matched_set in self.sets or ():
            for member in matched_set.member_ids:
                lookup[member] = matched_set.set_id
        return lookup

    def with_sets(self, sets: Iterable[MatchedSet]) -> "Cohort":
        return Cohort(
            units=self.units,
            sets=tuple(sets),
            covariate_names=self.covariate_names,
            version_arm=self.version_arm,
            has_versions=self.has_versions,
        )

    def without_sets(self) -> "Cohort":
        return self.model_copy(update={'sets': None})

    def covariate_matrix(self, treated: Optional[bool] = None) -> np.ndarray:
        units = [u for u in self.units if treated is None or u.treated == treated]
        return np.array([u.covariates for u in units], dtype=float).reshape(len(units), len(self.covariate_names))


def sets_from_labels(units: Sequence[Unit], labels: Sequence[Optional[int]]) -> Tuple[MatchedSet, ...]:
    """Build MatchedSet records from a per-unit set label (None = unmatched), in label order"""
    members: Dict[int, List[Unit]] = {}
    for unit, label in zip(units, labels):
        if label is None:
            continue
        members.setdefault(int(label), []).append(unit)
    return tuple(
        MatchedSet(
            set_id=set_id,
            member_ids=tuple(u.id for u in group),
            m=sum(u.treated for u in group),
            n=len(group),
        )
        for set_id, group in sorted(members.items())
    )


@dataclass(frozen=True)
class FullMatch:
    """Array view of a full match, units stored contiguously by set.

    ``offsets[i]:offsets[i + 1]`` indexes the members of set ``i``.
    """

    outcome: np.ndarray
    treated: np.ndarray
    set_index: np.ndarray
    offsets: np.ndarray
    m: np.ndarray
    n: np.ndarray
    set_ids: Tuple[object, ...]
    unit_ids: Tuple[str, ...]
    version: np.ndarray
    covariates: np.ndarray
    covariate_names: Tuple[str, ...] = ()
    version_arm: VersionArm = VersionArm.CONTROL

    @classmethod
    def from_arrays(cls, outcome: Sequence[float], treated: Sequence[bool], set_labels: Sequence[object],
                    unit_ids: Optional[Sequence[str]] = None, version: Optional[Sequence[int]] = None,
                    covariates: Optional[np.ndarray] = None, covariate_names: Sequence[str] = (),
                    version_arm: VersionArm = VersionArm.CONTROL) -> "FullMatch":
        outcome_arr = np.asarray(outcome, dtype=float)
        treated_arr = np.asarray(treated, dtype=bool)
        labels = np.asarray(set_labels)
        size = outcome_arr.shape[0]
        if treated_arr.shape[0] != size or labels.shape[0] != size:
            raise CohortValidationError("outcome, treated and set labels must have equal length")
        if not np.all(np.isfinite(outcome_arr)):
            raise CohortValidationError("outcomes must be finite")
        ids = tuple(str(u) for u in unit_ids) if unit_ids is not None else tuple(str(i) for i in range(size))
        version_arr = (np.zeros(size, dtype=np.int8) if version is None
                       else np.asarray(version, dtype=np.int8))
        cov = (np.zeros((size, 0)) if covariates is None
               else np.asarray(covariates, dtype=float).reshape(size, -1))

        # sets numbered in order of first appearance
        uniq, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
        rank = np.empty(len(uniq), dtype=np.int64)
        rank[np.argsort(first, kind='stable')] = np.arange(len(uniq))
        set_index = rank[inverse.reshape(-1)]
        order = np.argsort(set_index, kind='stable')
        set_index = set_index[order]

        set_count = len(uniq)
        n = np.bincount(set_index, minlength=set_count)
        m = np.bincount(set_index, weights=treated_arr[order].astype(float), minlength=set_count).astype(np.int64)
        original_ids = tuple(uniq[np.argsort(first, kind='stable')].tolist())
        for i in range(set_count):
            message = violation_message(original_ids[i], int(m[i]), int(n[i]))
            if message:
                raise CohortValidationError(message, {'set_id': original_ids[i], 'm': int(m[i]), 'n': int(n[i])})

        offsets = np.concatenate([[0], np.cumsum(n)])
        return cls(
            outcome=outcome_arr[order],
            treated=treated_arr[order],
            set_index=set_index,
            offsets=offsets,
            m=m,
            n=n,
            set_ids=original_ids,
            unit_ids=tuple(ids[j] for j in order),
            version=version_arr[order],
            covariates=cov[order],
            covariate_names=tuple(covariate_names),
            version_arm=version_arm,
        )

    @classmethod
    def from_cohort(cls, cohort: Cohort) -> "FullMatch":
        if not cohort.sets:
            raise CohortValidationError("cohort has no matched sets; run matching first")
        units = cohort.unit_map()
        matched = [(units[member], s.set_id) for s in cohort.sets for member in s.member_ids]
        return cls.from_arrays(
            outcome=[u.outcome for u, _ in matched],
            treated=[u.treated for u, _ in matched],
            set_labels=[set_id for _, set_id in matched],
            unit_ids=[u.id for u, _ in matched],
            version=[VERSION_CODES[u.version] for u, _ in matched],
            covariates=np.array([u.covariates for u, _ in matched], dtype=float),
            covariate_names=cohort.covariate_names,
            version_arm=cohort.version_arm,
        )

    @property
    def I(self) -> int:  # noqa: E743
        return int(self.m.shape[0])

    @property
    def N(self) -> int:
        return int(self.n.sum())

    @property
    def M(self) -> int:
        return int(self.m.sum())

    def set_sums(self, values: np.ndarray) -> np.ndarray:
        """Sum ``values`` (one per unit) within each set"""
        return np.add.reduceat(values, self.offsets[:-1])

    def set_slices(self) -> List[slice]:
        return [slice(int(a), int(b)) for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def restrict_controls(self, version: Version) -> "FullMatch":
        """Keep the non-version arm plus version-``version`` units of the version arm, within sets"""
        on_version_arm = self.treated == (self.version_arm == VersionArm.TREATED)
        keep = ~on_version_arm | (self.version == VERSION_CODES[version])
        return FullMatch.from_arrays(
            outcome=self.outcome[keep],
            treated=self.treated[keep],
            set_labels=self.set_index[keep],
            unit_ids=[uid for uid, k in zip(self.unit_ids, keep) if k],
            version=self.version[keep],
            covariates=self.covariates[keep],
            covariate_names=self.covariate_names,
            version_arm=self.version_arm,
        )
