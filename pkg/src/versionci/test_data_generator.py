from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .cohort import Cohort, FullMatch, MatchedSet, Unit, Version, VersionArm
from .cohort_loader import write_csv

# (treated, controls) -> number of sets of a large all-controls match
REFERENCE_STRUCTURE: Dict[Tuple[int, int], int] = {
    (1, 1): 401, (1, 2): 32, (1, 3): 26, (1, 4): 14, (1, 5): 17, (1, 6): 101,
}


class TestDataGenerator:
    """Generate seeded synthetic cohorts and matches for testing"""

    __test__ = False

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.covariate_names = ('age', 'education')

    def _rng(self, offset: int = 0) -> np.random.Generator:
        return np.random.default_rng([self.seed, offset])

    def structured_cohort(self, structure: Dict[Tuple[int, int], int], effect: float = 0.0,
                          offset: int = 0) -> Cohort:
        """Matched cohort with the given count of (treated, controls) set structures"""
        rng = self._rng(offset)
        units: List[Unit] = []
        sets: List[MatchedSet] = []
        set_id = 0
        for (treated, controls), count in structure.items():
            for _ in range(count):
                set_id += 1
                level = rng.normal()
                members = []
                for j in range(treated + controls):
                    is_treated = j < treated
                    unit = Unit(
                        id=f"s{set_id}u{j}",
                        treated=is_treated,
                        version=None if is_treated else (Version.A if rng.random() < 0.5 else Version.B),
                        outcome=float(level + rng.normal() + (effect if is_treated else 0.0)),
                        covariates=tuple(float(v) for v in level + 0.1 * rng.normal(size=2)),
                    )
                    units.append(unit)
                    members.append(unit.id)
                sets.append(MatchedSet(set_id=set_id, member_ids=tuple(members), m=treated, n=len(members)))
        return Cohort(units=tuple(units), sets=tuple(sets), covariate_names=self.covariate_names,
                      version_arm=VersionArm.CONTROL, has_versions=True)

    def reference_cohort(self) -> Cohort:
        """Cohort with the set structure of the all-controls match: I=591, N=1881, M=591"""
        return self.structured_cohort(REFERENCE_STRUCTURE)

    def confounded_cohort(self, n_treated: int = 30, n_controls: int = 90, shift: float = 0.8,
                          effect: float = 0.5, offset: int = 1) -> Cohort:
        """Unmatched cohort whose treated covariates are shifted by ``shift``"""
        rng = self._rng(offset)
        units = []
        for i in range(n_treated + n_controls):
            treated = i < n_treated
            x = rng.normal(size=2) + (shift if treated else 0.0)
            units.append(Unit(
                id=f"u{i:04d}",
                treated=treated,
                version=None if treated else (Version.A if i % 2 == 0 else Version.B),
                outcome=float(x.sum() + rng.normal() + (effect if treated else 0.0)),
                covariates=(float(x[0]), float(x[1])),
            ))
        return Cohort(units=tuple(units), covariate_names=self.covariate_names,
                      version_arm=VersionArm.CONTROL, has_versions=True)

    def random_full_match(self, sets: int = 5, max_size: int = 3, effect: float = 0.0,
                          offset: int = 2) -> FullMatch:
        """Random full match mixing one-treated and one-control sets of size 2..max_size"""
        rng = self._rng(offset)
        outcome: List[float] = []
        treated: List[bool] = []
        labels: List[int] = []
        for i in range(sets):
            size = int(rng.integers(2, max_size + 1))
            many_treated = size > 2 and rng.random() < 0.3
            for j in range(size):
                is_treated = (j > 0) if many_treated else (j == 0)
                treated.append(is_treated)
                outcome.append(float(rng.normal() + (effect if is_treated else 0.0)))
                labels.append(i)
        return FullMatch.from_arrays(outcome, treated, labels)

    def pairs(self, n_pairs: int = 30, effect: float = 0.0, noise: float = 1.0,
              offset: int = 3) -> FullMatch:
        rng = self._rng(offset)
        control = rng.normal(size=n_pairs)
        treated_outcome = control + effect + noise * rng.normal(size=n_pairs)
        outcome = np.column_stack([treated_outcome, control]).ravel()
        flags = np.tile([True, False], n_pairs)
        return FullMatch.from_arrays(outcome, flags, np.repeat(np.arange(n_pairs), 2))

    def version_cohorts(self, sets: int = 40, controls_per_version: int = 2, tau_b: float = 0.3,
                        delta: float = 0.0, offset: int = 4) -> Dict[str, Cohort]:
        """Three matched cohorts over the same treated units: all controls, version A only, version B only"""
        rng = self._rng(offset)
        units: List[Unit] = []
        members: Dict[str, List[Tuple[int, List[str]]]] = {'all': [], 'a': [], 'b': []}
        for i in range(1, sets + 1):
            x = rng.normal()
            ids = {'t': [f"t{i}"], 'a': [], 'b': []}
            units.append(Unit(id=f"t{i}", treated=True, outcome=float(tau_b + x + rng.normal()),
                              covariates=(x, float(rng.normal()))))
            for version, key, shift in ((Version.A, 'a', delta), (Version.B, 'b', 0.0)):
                for j in range(controls_per_version):
                    unit_id = f"c{i}{key}{j}"
                    units.append(Unit(id=unit_id, treated=False, version=version,
                                      outcome=float(shift + x + rng.normal()),
                                      covariates=(x, float(rng.normal()))))
                    ids[key].append(unit_id)
            members['all'].append((i, ids['t'] + ids['a'] + ids['b']))
            members['a'].append((i, ids['t'] + ids['a']))
            members['b'].append((i, ids['t'] + ids['b']))

        cohorts = {}
        for name, groups in members.items():
            keep = {uid for _, group in groups for uid in group}
            cohorts[name] = Cohort(
                units=tuple(u for u in units if u.id in keep),
                sets=tuple(MatchedSet(set_id=i, member_ids=tuple(g), m=1, n=len(g)) for i, g in groups),
                covariate_names=self.covariate_names,
                version_arm=VersionArm.CONTROL,
                has_versions=True,
            )
        return cohorts

    def write_version_fixtures(self, directory: Path, **kwargs: object) -> Dict[str, Path]:
        """CSV files all.csv, a.csv, b.csv for the three matched cohorts"""
        directory.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, cohort in self.version_cohorts(**kwargs).items():  # type: ignore[arg-type]
            paths[name] = directory / f"{name}.csv"
            write_csv(cohort, paths[name])
        return paths

    def cohort_frame(self, rows: Optional[Sequence[Dict[str, object]]] = None) -> pd.DataFrame:
        """Small raw cohort table for validation tests"""
        if rows is None:
            rows = [
                {'id': 'p1', 'treated': 1, 'version': None, 'outcome': 2.0, 'age': 20.0, 'set_id': 1},
                {'id': 'p2', 'treated': 0, 'version': 'A', 'outcome': 1.0, 'age': 21.0, 'set_id': 1},
                {'id': 'p3', 'treated': 1, 'version': None, 'outcome': 3.0, 'age': 30.0, 'set_id': 2},
                {'id': 'p4', 'treated': 0, 'version': 'B', 'outcome': 1.5, 'age': 31.0, 'set_id': 2},
                {'id': 'p5', 'treated': 0, 'version': 'A', 'outcome': 0.5, 'age': 29.0, 'set_id': 2},
            ]
        return pd.DataFrame(list(rows), columns=['id', 'treated', 'version', 'outcome', 'age', 'set_id'])
