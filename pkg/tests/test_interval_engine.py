import math

import numpy as np
import pytest

from versionci import rand_test
from versionci.cohort import FullMatch
from versionci.error_handler import CohortValidationError, DomainError, NonMonotoneInversionError
from versionci.interval_engine import (
    Interval,
    IntervalLabel,
    VersionData,
    bonferroni_family,
    hull,
    interval_family,
    invert,
    length_ratio,
)
from versionci.rand_test import NullMethod, NullSpec, StatisticKind, StatisticSpec
from versionci.sim_lab import SimDesign, generate

NORMAL = NullSpec(method=NullMethod.NORMAL)
RANDOM_COHORTS = SimDesign(I=20, tau_b=0.3, delta=0.2, seed=17)


def _grid_interval(match, alpha, lo, hi, step=1e-3):
    grid = np.arange(lo, hi + step, step)
    accepted = [
        tau for tau in grid
        if min(rand_test.test(match, float(tau), null=NORMAL).p_upper,
               rand_test.test(match, float(tau), null=NORMAL).p_lower) > alpha / 2
    ]
    return min(accepted), max(accepted)


@pytest.mark.unit
class TestInterval:
    def test_reversed_endpoints_rejected(self):
        with pytest.raises(DomainError):
            Interval(lo=1.0, hi=0.0, alpha=0.05, label=IntervalLabel.IC)

    def test_alpha_out_of_range(self):
        with pytest.raises(DomainError):
            Interval(lo=0.0, hi=1.0, alpha=1.0, label=IntervalLabel.IC)

    def test_one_sided_views(self):
        interval = Interval(lo=-0.5, hi=0.25, alpha=0.05, label=IntervalLabel.IA)
        assert interval.lower_one_sided == (-0.5, math.inf)
        assert interval.upper_one_sided == (-math.inf, 0.25)
        assert interval.length == 0.75
        assert interval.contains(0.0) and not interval.contains(0.3)

    def test_hull(self):
        a = Interval(lo=-0.357, hi=0.1, alpha=0.05, label=IntervalLabel.IA)
        b = Interval(lo=-0.2, hi=0.219, alpha=0.05, label=IntervalLabel.IB)
        joined = hull([a, b], IntervalLabel.ISTAR)
        assert (joined.lo, joined.hi) == (-0.357, 0.219)
        assert joined.covers(a) and joined.covers(b)
        assert joined.label == IntervalLabel.ISTAR

    def test_length_ratio(self):
        short = Interval(lo=0.0, hi=1.0, alpha=0.05, label=IntervalLabel.IC)
        long = Interval(lo=-1.0, hi=1.0, alpha=0.05, label=IntervalLabel.BONFERRONI_ALL)
        unbounded = Interval(lo=-math.inf, hi=1.0, alpha=0.05, label=IntervalLabel.IV)
        assert length_ratio(long, short) == 2.0
        assert length_ratio(unbounded, short) == math.inf
        assert math.isnan(length_ratio(unbounded, unbounded))


@pytest.mark.unit
class TestInvert:
    def test_nearly_noiseless_pairs_recover_effect(self, generator):
        match = generator.pairs(n_pairs=50, effect=0.7, noise=0.01)
        interval = invert(match, null=NORMAL)
        assert interval.contains(rand_test.point_estimate(match))
        assert 0.69 < interval.lo <= interval.hi < 0.71

    def test_agrees_with_grid_search(self, generator):
        for offset in range(20):
            match = generator.pairs(n_pairs=30, effect=0.4, offset=200 + offset)
            interval = invert(match, null=NORMAL)
            lo, hi = _grid_interval(match, 0.05, interval.lo - 0.05, interval.hi + 0.05)
            assert interval.lo == pytest.approx(lo, abs=2e-3)
            assert interval.hi == pytest.approx(hi, abs=2e-3)

    def test_nested_in_alpha(self, generator):
        match = generator.random_full_match(sets=40, max_size=5, effect=0.3, offset=21)
        wide, middle, narrow = (invert(match, alpha, null=NORMAL) for alpha in (0.01, 0.05, 0.2))
        assert wide.lo <= middle.lo + 1e-3 and middle.hi <= wide.hi + 1e-3
        assert middle.lo <= narrow.lo + 1e-3 and narrow.hi <= middle.hi + 1e-3

    def test_translation_equivariance(self, generator):
        match = generator.random_full_match(sets=30, max_size=4, effect=0.2, offset=22)
        shifted = FullMatch.from_arrays(match.outcome + 1.5 * match.treated, match.treated, match.set_index)
        base, moved = invert(match, null=NORMAL), invert(shifted, null=NORMAL)
        assert moved.lo == pytest.approx(base.lo + 1.5, abs=3e-4)
        assert moved.hi == pytest.approx(base.hi + 1.5, abs=3e-4)

    def test_everything_accepted_gives_infinite_endpoints(self, single_pair):
        interval = invert(single_pair, pvalues=lambda tau: (1.0, 1.0))
        assert (interval.lo, interval.hi) == (-math.inf, math.inf)

    def test_one_infinite_endpoint(self, single_pair):
        interval = invert(single_pair, pvalues=lambda tau: (1.0, 1.0 if tau < 1.0 else 0.0))
        assert interval.lo == -math.inf
        assert interval.hi == pytest.approx(1.0, abs=1e-3)

    def test_non_monotone_huber_pvalues_raise(self, generator):
        match = generator.pairs(n_pairs=20, effect=0.5)

        def wiggly(tau):
            upper = 0.0 if tau < 0.0 else (0.04 if 0.45 <= tau <= 0.65 else 1.0)
            return upper, 1.0 if tau < 1.0 else 0.0

        huber = StatisticSpec(kind=StatisticKind.HUBER_M)
        with pytest.raises(NonMonotoneInversionError):
            invert(match, spec=huber, pvalues=wiggly)
        interval = invert(match, pvalues=wiggly)
        assert interval.lo == pytest.approx(0.0, abs=1e-3)
        assert interval.hi == pytest.approx(1.0, abs=1e-3)

    def test_invalid_alpha(self, single_pair):
        with pytest.raises(DomainError):
            invert(single_pair, alpha=0.0)


@pytest.mark.integration
class TestIntervalFamily:
    def test_hulls_cover_their_parts(self, version_data):
        family = interval_family(version_data, null=NORMAL, parallel=False)
        assert family.iv.covers(family.ic)
        assert family.iv.covers(family.istar)
        assert family.istar.covers(family.ia) and family.istar.covers(family.ib)
        assert [i.label for i in family.intervals()] == [
            IntervalLabel.IA, IntervalLabel.IB, IntervalLabel.IC, IntervalLabel.IV, IntervalLabel.ISTAR,
        ]

    def test_parallel_matches_serial(self, version_data, monkeypatch):
        from versionci.config import get_settings

        serial = interval_family(version_data, null=NORMAL, parallel=False)
        monkeypatch.setenv('VE_THREADS', '3')
        get_settings.cache_clear()
        assert interval_family(version_data, null=NORMAL) == serial

    def test_rows_for_plotting(self, version_data):
        rows = interval_family(version_data, null=NORMAL, gamma=1.0, parallel=False).to_rows()
        assert [r['label'] for r in rows] == ['Ia', 'Ib', 'Ic', 'Iv', 'Istar']
        assert all(r['gamma'] == 1.0 and r['lo'] <= r['hi'] for r in rows)

    def test_bonferroni_contains_ic(self, version_data):
        ic = invert(version_data.all, null=NORMAL)
        bonf_all, bonf_a, bonf_b = bonferroni_family(version_data, null=NORMAL, parallel=False)
        assert bonf_all.lo <= ic.lo + 1e-3 and ic.hi <= bonf_all.hi + 1e-3
        assert bonf_all.alpha == pytest.approx(0.05 / 3)
        assert (bonf_a.label, bonf_b.label) == (IntervalLabel.BONFERRONI_A, IntervalLabel.BONFERRONI_B)

    def test_treated_units_must_agree(self, version_data, generator):
        with pytest.raises(CohortValidationError, match='same treated units'):
            VersionData(all=version_data.all, only_a=generator.pairs(n_pairs=8), only_b=generator.pairs(n_pairs=8))

    def test_bonferroni_attached_to_family(self, version_data):
        family = interval_family(version_data, null=NORMAL, parallel=False, bonferroni=True)
        separate = bonferroni_family(version_data, null=NORMAL, parallel=False)
        assert family.bonferroni == separate
        assert family.bonferroni_length_ratio == length_ratio(separate[0], family.ic)
        assert [r['label'] for r in family.to_rows()] == [
            'Ia', 'Ib', 'Ic', 'Iv', 'Istar', 'BonferroniAll', 'BonferroniA', 'BonferroniB',
        ]

    def test_family_records_statistic(self, version_data):
        family = interval_family(version_data, null=NORMAL, parallel=False)
        assert family.statistic == StatisticKind.MEAN_DIFF
        assert family.bonferroni is None and family.bonferroni_length_ratio is None


@pytest.mark.integration
class TestRandomCohortInvariants:
    @pytest.mark.parametrize('rep', range(200))
    def test_version_interval_covers_parts(self, rep):
        family = interval_family(generate(RANDOM_COHORTS, rep), null=NORMAL, parallel=False)
        assert family.iv.covers(family.ic)
        assert family.iv.covers(family.istar)

    @pytest.mark.parametrize('rep', range(100))
    def test_alpha_nesting_on_simulated_cohorts(self, rep):
        match = generate(RANDOM_COHORTS, 1000 + rep).all
        wide, narrow = invert(match, 0.05, null=NORMAL), invert(match, 0.5, null=NORMAL)
        assert wide.lo <= narrow.lo + 1e-3
        assert narrow.hi <= wide.hi + 1e-3
