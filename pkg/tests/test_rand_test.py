import numpy as np
import pytest

from versionci.cohort import FullMatch
from versionci.config import get_settings
from versionci.error_handler import DomainError, EnumerationLimitError
from versionci import rand_test
from versionci.rand_test import (
    NullMethod,
    NullSpec,
    ScalePolicy,
    StatisticKind,
    StatisticSpec,
    huber_scale,
    null_distribution,
    point_estimate,
    set_weights,
    statistic,
)

EXACT = NullSpec(method=NullMethod.EXACT)
NORMAL = NullSpec(method=NullMethod.NORMAL)


@pytest.mark.unit
class TestWeights:
    def test_pairs_have_equal_weights(self, generator):
        np.testing.assert_allclose(set_weights(generator.pairs(n_pairs=8)), np.full(8, 1 / 8))

    def test_unequal_sets(self, two_set_match):
        np.testing.assert_allclose(set_weights(two_set_match), [0.4, 0.6])

    def test_reference_weights_sum_to_one(self, generator):
        match = FullMatch.from_cohort(generator.reference_cohort())
        assert set_weights(match).sum() == pytest.approx(1.0)


@pytest.mark.unit
class TestStatistic:
    def test_single_pair(self, single_pair):
        assert statistic(single_pair, 0.0) == 1.0
        assert statistic(single_pair, 1.0) == 0.0

    def test_two_sets(self, two_set_match):
        assert statistic(two_set_match, 0.0) == pytest.approx(0.8)

    def test_order_within_set_does_not_matter(self):
        a = FullMatch.from_arrays([3.0, 1.0, 0.0, 2.0], [True, False, False, False], [1, 1, 1, 1])
        b = FullMatch.from_arrays([2.0, 0.0, 3.0, 1.0], [False, False, True, False], [1, 1, 1, 1])
        assert statistic(a, 0.3) == pytest.approx(statistic(b, 0.3), abs=1e-15)

    def test_huber_with_large_scale_is_scaled_mean_difference(self, generator):
        match = generator.random_full_match(sets=6, max_size=4, effect=0.5)
        scale = 1e6
        huber = StatisticSpec(kind=StatisticKind.HUBER_M, scale_policy=ScalePolicy.FIXED, fixed_scale=scale)
        for tau0 in (-1.0, 0.0, 0.7):
            assert statistic(match, tau0, huber) == pytest.approx(statistic(match, tau0) / scale, rel=1e-9)

    def test_mad_scale_falls_back(self):
        spec = StatisticSpec(kind=StatisticKind.HUBER_M)
        assert huber_scale(np.zeros(4), spec) == 1.0
        assert huber_scale(np.array([0.0, 0.0, 0.0, 4.0]), spec) == pytest.approx(1.0)

    def test_invalid_specs(self):
        with pytest.raises(DomainError):
            StatisticSpec(kind=StatisticKind.HUBER_M, scale_policy=ScalePolicy.FIXED, fixed_scale=0.0)
        with pytest.raises(DomainError):
            NullSpec(method=NullMethod.MONTE_CARLO, draws=500)


@pytest.mark.unit
class TestNullDistribution:
    def test_exact_single_pair(self, single_pair):
        dist = null_distribution(single_pair, 0.0, null=EXACT)
        np.testing.assert_allclose(dist.values, [-1.0, 1.0])
        np.testing.assert_allclose(dist.probabilities, [0.5, 0.5])

    def test_exact_pvalues(self, single_pair):
        result = rand_test.test(single_pair, 0.0, null=EXACT)
        assert result.statistic == 1.0
        assert result.p_upper == pytest.approx(0.5)
        assert result.p_lower == pytest.approx(1.0)

    def test_null_satisfied_exactly(self, single_pair):
        for null in (EXACT, NORMAL):
            assert rand_test.test(single_pair, 1.0, null=null).p_two_sided == 1.0

    def test_normal_moments_match_enumeration(self, generator):
        for offset in range(5):
            match = generator.random_full_match(sets=4, max_size=4, offset=100 + offset)
            exact = null_distribution(match, 0.2, null=EXACT)
            normal = null_distribution(match, 0.2, null=NORMAL)
            assert exact.expectation == pytest.approx(normal.expectation, abs=1e-10)
            assert exact.variance == pytest.approx(normal.variance, rel=1e-9, abs=1e-12)

    def test_monte_carlo_close_to_exact(self, generator):
        match = generator.random_full_match(sets=3, max_size=3, offset=7)
        exact = null_distribution(match, 0.0, null=EXACT)
        mc = null_distribution(match, 0.0, null=NullSpec(method=NullMethod.MONTE_CARLO, draws=100_000, seed=5))
        gap = max(abs(exact.cdf(v) - mc.cdf(v)) for v in exact.values)
        assert gap <= 0.02

    def test_monte_carlo_independent_of_threads(self, generator, monkeypatch):
        match = generator.random_full_match(sets=12, max_size=5, offset=8)
        null = NullSpec(method=NullMethod.MONTE_CARLO, draws=2000, seed=42)
        single = rand_test.test(match, 0.1, null=null)
        monkeypatch.setenv('VE_THREADS', '4')
        get_settings.cache_clear()
        threaded = rand_test.test(match, 0.1, null=null)
        assert single == threaded

    def test_monte_carlo_pvalues_are_add_one(self, generator):
        match = generator.pairs(n_pairs=8, effect=3.0, noise=0.1)
        null = NullSpec(method=NullMethod.MONTE_CARLO, draws=1000, seed=1)
        result = rand_test.test(match, 0.0, null=null)
        draws = null_distribution(match, 0.0, null=null).values
        assert result.p_upper == pytest.approx((1 + np.sum(draws >= result.statistic - 1e-9)) / 1001)
        assert result.p_upper >= 1 / 1001

    def test_enumeration_cap(self, generator):
        match = FullMatch.from_cohort(generator.reference_cohort())
        with pytest.raises(EnumerationLimitError):
            null_distribution(match, 0.0, null=EXACT)

    def test_exact_tails_overlap(self, generator):
        match = generator.random_full_match(sets=4, max_size=3, offset=9)
        result = rand_test.test(match, 0.0, null=EXACT)
        assert result.p_upper + result.p_lower >= 1.0 - 1e-12
        assert result.p_two_sided <= 2 * min(result.p_upper, result.p_lower) + 1e-12


@pytest.mark.unit
class TestShiftEquivariance:
    def test_shifting_treated_outcomes(self):
        outcome = np.array([3.0, 1.0, 2.0, 0.5, -1.0, 2.5, 4.0, 0.0])
        treated = np.array([True, False, False, True, False, False, True, False])
        labels = [1, 1, 1, 2, 2, 3, 3, 3]
        base = FullMatch.from_arrays(outcome, treated, labels)
        shifted = FullMatch.from_arrays(outcome + 0.5 * treated, treated, labels)
        for null in (EXACT, NORMAL):
            a = rand_test.test(base, 0.25, null=null)
            b = rand_test.test(shifted, 0.75, null=null)
            assert (a.statistic, a.p_upper, a.p_lower) == (b.statistic, b.p_upper, b.p_lower)

    def test_point_estimate_of_mean_difference(self, two_set_match):
        assert point_estimate(two_set_match) == pytest.approx(0.8)
        assert statistic(two_set_match, point_estimate(two_set_match)) == pytest.approx(0.0, abs=1e-12)

    def test_huber_point_estimate_zeroes_statistic(self, generator):
        match = generator.random_full_match(sets=10, max_size=4, effect=1.0, offset=12)
        spec = StatisticSpec(kind=StatisticKind.HUBER_M)
        assert statistic(match, point_estimate(match, spec), spec) == pytest.approx(0.0, abs=1e-6)


@pytest.mark.slow
class TestSize:
    def test_two_sided_size_on_pairs(self):
        rng = np.random.default_rng(99)
        labels = np.repeat(np.arange(50), 2)
        flags = np.tile([True, False], 50)
        rejections = 0
        for _ in range(2000):
            match = FullMatch.from_arrays(rng.standard_normal(100), flags, labels)
            rejections += rand_test.test(match, 0.0, null=NORMAL).p_two_sided <= 0.05
        assert 0.03 <= rejections / 2000 <= 0.07
