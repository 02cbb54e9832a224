import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnlimit.errors import EmptyOverlap, TooFewSamples
from attnlimit.stats import (
    DensityEstimate,
    SampleSet,
    compare,
    kde,
    kl_divergence,
    ks_two_sample,
    moments,
    silverman_bandwidth,
)

GAUSSIAN_KL = 0.5 * (0.5 + math.log(2.0) - 1.0)  # KL(N(0,1) || N(0,2)) = 0.0966


def normal(seed, n, scale=1.0, loc=0.0):
    return loc + scale * np.random.default_rng(seed).standard_normal(n)


def test_kde_normal_density_at_zero():
    est = kde(normal(1, 10_000))
    assert abs(np.interp(0.0, est.grid, est.density) - 1 / math.sqrt(2 * math.pi)) <= 0.03


def test_kde_constant_samples():
    est = kde(np.zeros(500))
    assert est.bandwidth == 1e-6
    assert abs(est.integral() - 1.0) <= 1e-3
    assert est.density.max() > 1e4


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=100, max_size=400))
@settings(max_examples=50, deadline=None)
def test_kde_integrates_to_one(values):
    est = kde(np.array(values), grid_points=256)
    assert abs(est.integral() - 1.0) <= 1e-3
    assert np.all(est.density >= 0)
    assert np.all(np.diff(est.grid) > 0)


def test_kde_needs_enough_samples():
    with pytest.raises(TooFewSamples):
        kde(np.zeros(99))
    with pytest.raises(ValueError):
        kde(np.zeros(200), grid_points=4)


def test_silverman_bandwidth_formula():
    x = normal(2, 1000)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    expected = 0.9 * min(x.std(ddof=1), iqr / 1.34) * 1000 ** (-0.2)
    assert silverman_bandwidth(x) == pytest.approx(expected, rel=1e-12)


def test_kl_identity_and_sign():
    est = kde(normal(3, 5000))
    assert abs(kl_divergence(est, est)) <= 1e-9
    other = kde(normal(4, 5000, 1.3))
    assert kl_divergence(est, other) >= -1e-6


def test_kl_gaussian_pair_and_asymmetry():
    p, q = kde(normal(5, 50_000)), kde(normal(6, 50_000, math.sqrt(2.0)))
    forward, backward = kl_divergence(p, q), kl_divergence(q, p)
    assert abs(forward - GAUSSIAN_KL) <= 0.01
    # KL(N(0,2) || N(0,1)) = 0.5 (2 - 1 - ln 2) = 0.153
    assert abs(backward - forward) > 0.03


def test_kl_disjoint_supports():
    a = DensityEstimate(np.linspace(0, 1, 10), np.ones(10), 0.1)
    b = DensityEstimate(np.linspace(2, 3, 10), np.ones(10), 0.1)
    with pytest.raises(EmptyOverlap):
        kl_divergence(a, b)


def test_ks_basic_cases():
    a = normal(7, 10_000)
    assert ks_two_sample(a, a) == 0.0
    assert ks_two_sample(a, normal(8, 10_000, loc=3.0)) >= 0.8
    with pytest.raises(TooFewSamples):
        ks_two_sample(a, a[:50])


def test_ks_matches_scipy():
    from scipy.stats import ks_2samp

    a, b = normal(9, 3000), normal(10, 2000, 1.1)
    assert ks_two_sample(a, b) == pytest.approx(ks_2samp(a, b).statistic, abs=1e-12)


def test_ks_null_rate():
    crit = 1.36 * math.sqrt(2 / 10_000)
    hits = sum(ks_two_sample(normal(2 * r, 10_000), normal(2 * r + 1, 10_000)) <= crit for r in range(50))
    assert hits >= 45


@given(st.integers(0, 10**6))
@settings(max_examples=20, deadline=None)
def test_ks_symmetric_and_bounded(seed):
    a, b = normal(seed, 150), normal(seed + 1, 220, 2.0)
    d = ks_two_sample(a, b)
    assert d == ks_two_sample(b, a)
    assert 0.0 <= d <= 1.0


def test_moments_two_point_law():
    m = moments(np.tile([-1.0, 1.0], 5000))
    assert m.mean == 0.0
    assert m.variance == pytest.approx(10_000 / 9_999, abs=1e-12)  # 1.0001 rounded
    assert m.ex_kurtosis == pytest.approx(-2.0, abs=1e-12)
    assert m.se_kurtosis == pytest.approx(math.sqrt(24 / 10_000))


def test_moments_gaussian_null():
    m = moments(normal(11, 50_000))
    assert abs(m.ex_kurtosis) <= 4 * math.sqrt(24 / 50_000)
    assert abs(m.skewness) <= 4 * math.sqrt(6 / 50_000)


def test_sample_set_validation_and_digest():
    with pytest.raises(ValueError):
        SampleSet.from_values([1.0, np.nan])
    s = SampleSet.from_values(np.arange(5.0), "x", 3, "abc")
    assert s.count == len(s) == s.provenance.count == 5
    assert s.digest() == SampleSet.from_values(np.arange(5.0), "x", 3, "abc").digest()
    assert s.digest() != SampleSet.from_values(np.arange(5.0), "y", 3, "abc").digest()


def test_compare_report():
    rep = compare(normal(12, 2000), normal(13, 2000, 1.5))
    assert rep.sample_counts == (2000, 2000)
    assert rep.kl > 0 and rep.log_kl == pytest.approx(math.log(rep.kl))
    d = rep.to_dict()
    assert set(d) == {"kl", "log_kl", "ks", "moments_a", "moments_b"}
