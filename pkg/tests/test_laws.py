import math

import numpy as np
import pytest
from scipy import stats as sps

from margcond.core import Cov3, SampleStats, mle_m1
from margcond.errors import ConfigError, NotPositiveDefinite
from margcond.laws import (
    TruthSide,
    WeakStrong,
    WeakWeak,
    hellinger_sq,
    local_correlations,
    make_local_cov,
    optimal_power_band,
    sample_ws_limit,
    sample_ww_limit,
)

M0, M1 = TruthSide.UNDER_M0, TruthSide.UNDER_M1


@pytest.mark.parametrize("side", [M0, M1])
def test_ws_gamma_zero_collapses(side):
    m = make_local_cov(WeakStrong(0.5, 0.0), side, 100).matrix
    expected = np.eye(3)
    expected[1, 2] = expected[2, 1] = 0.5
    np.testing.assert_array_equal(m, expected)


def test_ws_m1_example():
    m = make_local_cov(WeakStrong(0.5, 2.0), M1, 100).matrix
    assert m[0, 1] == pytest.approx(0.1)
    assert m[0, 2] == pytest.approx(0.2)
    assert m[1, 2] == 0.5


def test_ww_m0_example():
    m = make_local_cov(WeakWeak(1.0), M0, 10_000).matrix
    assert m[0, 2] == pytest.approx(0.1)
    assert m[1, 2] == pytest.approx(0.1)
    assert m[0, 1] == 0.0


@pytest.mark.parametrize("a", [0.1, 0.2, 0.25, 0.3, 0.45])
def test_ww_product_is_delta(a):
    n = 40_000
    r13, r23 = local_correlations(WeakWeak(-1.5, a), n)
    assert math.sqrt(n) * r13 * r23 == pytest.approx(-1.5)


@pytest.mark.parametrize(
    "regime",
    [WeakStrong(0.5, 2.0), WeakStrong(-0.8, 3.0), WeakWeak(1.0), WeakWeak(-2.0, 0.3)],
)
def test_local_cov_constraints(regime):
    variances = (2.0, 0.5, 3.0)
    p = make_local_cov(regime, M0, 1000, variances).matrix
    q = make_local_cov(regime, M1, 1000, variances).matrix
    assert p[0, 1] == 0.0
    assert abs(q[0, 1] * q[2, 2] - q[0, 2] * q[1, 2]) <= 1e-14 * abs(q[0, 2] * q[1, 2])
    # the M1 member is the projection of the M0 member
    np.testing.assert_allclose(mle_m1(SampleStats(Cov3(p), 10)).matrix, q, rtol=1e-14)


def test_local_cov_too_large_for_n():
    with pytest.raises(NotPositiveDefinite):
        make_local_cov(WeakStrong(0.9, 5.0), M0, 25)


def test_regime_validation():
    with pytest.raises(ConfigError):
        WeakStrong(0.0, 1.0)
    with pytest.raises(ConfigError):
        WeakStrong(1.0, 1.0)
    with pytest.raises(ConfigError):
        WeakWeak(0.0)
    with pytest.raises(ConfigError):
        WeakWeak(1.0, 0.5)


def test_ws_limit_gamma_zero_mean():
    rho = 0.6
    x = sample_ws_limit(rho, 0.0, M0, np.random.default_rng(1), 10**6)
    assert abs(x.mean()) < 0.01 * rho * 2


def test_ws_limit_mean_under_m0():
    x = sample_ws_limit(0.5, 3.0, M0, np.random.default_rng(2), 10**6)
    # rho * (g^2/(2(1-rho)) - g^2/(2(1+rho)))
    assert x.mean() == pytest.approx(3.0, abs=0.02)


def test_ws_limit_sides_negate():
    rho, gamma = 0.5, 2.0
    rng = np.random.default_rng(3)
    a = sample_ws_limit(rho, gamma, M1, rng, 200_000)
    b = -sample_ws_limit(rho, gamma * math.sqrt(1 - rho**2), M0, rng, 200_000)
    assert sps.ks_2samp(a, b).pvalue > 0.001


def test_ws_limit_depends_on_absolute_values():
    a = sample_ws_limit(-0.5, -2.0, M0, np.random.default_rng(4), 1000)
    b = sample_ws_limit(0.5, 2.0, M0, np.random.default_rng(4), 1000)
    np.testing.assert_array_equal(a, b)


def test_ww_limit_moments():
    x = sample_ww_limit(1.0, M0, np.random.default_rng(5), 10**6)
    assert x.mean() == pytest.approx(1.0, abs=0.01)
    assert x.var() == pytest.approx(4.0, abs=0.05)
    y = sample_ww_limit(2.0, M1, np.random.default_rng(6), 10**6)
    assert y.mean() == pytest.approx(-4.0, abs=0.02)
    assert y.var() == pytest.approx(16.0, abs=0.2)


def test_ww_limit_matches_normal_cdf():
    N = 10**6
    x = sample_ww_limit(1.0, M0, np.random.default_rng(7), N)
    d = sps.kstest(x, sps.norm(loc=1.0, scale=2.0).cdf).statistic
    assert d < 1.63 / math.sqrt(N)


def test_ww_limit_vanishing_delta():
    x = sample_ww_limit(1e-9, M0, np.random.default_rng(8), 1000)
    assert np.max(np.abs(x)) < 1e-7


def test_hellinger_identical():
    p = make_local_cov(WeakStrong(0.3, 1.0), M0, 100)
    assert hellinger_sq(p, p) == 0.0


def test_hellinger_symmetric_and_bounded():
    rng = np.random.default_rng(9)
    for _ in range(50):
        a, b = rng.normal(size=(2, 3, 3))
        p, q = Cov3(a @ a.T + 0.1 * np.eye(3)), Cov3(b @ b.T + 0.1 * np.eye(3))
        h = hellinger_sq(p, q)
        assert 0 <= h <= 1
        assert h == hellinger_sq(q, p)


def test_hellinger_weak_weak_expansion():
    t = 0.01
    p = Cov3.from_entries(1, 0, t, 1, t, 1)
    q = mle_m1(SampleStats(p, 10))
    assert hellinger_sq(p, q) * 8 / t**4 == pytest.approx(1.0, rel=0.01)


def test_hellinger_weak_strong_expansion():
    t, rho = 0.001, 0.6
    p = Cov3.from_entries(1, 0, t, 1, rho, 1)
    q = mle_m1(SampleStats(p, 10))
    assert hellinger_sq(p, q) * 8 * (1 - rho**2) / (rho**2 * t**2) == pytest.approx(1.0, rel=0.01)


def test_optimal_power_band_examples():
    assert optimal_power_band(0.0, 0.05) == (0.0, 0.05)
    lo, hi = optimal_power_band(1.0, 0.05)
    assert lo == pytest.approx(0.6321, abs=1e-4)
    assert hi == pytest.approx(0.9798, abs=1e-4)
    assert optimal_power_band(math.inf, 0.05) == (1.0, 1.0)
    assert optimal_power_band(50.0, 0.05) == pytest.approx((1.0, 1.0))


def test_optimal_power_band_rejects_bad_input():
    with pytest.raises(ConfigError):
        optimal_power_band(-1.0, 0.05)
    with pytest.raises(ConfigError):
        optimal_power_band(1.0, 0.0)
