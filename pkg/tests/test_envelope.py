import json
import math

import mpmath
import numpy as np
import pytest
from scipy import integrate, optimize

from margcond import envelope as env
from margcond.errors import ConfigError, DomainError, UnknownAlpha

CFG5 = env.EnvelopeConfig(n_samples=10**5)


def chi2_1_upper_quantile(p):
    """``x`` with ``P(chi2_1 <= x) = p``, by inverting the regularised incomplete gamma."""
    f = lambda x: mpmath.gammainc(mpmath.mpf(1) / 2, 0, x / 2, regularized=True) - p
    return float(mpmath.findroot(f, 2.0))


def bessel_quantile(alpha):
    return optimize.brentq(lambda x: env.bessel_cdf(x) - alpha, -40, 0, xtol=1e-12)


def manual_table(rhos, alphas, q):
    return env.EnvelopeTable(np.array(rhos), tuple(alphas), np.array(q, dtype=float), 10**6, (0, 10, 0.05), 1)


# ---------------------------------------------------------------- analytic pieces


def test_ww_envelope_cdf_at_chi2_quantile():
    x = chi2_1_upper_quantile(0.90)
    assert x == pytest.approx(2.70554, abs=1e-4)
    assert env.cdf_ww_envelope(-x) == pytest.approx(0.05, abs=1e-9)
    assert env.ww_envelope_quantile(0.05) == pytest.approx(-x, abs=1e-9)


def test_ww_envelope_cdf_examples():
    assert env.cdf_ww_envelope(0.0) == 1.0
    assert env.cdf_ww_envelope(3.0) == 1.0
    assert env.cdf_ww_envelope(-1e-12) == pytest.approx(0.5, abs=1e-6)
    assert env.cdf_ww_envelope(-5.412) == pytest.approx(0.01, abs=1e-4)
    x = np.linspace(-20, 5, 500)
    assert np.all(np.diff(env.cdf_ww_envelope(x)) >= 0)


def test_bessel_density_symmetric():
    for u in (0.1, 1.0, 5.0):
        assert env.bessel_density(u) == env.bessel_density(-u)
        assert env.bessel_density(u) > 0


def test_bessel_density_undefined_at_zero():
    with pytest.raises(DomainError):
        env.bessel_density(0.0)


def test_bessel_density_integrates_to_one():
    half = integrate.quad(env.bessel_density, 0, 50, points=[1e-8, 1e-4, 1e-2, 1], limit=200)[0]
    assert 2 * half == pytest.approx(1.0, abs=1e-6)


def test_bessel_cdf_matches_density_quadrature():
    for x in (-8.0, -3.19, -0.5, 0.7, 4.0):
        if x < 0:
            ref = integrate.quad(env.bessel_density, -60, x, limit=200)[0]
        else:
            ref = 0.5 + integrate.quad(env.bessel_density, 0, x, limit=200)[0]
        assert env.bessel_cdf(x) == pytest.approx(ref, abs=1e-7)


def test_bessel_density_matches_histogram():
    rng = np.random.default_rng(11)
    z = rng.standard_normal((2, 10**6))
    u = z[0] ** 2 - z[1] ** 2
    edges = np.linspace(0.5, 6, 23)
    counts, _ = np.histogram(u, edges)
    mass = np.array([integrate.quad(env.bessel_density, a, b)[0] for a, b in zip(edges[:-1], edges[1:])])
    emp = counts / u.size
    se = np.sqrt(mass * (1 - mass) / u.size)
    assert np.all(np.abs(emp - mass) < 4 * se)


def test_bessel_quantiles():
    assert -bessel_quantile(0.05) == pytest.approx(3.19, abs=0.005)
    assert -bessel_quantile(0.01) == pytest.approx(5.97, abs=0.005)


# ---------------------------------------------------------------- single laws


def test_mc_law_quantile_rho_one():
    q = env.mc_law_quantile(1.0, 0.0, 0.05, 10**7, np.random.default_rng(1))
    assert q == pytest.approx(-3.19, abs=0.02)


def test_mc_law_quantile_median_symmetric():
    q = env.mc_law_quantile(0.5, 0.0, 0.5, 10**6, np.random.default_rng(2))
    assert abs(q) < 0.01


def test_mc_law_quantile_moves_right_with_gamma():
    q0 = env.mc_law_quantile(0.5, 0.0, 0.05, 10**5, np.random.default_rng(3))
    q10 = env.mc_law_quantile(0.5, 10.0, 0.05, 10**5, np.random.default_rng(3))
    assert q10 > q0


def test_mc_law_quantile_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        env.mc_law_quantile(0.0, 1.0, 0.05, 10**4, rng)
    with pytest.raises(ConfigError):
        env.mc_law_quantile(0.5, 1.0, 0.05, 100, rng)


def test_law_samples_mean():
    rho, g = 0.4, 2.0
    x = env.law_samples(rho, g, np.random.default_rng(4), 10**6)
    # rho * (a^2 - b^2) with a^2 - b^2 = g^2 rho
    assert x.mean() == pytest.approx(rho * rho * g * g, abs=0.01)


# ---------------------------------------------------------------- envelope quantiles


def test_envelope_quantile_rho_zero_is_analytic():
    assert env.envelope_quantile(0.0, 0.05) == pytest.approx(-chi2_1_upper_quantile(0.90), abs=1e-9)
    assert env.envelope_quantile(0.0, 0.01) == pytest.approx(-chi2_1_upper_quantile(0.98), abs=1e-9)


def test_envelope_quantile_rho_07():
    assert env.envelope_quantile(0.7, 0.05) == pytest.approx(-2.39, abs=0.05)


def test_envelope_quantile_rho_one_matches_bessel():
    cfg = env.DEFAULT_CONFIG
    q = env.envelope_quantile(1.0, 0.01, cfg)
    assert q == pytest.approx(-5.97, abs=0.05)
    se = env.envelope_quantile_se(1.0, 0.01, cfg)
    assert abs(q - bessel_quantile(0.01)) < 3 * se


def test_envelope_quantile_se_matches_order_statistic_theory():
    alpha = 0.05
    q = bessel_quantile(alpha)
    theory = math.sqrt(alpha * (1 - alpha) / CFG5.n_samples) / env.bessel_density(q)
    assert env.envelope_quantile_se(1.0, alpha, CFG5) == pytest.approx(theory, rel=0.2)
    assert env.envelope_quantile_se(0.0, alpha, CFG5) == 0.0


def test_envelope_quantile_bounded_by_each_law():
    # the envelope quantile is the smallest quantile over the grid
    rho = 0.5
    q = env.envelope_quantile(rho, 0.05, CFG5)
    z1, z2, base = env._common_draws(env.rho_stream_key(rho), CFG5.n_samples, CFG5.seed)
    k = env._kth(0.05, CFG5.n_samples)
    for g in (0.0, 1.0, 3.0, 10.0):
        x = env._law_values(rho, g, z1, z2, base)
        assert q <= np.partition(x, k)[k]


def test_envelope_quantile_rejects_bad_input():
    with pytest.raises(ConfigError):
        env.envelope_quantile(1.5, 0.05)
    with pytest.raises(ConfigError):
        env.envelope_quantile(0.5, 0.5)
    with pytest.raises(ConfigError):
        env.envelope_quantiles(0.5, [])


def test_gamma_grid_stretch():
    cfg = env.DEFAULT_CONFIG
    assert cfg.n_gamma == 201
    np.testing.assert_allclose(cfg.gamma_grid(0.8), np.linspace(0, 10, 201))
    g = cfg.gamma_grid(0.1)
    assert g[-1] == pytest.approx(40.0) and g.size == 201
    assert env.EnvelopeConfig(delta_reach=0).gamma_grid(0.1)[-1] == 10.0


def test_config_validation():
    with pytest.raises(ConfigError):
        env.EnvelopeConfig(gamma_step=0)
    with pytest.raises(ConfigError):
        env.EnvelopeConfig(gamma_lo=5, gamma_hi=1)
    with pytest.raises(ConfigError):
        env.EnvelopeConfig(n_samples=10)


# ---------------------------------------------------------------- CDF and p-values


def test_envelope_cdf_monotone():
    xs = np.linspace(-8, 3, 23)
    vals = [env.envelope_cdf(x, 0.5, CFG5) for x in xs]
    assert np.all(np.diff(vals) >= 0)


def test_p_value_examples():
    assert env.p_value(0.0, 0.4) == 0.5
    assert env.p_value(50.0, 0.4, CFG5) == 0.0
    for lam in (-2.0, 1.0, 4.0):
        assert 0 <= env.p_value(lam, 0.4, CFG5) <= 0.5
    assert env.p_value(3.0, 0.3, CFG5) == env.p_value(-3.0, 0.3, CFG5)


def test_p_value_rho_zero_analytic():
    assert env.p_value(2.70554, 0.0) == pytest.approx(0.05, abs=1e-5)


def test_p_value_consistent_with_quantile():
    rho, alpha = 0.6, 0.05
    q = env.envelope_quantile(rho, alpha, CFG5)
    assert env.p_value(-q * 1.001, rho, CFG5) <= alpha
    assert env.p_value(-q * 0.999, rho, CFG5) >= alpha


# ---------------------------------------------------------------- tables


def test_build_table_examples():
    t = env.build_envelope_table([0.0, 0.5, 1.0], [0.05], env.DEFAULT_CONFIG)
    np.testing.assert_allclose(t.quantiles[:, 0], [2.71, 2.48, 3.19], atol=0.05)


def test_build_table_errors():
    with pytest.raises(ConfigError):
        env.build_envelope_table([0.5], [], CFG5)
    with pytest.raises(ConfigError):
        env.build_envelope_table([], [0.05], CFG5)
    with pytest.raises(ConfigError):
        env.build_envelope_table([0.5, 0.2], [0.05], CFG5)


def test_table_deterministic_and_worker_independent():
    a = env.build_envelope_table([0.2, 0.9], [0.05, 0.01], CFG5)
    b = env.build_envelope_table([0.2, 0.9], [0.05, 0.01], CFG5, workers=2)
    assert a == b
    # a single rho evaluated on its own gives the same entry as inside a grid
    c = env.build_envelope_table([0.9], [0.05, 0.01], CFG5)
    np.testing.assert_array_equal(a.quantiles[1], c.quantiles[0])


def test_table_round_trip(tmp_path, small_table):
    path = tmp_path / "t.csv"
    small_table.to_csv(path)
    assert env.EnvelopeTable.from_csv(path) == small_table
    lines = path.read_text().splitlines()
    assert lines[0] == env.CSV_HEADER
    meta = json.loads(env.EnvelopeTable.metadata_path(path).read_text())
    assert {"gamma_lo", "gamma_hi", "gamma_step", "N", "seed"} <= set(meta)
    path2 = tmp_path / "u.csv"
    small_table.to_csv(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_table_validation():
    with pytest.raises(ConfigError):
        manual_table([0.0, 1.0], [0.05], [[2.7], [-1.0]])
    with pytest.raises(ConfigError):
        manual_table([0.0], [0.05, 0.01], [[5.0, 2.7]])
    with pytest.raises(ConfigError):
        manual_table([0.5, 0.1], [0.05], [[2.7], [2.7]])


def test_interp_examples():
    t = manual_table([0.0, 0.1], [0.05], [[2.71], [2.71]])
    assert env.interp_quantile(t, 0.05, 0.05) == pytest.approx(2.71)
    t = manual_table([0.6, 0.7], [0.05], [[2.42], [2.39]])
    assert env.interp_quantile(t, 0.65, 0.05) == pytest.approx(2.405)
    assert env.interp_quantile(t, 0.6, 0.05) == 2.42
    assert env.interp_quantile(t, 1.3, 0.05) == 2.39
    with pytest.raises(UnknownAlpha):
        env.interp_quantile(t, 0.65, 0.01)


def test_default_table_and_override(tmp_path, monkeypatch, small_table):
    t = env.default_table()
    assert t.rho_grid[0] == 0.0 and t.rho_grid[-1] == 1.0
    assert set(t.alpha_list) == {0.10, 0.05, 0.025, 0.01}
    path = tmp_path / "other.csv"
    small_table.to_csv(path)
    monkeypatch.setenv(env.TABLE_ENV_VAR, str(path))
    assert env.default_table() == small_table


# ---------------------------------------------------------------- structure


@pytest.mark.parametrize("rho", [0.3, 0.7])
def test_positive_part_is_scaled_bessel(rho):
    cfg = env.EnvelopeConfig(n_samples=10**6)
    for x in (0.2, 1.0, 3.0):
        exact = env.bessel_cdf(x / rho)
        se = math.sqrt(exact * (1 - exact) / cfg.n_samples)
        assert abs(env.envelope_cdf(x, rho, cfg) - exact) < 2 * se


def test_continuity_at_zero():
    for alpha in (0.05, 0.01):
        d = env.envelope_quantile(0.05, alpha) - env.envelope_quantile(0.0, alpha)
        assert abs(d) < 0.05
