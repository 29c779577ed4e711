import numpy as np
import pytest
from scipy.stats import norm

from qmed.data import MicrodataTable
from qmed.errors import EstimationError
from qmed.oracle import OracleModel, simulate
from qmed.sparsity import bofinger_bandwidth, density_factor_tilde, estimate_sparsity, sparsity_at


def direct_bofinger(n, u):
    v = norm.ppf(u)
    return n ** -0.2 * (4.5 * norm.pdf(v) ** 4 / (2 * v ** 2 + 1) ** 2) ** 0.2


def test_bofinger_value():
    phi0 = 0.398942
    expected = 1e5 ** -0.2 * (4.5 * phi0 ** 4) ** 0.2
    assert bofinger_bandwidth(100_000, 0.5) == pytest.approx(expected, abs=1e-6)
    assert bofinger_bandwidth(100_000, 0.5) == pytest.approx(0.06477, abs=5e-4)


def test_bofinger_rate():
    assert bofinger_bandwidth(32 * 1000, 0.5) / bofinger_bandwidth(1000, 0.5) == pytest.approx(0.5, rel=1e-12)
    assert bofinger_bandwidth(1e12, 0.5) < 1e-2


def test_bofinger_truncation():
    for u in (0.001, 0.02, 0.5, 0.98):
        eps = bofinger_bandwidth(50, u)
        assert 0 < eps <= min(u, 1 - u) / 2
        assert eps == min(direct_bofinger(50, u), u / 2, (1 - u) / 2)


def test_uniform_sample_slope_one():
    rng = np.random.default_rng(0)
    t = MicrodataTable(np.zeros(10_000), np.zeros(10_000, dtype=int), rng.random(10_000))
    assert sparsity_at(t, 0.5, 0)[0] == pytest.approx(1.0, abs=0.05)


@pytest.mark.parametrize("x_star,expected", [(0, 2.5066), (1, 5.0133)])
def test_oracle_sparsity_at_median(x_star, expected):
    t = simulate(OracleModel(), 200_000, seed=12)
    assert sparsity_at(t, 0.5, x_star)[0] == pytest.approx(expected, abs=0.1)
    assert expected == pytest.approx((1 + x_star) / norm.pdf(0), abs=1e-4)


def test_shift_and_scale():
    t = simulate(OracleModel(), 5000, seed=3)
    base = estimate_sparsity(t, [0.2, 0.5, 0.8]).s_values
    shifted = estimate_sparsity(MicrodataTable(t.y, t.x, t.m + 100.0), [0.2, 0.5, 0.8]).s_values
    scaled = estimate_sparsity(MicrodataTable(t.y, t.x, t.m * 4.0), [0.2, 0.5, 0.8]).s_values
    np.testing.assert_allclose(shifted, base, rtol=1e-9)
    np.testing.assert_allclose(scaled, 4.0 * base, rtol=1e-12)


def test_constant_mediator_raises():
    t = MicrodataTable(np.zeros(20), np.repeat([0, 1], 10), np.ones(20))
    with pytest.raises(EstimationError):
        estimate_sparsity(t, [0.5])


def test_nonpositive_floored_and_flagged():
    # heavy ties: the x=0 arm is flat around its median
    m0 = np.concatenate([np.linspace(0, 4, 3000), np.full(4000, 5.0), np.linspace(6, 10, 3000)])
    m1 = np.linspace(0, 10, 10_000)
    t = MicrodataTable(np.zeros(20_000), np.repeat([0, 1], 10_000), np.concatenate([m0, m1]))
    est = estimate_sparsity(t, [0.05, 0.5, 0.95])
    assert est.floored[0, 1] and not est.floored[0, 0]
    assert np.all(est.s_values > 0)
    assert est.s_values[0, 1] == min(est.s_values[0, 0], est.s_values[0, 2])


def test_density_factor_tilde_examples():
    assert density_factor_tilde(2.0, 2.0, 3, 7) == 0.5
    assert density_factor_tilde(2.5066, 5.0133, 1, 1) == pytest.approx(1 / 3.75995, abs=1e-6)
    assert density_factor_tilde(2.5066, 5.0133, 1, 1) == pytest.approx(0.2660, abs=1e-4)
    assert density_factor_tilde(2.0, 4.0, 1e9, 1) == pytest.approx(0.5, rel=1e-8)
    assert density_factor_tilde(2.0, 4.0, 1, 1, mode="average_inverse") == pytest.approx(0.375)
    with pytest.raises(ValueError):
        density_factor_tilde(0.0, 1.0, 1, 1)
