import numpy as np
import pytest
from hypothesis import given, strategies as st

from ehwsn import phy

pos = st.floats(1e-9, 1e3, allow_nan=False)


def test_harvested_energy_examples():
    assert phy.harvested_energy(0.6, 1e-3, 0.5, 1.0, 2.0) == pytest.approx(6.0e-4, rel=1e-12)
    assert phy.harvested_energy(0.6, 1e-3, 0.0, 1.0, 2.0) == 0.0
    assert phy.harvested_energy(0.6, 1e-3, 1.0, 19.9526, 16e-6) == pytest.approx(1.9154e-7, rel=1e-4)
    with pytest.raises(ValueError):
        phy.harvested_energy(0.6, 1e-3, 0.5, -1.0, 2.0)


def test_harvest_bound(cfg):
    # 0 <= e <= eta tau P_max M PL_max with unit fading per antenna as the ceiling
    g = cfg.M * 1.0
    e = phy.harvested_energy(cfg.eta, cfg.tau, 1.0, cfg.P_max, g)
    assert 0 <= e <= cfg.eta * cfg.tau * cfg.P_max * cfg.M * 1.0 + 1e-18


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 20), st.floats(0, 20), st.floats(1e-8, 1.0))
def test_harvest_bilinear(a, a2, p, p2, g):
    eta, tau = 0.6, 1e-3
    e = lambda x, y: phy.harvested_energy(eta, tau, x, y, g)
    lhs = e(a, p) + e(a2, p2) - e(a, p2) - e(a2, p)
    assert lhs == pytest.approx((a - a2) * (p - p2) * eta * tau * g, rel=1e-9, abs=1e-18)


def test_snr_examples():
    assert phy.snr(1e-2, 1.6e-5, 1e-13) == pytest.approx(1.6e6, rel=1e-12)
    assert phy.snr(0.0, 1.6e-5, 1e-13) == 0.0
    assert phy.snr(2e-3, 1e-5, 1e-13) == pytest.approx(2 * phy.snr(1e-3, 1e-5, 1e-13))


def test_snr_bound_unit_gain(cfg):
    # gamma <= P_bar N / sigma2 when every antenna gain is at most one
    assert phy.snr(cfg.P_bar, cfg.N * 1.0, cfg.noise_power) <= cfg.P_bar * cfg.N / cfg.noise_power * (1 + 1e-12)


def test_throughput_examples():
    rf = phy.RateFn(2.5e6, 1.0, 1.0)
    assert phy.throughput(rf, 1.0) == pytest.approx(2.5e6, rel=1e-12)
    assert phy.throughput(rf, 0.0) == 0.0
    rf = phy.RateFn(2.5e6, 1.6e6, 1.0)
    # 2.5e6 * log2(1 + 1.6e6) = 5.1524e7
    assert phy.throughput(rf, 1.0) == pytest.approx(5.1524e7, rel=1e-4)
    with pytest.raises(ValueError):
        phy.throughput(rf, -1.0)


def test_throughput_ceiling(cfg):
    rf = phy.RateFn(cfg.w_k, cfg.N * 1.0, cfg.noise_power)
    assert rf(cfg.P_bar) <= phy.max_throughput(cfg.W_total, cfg.P_bar, cfg.N, cfg.noise_power)


@given(st.lists(st.floats(1e-12, 1.0), min_size=3, max_size=3, unique=True), st.floats(1e-8, 1e-2))
def test_throughput_increasing_concave(ps, h):
    p1, p2, p3 = sorted(ps)
    rf = phy.RateFn(2.5e6, h, 1e-13)
    assert rf(p1) < rf(p2) < rf(p3)
    mid = 0.5 * (p1 + p3)
    assert rf(mid) >= 0.5 * (rf(p1) + rf(p3)) - 1e-12 * abs(rf(mid))


def test_derivative_matches_finite_differences():
    rf = phy.RateFn(2.5e6, 1e-5, 1e-13)
    for p in np.logspace(-10, -2, 25):
        h = 1e-4 * p
        fd = (rf(p + h) - rf(p - h)) / (2 * h)
        assert rf.derivative(p) == pytest.approx(fd, rel=1e-6)
        fd2 = (rf.derivative(p + h) - rf.derivative(p - h)) / (2 * h)
        assert rf.second_derivative(p) == pytest.approx(fd2, rel=1e-5)


def test_log1p_precision_near_zero():
    rf = phy.RateFn(1.0, 1.0, 1.0)
    assert rf(1e-20) == pytest.approx(1e-20 / np.log(2), rel=1e-12)


def test_effective_energy_examples():
    assert phy.effective_energy(0, 6e-4) == pytest.approx(6e-4)
    assert phy.effective_energy(1e-3, 0) == pytest.approx(1e-3)
    assert phy.effective_energy(1e-3, 6e-4) == pytest.approx(1.6e-3)


def test_min_power_examples():
    assert phy.min_power(0.1, 1e-13, 1.6e-5) == pytest.approx(6.25e-10, rel=1e-12)
    assert phy.min_power(0.0, 1e-13, 1.6e-5) == 0.0
    h = np.logspace(-8, 0, 30)
    assert np.all(np.diff(phy.min_power(0.1, 1e-13, h)) < 0)


@given(pos, pos, st.floats(0.01, 0.99), st.floats(1e-4, 1.0))
def test_energy_limited_power_spends_exactly(E, e, a, tau):
    p = phy.energy_limited_power(E, e, a, tau)
    assert p * (1 - a) * tau == pytest.approx(E + e, rel=1e-12)
