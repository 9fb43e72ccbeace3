import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ehwsn import queues

vec = lambda lo, hi: arrays(float, 3, elements=st.floats(lo, hi))


def test_data_queue_examples():
    assert queues.update_data_queue(1e5, 5e7, 1e-3, 0.0, 0.5) == pytest.approx(1.5e5)
    assert queues.update_data_queue(5e4, 5e7, 1e-3, 1.4e8, 0.5) == pytest.approx(3e4)
    assert queues.update_data_queue(1e3, 1e6, 1e-3, 1e9, 0.1) == 0.0


def test_backlog_cap_flag_only_limits_service():
    free = queues.update_data_queue(1e3, 1e6, 1e-3, 1e9, 0.1)
    capped = queues.update_data_queue(1e3, 1e6, 1e-3, 1e9, 0.1, cap_to_backlog=True)
    assert free == capped == 0.0


@given(vec(0, 1e7), vec(0, 1e8), vec(0, 1e8), vec(0, 1e8), vec(0, 1))
def test_data_queue_monotone_in_arrivals(q, a, extra, r, alpha):
    lo = queues.update_data_queue(q, a, 1e-3, r, alpha)
    hi = queues.update_data_queue(q, a + extra, 1e-3, r, alpha)
    assert np.all(lo <= hi) and np.all(lo >= 0)


def test_energy_queue_examples():
    assert queues.update_energy_queue(0, 6e-4, 0, 0.5, 1e-3, 3e3) == pytest.approx(6e-4)
    assert queues.update_energy_queue(1e-3, 0, 1.0, 0.5, 1e-3, 3e3) == pytest.approx(5e-4)
    assert queues.update_energy_queue(2.0, 1.0, 0.0, 0.5, 1e-3, 2.5) == 2.5


def test_energy_overspend_is_an_error():
    with pytest.raises(queues.EnergyViolation):
        queues.update_energy_queue(0.0, 1e-6, 1.0, 0.5, 1e-3, 3e3)


@given(vec(0, 1e-3), vec(0, 1e-3), vec(0.01, 0.99), st.floats(1e-4, 1.0))
def test_energy_conservation(E, e, alpha, frac):
    tau, E_max = 1e-3, 1.5e-3
    E = np.minimum(E, E_max)
    p = frac * (E + e) / ((1 - alpha) * tau)
    nxt = queues.update_energy_queue(E, e, p, alpha, tau, E_max)
    resid = nxt - E + p * (1 - alpha) * tau - e
    clamped = nxt == E_max
    assert np.all((np.abs(resid) <= 1e-12 * (E + e + 1e-300)) | clamped)
    assert np.all((nxt >= 0) & (nxt <= E_max))


def test_lyapunov_examples():
    assert queues.lyapunov([0, 0], 1e-3) == 0.0
    assert queues.lyapunov([1e-3, 1e-3], 1e-3) == pytest.approx(1.0)
    assert queues.lyapunov([1e5, 3e4], 1e-3) == pytest.approx(5.45e15)


def test_drift_bound_examples():
    assert queues.drift_upper_bound([0.0], 1e-3, 5.0) == -5.0
    q, q1 = np.array([1e5, 3e4]), np.array([2e4, 4e4])
    L = queues.lyapunov(q, 1e-3)
    exact = queues.lyapunov(q1, 1e-3) - L
    assert queues.drift_upper_bound(q1, 1e-3, L) == pytest.approx(exact, rel=1e-15)


@given(vec(0, 1e6), vec(0, 1e8), vec(0, 1e8), vec(0, 1), vec(0, 1e5))
def test_drift_bound_dominates(q, a, r, alpha, slack):
    tau = 1e-3
    q1 = queues.update_data_queue(q, a, tau, r, alpha)
    lam = q1 + slack
    L = queues.lyapunov(q, tau)
    ub = queues.drift_upper_bound(lam, tau, L)
    exact = queues.lyapunov(q1, tau) - L
    assert ub - exact >= -1e-9 * max(1.0, abs(exact))


def test_stability_metric():
    assert queues.stability_metric(np.ones((5, 2))) == (2.0, 2.0)
    T, slope = 10, 3.0
    lin = slope * np.arange(1, T + 1)[:, None]
    assert queues.stability_metric(lin)[0] == pytest.approx((T + 1) / 2 * slope)
    assert queues.stability_metric([[4.0, 1.0]]) == (5.0, 5.0)
    with pytest.raises(ValueError):
        queues.stability_metric(np.zeros((0, 2)))


def test_queue_trace():
    tr = queues.QueueTrace()
    tr.append([1.0, 2.0], [0.0, 0.0])
    tr.append([3.0, 0.0], [1e-6, 0.0])
    assert len(tr) == 2
    assert tr.total_q.tolist() == [3.0, 3.0]
    assert queues.stability_metric(tr) == (3.0, 3.0)
