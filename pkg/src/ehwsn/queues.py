"""Data/energy queue recursions, the quadratic Lyapunov function and stability metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EnergyViolation(AssertionError):
    """Spend exceeded stored plus harvested energy: an upstream constraint bug."""


def update_data_queue(q, a, tau, r, alpha, cap_to_backlog=False):
    q = np.asarray(q, dtype=float)
    inflow = q + np.asarray(a) * tau
    served = np.asarray(r) * (1.0 - np.asarray(alpha)) * tau
    if cap_to_backlog:
        served = np.minimum(served, inflow)
    return np.maximum(0.0, inflow - served)


def update_energy_queue(E, e, p_i, alpha, tau, E_max, rtol=1e-9):
    E = np.asarray(E, dtype=float)
    avail = E + np.asarray(e)
    nxt = avail - np.asarray(p_i) * (1.0 - np.asarray(alpha)) * tau
    # roundoff from the post-clip allocation spending exactly `avail`
    if np.any(nxt < -rtol * np.maximum(avail, 1e-300)):
        raise EnergyViolation(f"energy queue would go negative: {np.min(nxt)!r}")
    return np.minimum(np.maximum(nxt, 0.0), E_max)


def lyapunov(q, tau):
    q = np.asarray(q, dtype=float)
    return 0.5 * float(np.sum(q * q)) / tau**2


def drift_upper_bound(lam, tau, L_t):
    return lyapunov(lam, tau) - L_t


@dataclass
class QueueTrace:
    """Per-frame queue history of one episode, shape (T, K) per array."""

    q: list = field(default_factory=list)
    E: list = field(default_factory=list)
    served: list = field(default_factory=list)
    harvested: list = field(default_factory=list)

    def append(self, q, E, served=None, harvested=None):
        self.q.append(np.asarray(q, dtype=float))
        self.E.append(np.asarray(E, dtype=float))
        if served is not None:
            self.served.append(np.asarray(served, dtype=float))
        if harvested is not None:
            self.harvested.append(np.asarray(harvested, dtype=float))

    @property
    def total_q(self) -> np.ndarray:
        return np.array([np.sum(v) for v in self.q])

    def __len__(self):
        return len(self.q)


def stability_metric(trace):
    """Time-averaged and peak total backlog ``||q[t]||_1``.

    Accepts a QueueTrace or an array of shape (T, K).
    """
    q = np.asarray(trace.q if isinstance(trace, QueueTrace) else trace, dtype=float)
    if q.size == 0 or len(q) == 0:
        raise ValueError("empty trace")
    tot = q.reshape(len(q), -1).sum(axis=1)
    return float(tot.mean()), float(tot.max())
