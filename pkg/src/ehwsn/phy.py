"""Physical-layer formulas: harvested energy, SNR, throughput, power bounds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LN2 = np.log(2.0)


def _nonneg(name, *vals):
    for v in vals:
        if np.any(np.asarray(v) < 0):
            raise ValueError(f"{name}: negative input")


def harvested_energy(eta, tau, alpha, p_e, g_norm2):
    """Energy (J) collected during the harvest share ``alpha`` of a frame."""
    _nonneg("harvested_energy", eta, tau, alpha, p_e, g_norm2)
    return eta * tau * np.asarray(alpha) * np.asarray(p_e) * np.asarray(g_norm2)


def snr(p_i, h_norm2, sigma2):
    return np.asarray(p_i) * np.asarray(h_norm2) / sigma2


@dataclass(frozen=True)
class RateFn:
    """Uplink rate ``w * log2(1 + p * h_norm2 / sigma2)`` as a function of ``p``.

    Works elementwise when ``w``/``h_norm2`` are arrays (one entry per node).
    """

    w: float | np.ndarray
    h_norm2: float | np.ndarray
    sigma2: float

    @property
    def gain(self):
        return np.asarray(self.h_norm2) / self.sigma2

    def __call__(self, p):
        return self.w * np.log1p(np.asarray(p) * self.gain) / LN2

    def derivative(self, p):
        c = self.gain
        return self.w * c / ((1.0 + np.asarray(p) * c) * LN2)

    def second_derivative(self, p):
        c = self.gain
        return -self.w * c * c / ((1.0 + np.asarray(p) * c) ** 2 * LN2)


def throughput(rate_fn: RateFn, p_i):
    _nonneg("throughput", p_i)
    return rate_fn(p_i)


def effective_energy(E, e):
    _nonneg("effective_energy", E, e)
    return np.asarray(E) + np.asarray(e)


def min_power(gamma_min, sigma2, h_norm2):
    """Smallest transmit power meeting the SNR floor."""
    return gamma_min * sigma2 / np.asarray(h_norm2)


def energy_limited_power(E, e, alpha, tau):
    """Largest power the stored plus harvested energy sustains over the WIT phase."""
    return (np.asarray(E) + np.asarray(e)) / ((1.0 - np.asarray(alpha)) * tau)


def max_throughput(W_total, P_bar, N, sigma2, pl_max=1.0):
    """Throughput ceiling ``W log2(1 + P_bar N pl_max / sigma2)``."""
    return W_total * np.log1p(P_bar * N * pl_max / sigma2) / LN2
