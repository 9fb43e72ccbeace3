"""Shared domain types, configuration and unit conventions.

All quantities are SI unless a field name says otherwise: powers in W,
energies in J, rates in bit/s, queue backlogs in bit, time in s.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml


class ConfigError(ValueError):
    """Raised by :func:`validate_config` with the name of the violated invariant."""


def _scalar_or_array(v):
    return float(v) if np.ndim(v) == 0 else v


def dbm_to_watt(x):
    return _scalar_or_array(10.0 ** (np.asarray(x, dtype=float) / 10.0) / 1000.0)


def watt_to_dbm(p):
    return _scalar_or_array(10.0 * np.log10(np.asarray(p, dtype=float) * 1000.0))


def db_to_linear(x):
    return 10.0 ** (x / 10.0)


@dataclass(frozen=True)
class UnitScales:
    """Internal units used inside the convex solver.

    A physical value ``v`` is stored internally as ``v / scale``.
    """

    rate_scale: float = 1e6  # bit/s per internal rate unit (Mbit/s)
    power_scale: float = 1e-6  # node transmit power, W per unit (uW)
    beacon_power_scale: float = 1.0  # beacon power, W per unit
    energy_scale: float = 1e-6  # J per unit (uJ)
    queue_scale: float = 1e6  # bit per unit (Mbit)

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(f"{f.name} must be strictly positive")

    def to_internal(self, kind: str, value):
        return np.asarray(value, dtype=float) / getattr(self, f"{kind}_scale")

    def to_physical(self, kind: str, value):
        return np.asarray(value, dtype=float) * getattr(self, f"{kind}_scale")


@dataclass(frozen=True)
class SolverConfig:
    feas_tol: float = 1e-9
    gap_tol: float = 1e-7
    kkt_tol: float = 1e-6
    max_outer: int = 50
    max_inner: int = 100
    mu: float = 10.0
    armijo: float = 0.3
    shrink: float = 0.8
    ridge: float = 1e-10
    newton_tol: float = 1e-10
    backend: str = "compiled"  # "compiled" (numba centring) or "python"


@dataclass(frozen=True)
class SystemConfig:
    K: int = 4
    M: int = 16
    N: int = 16
    P_max: float = dbm_to_watt(43.0)
    P_bar: float = dbm_to_watt(10.0)  # per-node cap, identical for all nodes
    eta: float = 0.6
    tau: float = 1e-3
    W_total: float = 10e6
    sigma2: float | None = None  # None -> thermal noise over w_k plus noise figure
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 10.0
    gamma_min: float = db_to_linear(-10.0)
    E_max: float = 3e3
    a_range: tuple[float, float] = (40e6, 60e6)
    a_max: float = 60e6
    path_loss_exp: float = 3.0
    d_ref: float = 1.0
    pb_pos: tuple[float, float] = (-250.0, 0.0)
    ap_pos: tuple[float, float] = (0.0, 0.0)
    disk_radius: float = 250.0
    beta: float = 1e-4
    alpha_lo: float = 0.01
    alpha_hi: float = 0.99
    psi_floor: float = 1.0  # bit
    strict_margin: float = 1e-6
    warm_margin: float = 1e-9
    start_margin: float = 1e-2  # relative slack of the lifted first SCA start
    sca_tol: float = 1e-4
    max_sca_iter: int = 20
    cap_service_to_backlog: bool = False
    resample_topology: bool = True
    rng_seed: int = 0
    units: UnitScales = field(default_factory=UnitScales)
    solver: SolverConfig = field(default_factory=SolverConfig)

    @property
    def w_k(self) -> float:
        return self.W_total / self.K

    @property
    def noise_power(self) -> float:
        """Resolved noise power per node band (W)."""
        if self.sigma2 is not None:
            return self.sigma2
        return thermal_noise(self.w_k, self.noise_psd_dbm_hz, self.noise_figure_db)

    @property
    def a_lo(self) -> float:
        return self.a_range[0]

    @property
    def a_hi(self) -> float:
        return self.a_range[1]


def thermal_noise(bandwidth, psd_dbm_hz=-174.0, noise_figure_db=10.0):
    return dbm_to_watt(psd_dbm_hz + 10.0 * math.log10(bandwidth) + noise_figure_db)


_CHECKS = [
    ("K >= 1", lambda c: c.K >= 1),
    ("M >= 1", lambda c: c.M >= 1),
    ("N >= 1", lambda c: c.N >= 1),
    ("eta out of (0,1)", lambda c: 0.0 < c.eta < 1.0),
    ("tau > 0", lambda c: c.tau > 0),
    ("W_total > 0", lambda c: c.W_total > 0),
    ("P_bar > 0", lambda c: c.P_bar > 0),
    ("P_max > 0", lambda c: c.P_max > 0),
    ("a_lo <= a_hi", lambda c: 0 <= c.a_lo <= c.a_hi),
    ("a_hi <= a_max < inf", lambda c: c.a_hi <= c.a_max < math.inf),
    ("sigma2 > 0", lambda c: c.sigma2 is None or c.sigma2 > 0),
    ("gamma_min > 0", lambda c: c.gamma_min > 0),
    ("E_max > 0", lambda c: c.E_max > 0),
    ("beta > 0", lambda c: c.beta > 0),
    ("path_loss_exp > 0", lambda c: c.path_loss_exp > 0),
    ("d_ref > 0", lambda c: c.d_ref > 0),
    ("disk_radius > 0", lambda c: c.disk_radius > 0),
    ("alpha box inside (0,1)", lambda c: 0.0 < c.alpha_lo < c.alpha_hi < 1.0),
    ("psi_floor > 0", lambda c: c.psi_floor > 0),
    ("strict_margin in (0,1)", lambda c: 0.0 < c.strict_margin < 1.0),
    ("warm_margin in (0,1)", lambda c: 0.0 < c.warm_margin < 1.0),
    ("start_margin in (0,1)", lambda c: 0.0 < c.start_margin < 1.0),
    ("sca_tol > 0", lambda c: c.sca_tol > 0),
    ("max_sca_iter >= 1", lambda c: c.max_sca_iter >= 1),
    ("solver.backend in {compiled, python}", lambda c: c.solver.backend in ("compiled", "python")),
    ("solver tolerances > 0", lambda c: min(c.solver.feas_tol, c.solver.gap_tol, c.solver.kkt_tol) > 0),
    ("solver.mu > 1", lambda c: c.solver.mu > 1),
    ("solver line search in (0,1)", lambda c: 0 < c.solver.armijo < 0.5 and 0 < c.solver.shrink < 1),
]


def validate_config(cfg: SystemConfig) -> SystemConfig:
    """Check every invariant and return the config with sigma2 resolved.

    Raises ConfigError naming the first violated invariant.
    """
    for name, ok in _CHECKS:
        try:
            passed = bool(ok(cfg))
        except TypeError:
            passed = False
        if not passed:
            raise ConfigError(name)
    if not math.isclose(cfg.w_k * cfg.K, cfg.W_total, rel_tol=1e-12):
        raise ConfigError("w_k * K == W_total")
    return dataclasses.replace(
        cfg,
        sigma2=float(cfg.noise_power),
        a_range=(float(cfg.a_range[0]), float(cfg.a_range[1])),
        pb_pos=tuple(float(v) for v in cfg.pb_pos),
        ap_pos=tuple(float(v) for v in cfg.ap_pos),
    )


# ---------------------------------------------------------------------------
# per-frame state and decisions


@dataclass(frozen=True)
class FrameState:
    t: int
    g_norm2: np.ndarray
    h_norm2: np.ndarray
    a: np.ndarray
    q: np.ndarray
    E: np.ndarray

    @property
    def K(self) -> int:
        return len(self.g_norm2)

    def check(self, cfg: SystemConfig, tol: float = 1e-12) -> None:
        if np.any(self.q < 0):
            raise ValueError("q must be non-negative")
        if np.any(self.E < 0) or np.any(self.E > cfg.E_max * (1 + tol)):
            raise ValueError("E must lie in [0, E_max]")
        if np.any(self.g_norm2 <= 0) or np.any(self.h_norm2 <= 0):
            raise ValueError("channel gains must be positive")
        if np.any(self.a < cfg.a_lo * (1 - tol)) or np.any(self.a > cfg.a_hi * (1 + tol)):
            raise ValueError("arrival rate outside a_range")


@dataclass(frozen=True)
class Allocation:
    p_e: np.ndarray
    p_i: np.ndarray
    alpha: np.ndarray


@dataclass(frozen=True)
class SlackState:
    lam: np.ndarray  # bit
    psi: np.ndarray  # bit
    alpha_hat: np.ndarray


# ---------------------------------------------------------------------------
# config file


_NESTED = {"units": UnitScales, "solver": SolverConfig}


def _num(v):
    # YAML 1.1 reads "1.0e6" (no exponent sign) as a string
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return v
    if isinstance(v, list):
        return [_num(x) for x in v]
    if isinstance(v, dict):
        return {k: _num(x) for k, x in v.items()}
    return v


def config_from_dict(d: dict) -> SystemConfig:
    """Build a config from a flat mapping.

    Power fields accept either watts (``P_max``) or dBm (``P_max_dbm``).
    Keys of the nested units/solver records are accepted flat with
    ``units.`` / ``solver.`` prefixes or as nested mappings.
    """
    names = {f.name for f in dataclasses.fields(SystemConfig)}
    kw: dict = {}
    nested: dict = {k: {} for k in _NESTED}
    for key, val in d.items():
        val = _num(val)
        if key.endswith("_dbm"):
            base = key[: -len("_dbm")]
            if base not in names:
                raise ConfigError(f"unknown key {key}")
            kw[base] = float(dbm_to_watt(float(val)))
        elif key.endswith("_db") and key[: -len("_db")] == "gamma_min":
            kw["gamma_min"] = db_to_linear(float(val))
        elif "." in key and key.split(".", 1)[0] in _NESTED:
            head, tail = key.split(".", 1)
            nested[head][tail] = val
        elif key in _NESTED and isinstance(val, dict):
            nested[key].update(val)
        elif key in names:
            kw[key] = tuple(val) if isinstance(val, list) else val
        else:
            raise ConfigError(f"unknown key {key}")
    for head, cls in _NESTED.items():
        if nested[head]:
            allowed = {f.name for f in dataclasses.fields(cls)}
            bad = set(nested[head]) - allowed
            if bad:
                raise ConfigError(f"unknown key {head}.{sorted(bad)[0]}")
            kw[head] = cls(**nested[head])
    return SystemConfig(**kw)


def config_to_dict(cfg: SystemConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in _NESTED:
            for g in dataclasses.fields(v):
                out[f"{f.name}.{g.name}"] = getattr(v, g.name)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def load_config(path) -> SystemConfig:
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must be a key-value mapping")
    return validate_config(config_from_dict(data))


def dump_config(cfg: SystemConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))
