"""Inner-approximation SCA for the per-frame drift-plus-penalty program.

Per frame the engine maximises ``beta * sum_k r_k(p_i) - DeltaL_UB`` over
beacon powers, transmit powers, harvest fractions and the slacks
``lam`` (queue bound), ``psi`` (backlog deficit) and ``alpha_hat``
(inverse WIT share). Each iteration replaces the nonconvex pieces with
convex surrogates that are tight at the current expansion point, solves
the resulting convex program with :mod:`ehwsn.solver`, clips the transmit
power to the energy actually available, and re-expands.

Variables live in internal units (see :class:`ehwsn.config.UnitScales`);
the layout is six blocks of K entries: p_e, p_i, alpha, lam, psi, alpha_hat.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels, phy, queues
from .config import Allocation, FrameState, SlackState, SystemConfig
from .solver import Affine, ConvexProblem, InfeasibleStart, Smooth, fix_variables, solve

log = logging.getLogger(__name__)

LN2 = np.log(2.0)
PE, PI, AL, LAM, PSI, AH = range(6)
VAR_NAMES = ("p_e", "p_i", "alpha", "lam", "psi", "alpha_hat")
SCHEMES = ("proposed", "equal-power", "max-power", "equal-time")


class InfeasibleFrame(RuntimeError):
    def __init__(self, nodes, msg=""):
        super().__init__(msg or f"minimum power unreachable for nodes {list(nodes)}")
        self.nodes = list(nodes)


# ---------------------------------------------------------------------------
# scalar surrogate bounds


def _positive(name, *vals):
    for v in vals:
        if np.any(np.asarray(v) <= 0):
            raise ValueError(f"{name}: inputs must be strictly positive")


def taylor_inv_lower(x, x_bar):
    """Tangent minorant of ``1/x`` at ``x_bar``."""
    _positive("taylor_inv_lower", x, x_bar)
    x, x_bar = np.asarray(x, dtype=float), np.asarray(x_bar, dtype=float)
    return 2.0 / x_bar - x / x_bar**2


def taylor_quad_over_lin_lower(x, y, x_bar, y_bar):
    """Tangent minorant of ``x**2 / y`` at ``(x_bar, y_bar)``."""
    _positive("taylor_quad_over_lin_lower", x, y, x_bar, y_bar)
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return 2.0 * x_bar * x / y_bar - (x_bar**2 / y_bar**2) * y


def bilinear_upper(psi, alpha_hat, psi_bar, alpha_hat_bar):
    """Convex majorant of ``psi * alpha_hat`` (AM-GM), tight when the ratios match."""
    _positive("bilinear_upper", psi, alpha_hat, psi_bar, alpha_hat_bar)
    psi, alpha_hat = np.asarray(psi, dtype=float), np.asarray(alpha_hat, dtype=float)
    return 0.5 * (psi_bar / alpha_hat_bar) * alpha_hat**2 + 0.5 * (alpha_hat_bar / psi_bar) * psi**2


def coupling_rhs_exact(E, tau, eta, g_norm2, alpha, p_e):
    """Right side of the energy-rate coupling once the difference-of-squares term
    ``eta g (alpha - p_e)^2 / (4 (1 - alpha))`` has been moved to the left."""
    s = 1.0 - np.asarray(alpha)
    return E / (tau * s) + eta * g_norm2 * (np.asarray(alpha) + p_e) ** 2 / (4.0 * s)


def coupling_rhs_surrogate(E, tau, eta, g_norm2, alpha, p_e, alpha_bar, p_e_bar):
    s, s_bar = 1.0 - np.asarray(alpha), 1.0 - alpha_bar
    return (E / tau) * taylor_inv_lower(s, s_bar) + 0.25 * eta * g_norm2 * taylor_quad_over_lin_lower(
        np.asarray(alpha) + p_e, s, alpha_bar + p_e_bar, s_bar)


def coupling_lhs(p_i, eta, g_norm2, alpha, p_e):
    return p_i + eta * g_norm2 * (np.asarray(alpha) - p_e) ** 2 / (4.0 * (1.0 - np.asarray(alpha)))


def soc_holds(alpha, alpha_hat):
    """Cone form ``||(1, (ah - 1 + a)/2)|| <= (ah + 1 - a)/2`` of ``1/(1-a) <= ah``."""
    alpha, alpha_hat = np.asarray(alpha, dtype=float), np.asarray(alpha_hat, dtype=float)
    lhs = np.hypot(1.0, 0.5 * (alpha_hat - 1.0 + alpha))
    rhs = 0.5 * (alpha_hat + 1.0 - alpha)
    return lhs <= rhs


def smooth_time_slack_holds(alpha, alpha_hat):
    return 1.0 / (1.0 - np.asarray(alpha, dtype=float)) <= np.asarray(alpha_hat, dtype=float)


# ---------------------------------------------------------------------------
# expansion point and per-frame constants


@dataclass(frozen=True)
class ExpansionPoint:
    alpha_bar: np.ndarray
    p_e_bar: np.ndarray  # W
    psi_bar: np.ndarray  # bit
    alpha_hat_bar: np.ndarray

    def check(self, cfg: SystemConfig):
        if np.any(self.alpha_bar < cfg.alpha_lo) or np.any(self.alpha_bar > cfg.alpha_hi):
            raise ValueError("alpha_bar outside the alpha box")
        if np.any(self.psi_bar < cfg.psi_floor * (1 - 1e-12)):
            raise ValueError("psi_bar below psi_floor")
        if np.any(self.alpha_hat_bar < 1.0 / (1.0 - self.alpha_bar) - 1e-9):
            raise ValueError("alpha_hat_bar below 1/(1-alpha_bar)")
        if np.any(self.p_e_bar < 0):
            raise ValueError("p_e_bar negative")


@dataclass(frozen=True)
class Layout:
    K: int

    @property
    def n(self) -> int:
        return 6 * self.K

    def idx(self, var: int, k=None):
        base = var * self.K
        return base + (np.arange(self.K) if k is None else np.asarray(k))


@dataclass(frozen=True)
class FrameConstants:
    """Per-node coefficients of the subproblem in internal units."""

    A: np.ndarray  # eta*g*Pb/Pi: harvest-power coefficient of alpha*p_e/(1-alpha)
    B: np.ndarray  # E/(tau*Pi): stored energy as a power over one frame
    c: np.ndarray  # SNR per internal power unit
    rho: float  # tau*w/(Q ln 2): served internal queue units per unit log1p
    D: np.ndarray  # (q + a tau)/Q
    p_min: np.ndarray  # W
    obj_scale: float
    rate_fn: phy.RateFn


def frame_constants(frame: FrameState, cfg: SystemConfig, battery: bool = True) -> FrameConstants:
    u = cfg.units
    Pb, Pi, Q = u.beacon_power_scale, u.power_scale, u.queue_scale
    sigma2 = cfg.noise_power
    E = np.asarray(frame.E, dtype=float) if battery else np.zeros(frame.K)
    return FrameConstants(
        A=cfg.eta * frame.g_norm2 * Pb / Pi,
        B=E / (cfg.tau * Pi),
        c=Pi * frame.h_norm2 / sigma2,
        rho=cfg.tau * cfg.w_k / (Q * LN2),
        D=(frame.q + frame.a * cfg.tau) / Q,
        p_min=phy.min_power(cfg.gamma_min, sigma2, frame.h_norm2),
        obj_scale=(Q / cfg.tau) ** 2,
        rate_fn=phy.RateFn(cfg.w_k, frame.h_norm2, sigma2),
    )


def to_internal(alloc: Allocation, slack: SlackState, cfg: SystemConfig) -> np.ndarray:
    u = cfg.units
    return np.concatenate([
        np.asarray(alloc.p_e) / u.beacon_power_scale,
        np.asarray(alloc.p_i) / u.power_scale,
        np.asarray(alloc.alpha, dtype=float),
        np.asarray(slack.lam) / u.queue_scale,
        np.asarray(slack.psi) / u.queue_scale,
        np.asarray(slack.alpha_hat, dtype=float),
    ])


def from_internal(x, cfg: SystemConfig):
    u = cfg.units
    b = np.asarray(x, dtype=float).reshape(6, -1)
    alloc = Allocation(b[PE] * u.beacon_power_scale, b[PI] * u.power_scale, b[AL].copy())
    slack = SlackState(b[LAM] * u.queue_scale, b[PSI] * u.queue_scale, b[AH].copy())
    return alloc, slack


# ---------------------------------------------------------------------------
# constraint builders (rows for a subset of nodes, full 6K layout)


def _support(lay: Layout, nodes, vars_):
    S = np.zeros((len(nodes), lay.n), dtype=bool)
    for r, k in enumerate(nodes):
        for v in vars_:
            S[r, lay.idx(v, k)] = True
    return S


def _nodes(lay, nodes):
    return np.arange(lay.K) if nodes is None else np.atleast_1d(np.asarray(nodes, dtype=int))


def power_coupling_block(fc: FrameConstants, point: ExpansionPoint, cfg: SystemConfig, lay: Layout, nodes=None):
    """Convex inner approximation of ``p_i <= e_eff / ((1 - alpha) tau)`` for ``nodes``.

    Row k reads ``p_i + A (alpha - u)^2 / (4 (1-alpha)) - S_k(alpha, u) <= 0`` with
    ``S_k`` the affine minorant of the convex right-hand side taken at the
    expansion point.
    """
    ks = _nodes(lay, nodes)
    A, B = fc.A[ks], fc.B[ks]
    ab = np.asarray(point.alpha_bar, dtype=float)[ks]
    ub = np.asarray(point.p_e_bar, dtype=float)[ks] / cfg.units.beacon_power_scale
    sb = 1.0 - ab
    m_ = ab + ub
    # d S / d alpha, d S / d u (S is affine)
    dS_da = B / sb**2 + 0.25 * A * (2.0 * m_ / sb + m_**2 / sb**2)
    dS_du = 0.25 * A * 2.0 * m_ / sb
    iu, iv, ia = lay.idx(PE, ks), lay.idx(PI, ks), lay.idx(AL, ks)
    rows = np.arange(len(ks))

    def parts(x):
        a, uu, v = x[ia], x[iu], x[iv]
        s = 1.0 - a
        z = a - uu
        S = B * (2.0 / sb - s / sb**2) + 0.25 * A * (2.0 * m_ * (a + uu) / sb - m_**2 * s / sb**2)
        return a, uu, v, s, z, S

    def value(x):
        a, uu, v, s, z, S = parts(x)
        return v + 0.25 * A * z * z / s - S

    def jacobian(x):
        a, uu, v, s, z, S = parts(x)
        J = np.zeros((len(ks), lay.n))
        J[rows, iv] = 1.0
        J[rows, ia] = 0.25 * A * (2.0 * z / s + z * z / s**2) - dS_da
        J[rows, iu] = 0.25 * A * (-2.0 * z / s) - dS_du
        return J

    def hessian(x, w):
        a, uu, v, s, z, S = parts(x)
        H = np.zeros((lay.n, lay.n))
        c = 0.25 * A * w
        haa = 2.0 / s + 4.0 * z / s**2 + 2.0 * z * z / s**3
        hau = -2.0 / s - 2.0 * z / s**2
        huu = 2.0 / s
        H[ia, ia] = c * haa
        H[ia, iu] = c * hau
        H[iu, ia] = c * hau
        H[iu, iu] = c * huu
        return H

    return Smooth("quadratic-over-linear", _support(lay, ks, (PE, PI, AL)), value, jacobian, hessian,
                  names=[f"coupling[{k}]" for k in ks])


def rate_block(fc: FrameConstants, point: ExpansionPoint, cfg: SystemConfig, lay: Layout, nodes=None):
    """``bilinear_upper(psi, alpha_hat) - tau * r_k(p_i) <= 0`` in internal queue units."""
    ks = _nodes(lay, nodes)
    Q = cfg.units.queue_scale
    pb = np.asarray(point.psi_bar, dtype=float)[ks] / Q
    hb = np.asarray(point.alpha_hat_bar, dtype=float)[ks]
    c, rho = fc.c[ks], fc.rho
    ca, cp = pb / hb, hb / pb
    iv, ip, ih = lay.idx(PI, ks), lay.idx(PSI, ks), lay.idx(AH, ks)
    rows = np.arange(len(ks))

    def value(x):
        return 0.5 * ca * x[ih] ** 2 + 0.5 * cp * x[ip] ** 2 - rho * np.log1p(c * x[iv])

    def jacobian(x):
        J = np.zeros((len(ks), lay.n))
        J[rows, ih] = ca * x[ih]
        J[rows, ip] = cp * x[ip]
        J[rows, iv] = -rho * c / (1.0 + c * x[iv])
        return J

    def hessian(x, w):
        H = np.zeros((lay.n, lay.n))
        H[ih, ih] = w * ca
        H[ip, ip] = w * cp
        H[iv, iv] = w * rho * c * c / (1.0 + c * x[iv]) ** 2
        return H

    return Smooth("neg-log-rate", _support(lay, ks, (PI, PSI, AH)), value, jacobian, hessian,
                  names=[f"rate[{k}]" for k in ks])


def time_slack_block(lay: Layout, nodes=None):
    """Smooth form ``1/(1 - alpha) - alpha_hat <= 0`` of the cone constraint."""
    ks = _nodes(lay, nodes)
    ia, ih = lay.idx(AL, ks), lay.idx(AH, ks)
    rows = np.arange(len(ks))

    def value(x):
        return 1.0 / (1.0 - x[ia]) - x[ih]

    def jacobian(x):
        J = np.zeros((len(ks), lay.n))
        J[rows, ia] = 1.0 / (1.0 - x[ia]) ** 2
        J[rows, ih] = -1.0
        return J

    def hessian(x, w):
        H = np.zeros((lay.n, lay.n))
        H[ia, ia] = w * 2.0 / (1.0 - x[ia]) ** 3
        return H

    return Smooth("reciprocal", _support(lay, ks, (AL, AH)), value, jacobian, hessian,
                  names=[f"time_slack[{k}]" for k in ks])


def deficit_block(fc: FrameConstants, lay: Layout, nodes=None) -> Affine:
    """``q + a tau - lam - psi <= 0`` (internal queue units)."""
    ks = _nodes(lay, nodes)
    A = np.zeros((len(ks), lay.n))
    rows = np.arange(len(ks))
    A[rows, lay.idx(LAM, ks)] = -1.0
    A[rows, lay.idx(PSI, ks)] = -1.0
    return Affine(A, -fc.D[ks], names=[f"deficit[{k}]" for k in ks])


def budget_block(cfg: SystemConfig, lay: Layout) -> Affine:
    A = np.zeros((1, lay.n))
    A[0, lay.idx(PE)] = 1.0
    return Affine(A, [cfg.P_max / cfg.units.beacon_power_scale], names=["budget"])


def fused_oracle(fc: FrameConstants, point: ExpansionPoint, cfg: SystemConfig, lay: Layout):
    """Single-pass evaluators for all subproblem rows.

    Row order matches :func:`build_subproblem`: budget, deficit, coupling,
    rate, time slack. Same formulas as the per-block builders, which the
    tests cross-check.
    """
    K, n = lay.K, lay.n
    m = 1 + 4 * K
    P_max = cfg.P_max / cfg.units.beacon_power_scale
    A, B, D, c, rho = fc.A, fc.B, fc.D, fc.c, fc.rho
    ab = np.asarray(point.alpha_bar, dtype=float)
    ub = np.asarray(point.p_e_bar, dtype=float) / cfg.units.beacon_power_scale
    sb = 1.0 - ab
    mb = ab + ub
    # affine minorant S = s0 + sa * alpha + su * u
    sa = B / sb**2 + 0.25 * A * (2.0 * mb / sb + mb**2 / sb**2)
    su = 0.5 * A * mb / sb
    s0 = B * (2.0 / sb - 1.0 / sb**2) - 0.25 * A * mb**2 / sb**2
    Q = cfg.units.queue_scale
    pb = np.asarray(point.psi_bar, dtype=float) / Q
    hb = np.asarray(point.alpha_hat_bar, dtype=float)
    ca, cp = pb / hb, hb / pb
    iu, iv, ia, il, ip, ih = (lay.idx(v) for v in range(6))
    r_def = 1 + np.arange(K)
    r_cpl, r_rate, r_time = r_def + K, r_def + 2 * K, r_def + 3 * K
    J0 = np.zeros((m, n))
    J0[0, iu] = 1.0
    J0[r_def, il] = -1.0
    J0[r_def, ip] = -1.0
    J0[r_cpl, iv] = 1.0
    J0[r_time, ih] = -1.0

    def values(x):
        u, v, a, l_, p, h = x.reshape(6, K)
        s = 1.0 - a
        z = a - u
        out = np.empty(m)
        out[0] = u.sum() - P_max
        out[r_def] = D - l_ - p
        out[r_cpl] = v + 0.25 * A * z * z / s - (s0 + sa * a + su * u)
        out[r_rate] = 0.5 * ca * h * h + 0.5 * cp * p * p - rho * np.log1p(c * v)
        out[r_time] = 1.0 / s - h
        return out

    def derivs(x, w):
        u, v, a, l_, p, h = x.reshape(6, K)
        s = 1.0 - a
        z = a - u
        J = J0.copy()
        J[r_cpl, ia] = 0.25 * A * (2.0 * z / s + z * z / s**2) - sa
        J[r_cpl, iu] = -0.5 * A * z / s - su
        J[r_rate, ih] = ca * h
        J[r_rate, ip] = cp * p
        J[r_rate, iv] = -rho * c / (1.0 + c * v)
        J[r_time, ia] = 1.0 / s**2
        H = np.zeros((n, n))
        wc, wr, wt = w[r_cpl], w[r_rate], w[r_time]
        q = 0.25 * A * wc
        hau = q * (-2.0 / s - 2.0 * z / s**2)
        H[ia, ia] = q * (2.0 / s + 4.0 * z / s**2 + 2.0 * z * z / s**3) + wt * 2.0 / s**3
        H[ia, iu] = hau
        H[iu, ia] = hau
        H[iu, iu] = q * 2.0 / s
        H[ih, ih] = wr * ca
        H[ip, ip] = wr * cp
        H[iv, iv] = wr * rho * c * c / (1.0 + c * v) ** 2
        return J, H

    return values, derivs


def _layout_for(frame):
    return Layout(frame.K)


def build_power_coupling_constraint(frame: FrameState, k: int, point: ExpansionPoint, cfg: SystemConfig,
                                    battery: bool = True):
    lay = _layout_for(frame)
    return power_coupling_block(frame_constants(frame, cfg, battery), point, cfg, lay, [k])


def build_rate_constraint(frame: FrameState, k: int, point: ExpansionPoint, cfg: SystemConfig):
    """Rate surrogate row plus the linear deficit row for node ``k``.

    The ``psi >= psi_floor`` part is a variable bound of the subproblem box.
    """
    lay = _layout_for(frame)
    fc = frame_constants(frame, cfg)
    return rate_block(fc, point, cfg, lay, [k]), deficit_block(fc, lay, [k])


def build_time_slack_constraint(frame: FrameState, k: int):
    return time_slack_block(_layout_for(frame), [k])


def soc_parity_check(alpha, alpha_hat) -> bool:
    """True when the smooth and cone forms classify every sample identically."""
    return bool(np.all(soc_holds(alpha, alpha_hat) == smooth_time_slack_holds(alpha, alpha_hat)))


# ---------------------------------------------------------------------------
# subproblem


def build_subproblem(frame: FrameState, point: ExpansionPoint, beta: float, cfg: SystemConfig,
                     battery: bool = True) -> ConvexProblem:
    """Convex program of one SCA iteration (6K variables, 5K+1 constraint families).

    The objective is scaled by ``1/obj_scale`` and omits the constant
    ``L[t]``; ``meta['objective_physical']`` undoes both.
    """
    lay = _layout_for(frame)
    K = lay.K
    fc = frame_constants(frame, cfg, battery)
    u = cfg.units
    w_coef = beta * cfg.w_k / (LN2 * fc.obj_scale)
    iv, il = lay.idx(PI), lay.idx(LAM)
    c = fc.c

    def objective(x):
        return float(w_coef * np.sum(np.log1p(c * x[iv])) - 0.5 * np.sum(x[il] ** 2))

    def gradient(x):
        g = np.zeros(lay.n)
        g[iv] = w_coef * c / (1.0 + c * x[iv])
        g[il] = -x[il]
        return g

    def hessian(x):
        H = np.zeros((lay.n, lay.n))
        H[iv, iv] = -w_coef * c * c / (1.0 + c * x[iv]) ** 2
        H[il, il] = -1.0
        return H

    lo = np.concatenate([
        np.zeros(K),
        fc.p_min / u.power_scale,
        np.full(K, cfg.alpha_lo),
        np.zeros(K),
        np.full(K, cfg.psi_floor / u.queue_scale),
        np.ones(K),
    ])
    hi = np.concatenate([
        np.full(K, np.inf),
        np.full(K, cfg.P_bar / u.power_scale),
        np.full(K, cfg.alpha_hi),
        np.full(K, np.inf),
        np.full(K, np.inf),
        np.full(K, np.inf),
    ])
    cons = [
        budget_block(cfg, lay),
        deficit_block(fc, lay),
        power_coupling_block(fc, point, cfg, lay),
        rate_block(fc, point, cfg, lay),
        time_slack_block(lay),
    ]
    L_t = queues.lyapunov(frame.q, cfg.tau)
    meta = dict(layout=lay, constants=fc, L_t=L_t, beta=beta, battery=battery, point=point,
                objective_physical=lambda f: f * fc.obj_scale)
    fv, fd = fused_oracle(fc, point, cfg, lay)
    prob = ConvexProblem(lay.n, objective, gradient, hessian, cons, lo, hi, meta, fv, fd)
    meta["kernel_args"] = _kernel_args(fc, point, cfg, K, w_coef)
    prob.centering = _centering(prob, prob)
    return prob


def _kernel_args(fc: FrameConstants, point: ExpansionPoint, cfg: SystemConfig, K: int, w_coef: float):
    Pb, Q = cfg.units.beacon_power_scale, cfg.units.queue_scale
    ab = np.asarray(point.alpha_bar, dtype=float)
    sb = 1.0 - ab
    mb = ab + np.asarray(point.p_e_bar, dtype=float) / Pb
    A, B = fc.A, fc.B
    pb = np.asarray(point.psi_bar, dtype=float) / Q
    hb = np.asarray(point.alpha_hat_bar, dtype=float)
    return (K, cfg.P_max / Pb, np.ascontiguousarray(fc.D, dtype=float), np.ascontiguousarray(A, dtype=float),
            B * (2.0 / sb - 1.0 / sb**2) - 0.25 * A * mb**2 / sb**2,
            B / sb**2 + 0.25 * A * (2.0 * mb / sb + mb**2 / sb**2),
            0.5 * A * mb / sb, np.ascontiguousarray(fc.c, dtype=float), float(fc.rho),
            pb / hb, hb / pb, float(w_coef))


def _centering(full: ConvexProblem, restricted: ConvexProblem):
    """Compiled centring for ``restricted``, a variable-fixed view of ``full``."""
    if not kernels.HAVE_NUMBA:
        return None
    args = full.meta["kernel_args"]
    m_full = 1 + 4 * args[0]
    free = restricted.meta.get("free")
    rows = restricted.meta.get("rows")
    free = np.arange(full.n) if free is None else np.asarray(free, dtype=np.int64)
    act = np.ones(m_full, dtype=np.bool_)
    if rows is not None:
        act[:] = False
        act[np.asarray(rows, dtype=int)] = True
    lo, hi = full.lo, full.hi
    expand = restricted.expand

    def run(xr, t, opts):
        x = np.ascontiguousarray(expand(xr), dtype=float)
        xs, steps, status = kernels.center(x, float(t), free, lo, hi, act, *args, opts.armijo, opts.shrink,
                                          opts.ridge, opts.newton_tol, opts.max_inner)
        return xs[free], int(steps), status != kernels.OK

    return run


def constraint_family_counts(problem: ConvexProblem) -> dict:
    """Family counts: budget, (p_min, alpha) box, coupling,
    deficit, rate, cone."""
    lay = problem.meta["layout"]
    kinds = {}
    for c in problem.constraints:
        kinds[c.kind] = kinds.get(c.kind, 0) + c.m
    return dict(n=problem.n, families=1 + 5 * lay.K, by_kind=kinds)


def max_power_rule(frame: FrameState, alpha, p_e, cfg: SystemConfig):
    """``min{e / ((1 - alpha) tau), P_bar}`` using only this frame's harvest."""
    e = phy.harvested_energy(cfg.eta, cfg.tau, alpha, p_e, frame.g_norm2)
    return np.minimum(e / ((1.0 - np.asarray(alpha)) * cfg.tau), cfg.P_bar)


def _shrink_to_floor(p, p_min, margin):
    return p_min + (1.0 - margin) * (p - p_min)


def scheme_restrict(scheme: str, problem: ConvexProblem, frame: FrameState, point: ExpansionPoint,
                    cfg: SystemConfig, margin: float | None = None) -> ConvexProblem:
    """Specialise a subproblem to one of the benchmark schemes by fixing variables."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if scheme in ("proposed", "max-power"):
        return problem
    lay: Layout = problem.meta["layout"]
    u = cfg.units
    fixed = {}
    if scheme == "equal-power":
        val = cfg.P_max / lay.K / u.beacon_power_scale
        fixed = {int(i): val for i in lay.idx(PE)}
    elif scheme == "equal-time":
        fixed = {int(i): 0.5 for i in lay.idx(AL)}
        fixed.update({int(i): 2.0 for i in lay.idx(AH)})
    # max-power keeps p_i free: with no battery the coupling row caps p_i at
    # the harvest-limited rule, and _clipped applies that rule afterwards
    return fix_variables(problem, fixed, cfg.solver.feas_tol)


# ---------------------------------------------------------------------------
# initial point


def initial_point(frame: FrameState, cfg: SystemConfig, scheme: str = "proposed"):
    """Strictly feasible start for the first SCA subproblem.

    Raises InfeasibleFrame when the energy-limited power at the start
    cannot reach the SNR floor for some node.
    """
    K, m = frame.K, cfg.strict_margin
    tau = cfg.tau
    alpha = np.full(K, 0.5)
    if scheme == "equal-power":
        p_e = np.full(K, cfg.P_max / K)
    else:
        p_e = np.full(K, cfg.P_max / K * (1.0 - m))
    E = np.zeros(K) if scheme == "max-power" else np.asarray(frame.E, dtype=float)
    e = phy.harvested_energy(cfg.eta, tau, alpha, p_e, frame.g_norm2)
    cap = np.minimum(phy.energy_limited_power(E, e, alpha, tau), cfg.P_bar)
    p_min = phy.min_power(cfg.gamma_min, cfg.noise_power, frame.h_norm2)
    p_i = cap * (1.0 - m)
    bad = np.flatnonzero(p_i <= p_min * (1.0 + m))
    if bad.size:
        raise InfeasibleFrame(bad)
    D = frame.q + frame.a * tau
    lam = D + m * cfg.psi_floor
    psi = np.full(K, cfg.psi_floor * (1.0 + m))
    alpha_hat = np.full(K, 2.0) if scheme == "equal-time" else np.full(K, 2.0 + m)
    served = phy.RateFn(cfg.w_k, frame.h_norm2, cfg.noise_power)(p_i) * tau
    bad = np.flatnonzero(psi * alpha_hat >= served)
    if bad.size:
        raise InfeasibleFrame(bad, f"rate too low to cover psi_floor for nodes {list(bad)}")
    alloc = Allocation(p_e, p_i, alpha)
    slack = SlackState(lam, psi, alpha_hat)
    return alloc, slack, ExpansionPoint(alpha.copy(), p_e.copy(), psi.copy(), alpha_hat.copy())


# ---------------------------------------------------------------------------
# iteration


def clip_power(frame: FrameState, alloc: Allocation, cfg: SystemConfig, battery: bool = True) -> Allocation:
    """Spend all available energy: ``p_i := min{e_eff / ((1 - alpha) tau), P_bar}``."""
    e = phy.harvested_energy(cfg.eta, cfg.tau, alloc.alpha, alloc.p_e, frame.g_norm2)
    E = np.asarray(frame.E) if battery else 0.0
    p = np.minimum(phy.energy_limited_power(E, e, alloc.alpha, cfg.tau), cfg.P_bar)
    return Allocation(np.asarray(alloc.p_e).copy(), p, np.asarray(alloc.alpha).copy())


def frame_objective(frame: FrameState, alloc: Allocation, beta: float, cfg: SystemConfig) -> float:
    """``beta * sum_k r_k - (L[t+1] - L[t])`` with the exact next backlog."""
    rf = phy.RateFn(cfg.w_k, frame.h_norm2, cfg.noise_power)
    r = rf(alloc.p_i)
    q_next = queues.update_data_queue(frame.q, frame.a, cfg.tau, r, alloc.alpha, cfg.cap_service_to_backlog)
    return float(beta * np.sum(r) - (queues.lyapunov(q_next, cfg.tau) - queues.lyapunov(frame.q, cfg.tau)))


def exact_violation(frame: FrameState, alloc: Allocation, cfg: SystemConfig) -> float:
    """Largest relative violation of the original per-frame constraints."""
    e = phy.harvested_energy(cfg.eta, cfg.tau, alloc.alpha, alloc.p_e, frame.g_norm2)
    cap = np.minimum(phy.energy_limited_power(frame.E, e, alloc.alpha, cfg.tau), cfg.P_bar)
    p_min = phy.min_power(cfg.gamma_min, cfg.noise_power, frame.h_norm2)
    v = [
        (np.sum(alloc.p_e) - cfg.P_max) / cfg.P_max,
        np.max((alloc.p_i - cap) / cap),
        np.max((p_min - alloc.p_i) / p_min),
        np.max(-np.asarray(alloc.p_e)) / cfg.P_max,
        np.max(cfg.alpha_lo - alloc.alpha),
        np.max(alloc.alpha - cfg.alpha_hi),
    ]
    return float(max(v))


def tighten(frame: FrameState, alloc: Allocation, cfg: SystemConfig, scheme: str = "proposed",
            margin: float | None = None):
    """Strictly feasible full point whose slacks are as tight as ``margin`` allows.

    Returns ``(x_internal, slack, point)`` with the expansion point equal to the
    point itself, so every surrogate is exact there.
    """
    dlt = cfg.warm_margin if margin is None else margin
    tau = cfg.tau
    K = frame.K
    p_min = phy.min_power(cfg.gamma_min, cfg.noise_power, frame.h_norm2)
    alpha = np.asarray(alloc.alpha, dtype=float)
    p_i = _shrink_to_floor(np.asarray(alloc.p_i, dtype=float), p_min, dlt)
    if scheme == "equal-time":
        alpha_hat = np.full(K, 2.0)
    else:
        alpha_hat = (1.0 + dlt) / (1.0 - alpha)
    rf = phy.RateFn(cfg.w_k, frame.h_norm2, cfg.noise_power)
    S = rf(p_i) * tau / alpha_hat
    floor = cfg.psi_floor
    psi_hi = S * (1.0 - dlt)
    if np.any(psi_hi <= floor * (1.0 + dlt)):
        raise InfeasibleFrame(np.flatnonzero(psi_hi <= floor * (1.0 + dlt)), "service below psi_floor")
    D = frame.q + frame.a * tau
    drained = D < psi_hi
    psi = np.where(drained, 0.5 * (np.maximum(D, floor * (1.0 + dlt)) + psi_hi), psi_hi)
    lam = np.where(drained, dlt * (D + floor), D - psi + dlt * np.maximum(D, floor))
    slack = SlackState(lam, psi, alpha_hat)
    a2 = Allocation(np.asarray(alloc.p_e, dtype=float).copy(), p_i, alpha.copy())
    point = ExpansionPoint(alpha.copy(), a2.p_e.copy(), psi.copy(), alpha_hat.copy())
    return to_internal(a2, slack, cfg), slack, point


@dataclass
class ScaResult:
    allocation: Allocation
    slack: SlackState | None
    objective_trace: list
    iterations: int
    converged: bool
    reports: list = field(default_factory=list)
    true_objectives: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    statuses: list = field(default_factory=list)
    initial_objective: float = float("nan")
    fallback: bool = False
    rejected_drop: float = 0.0
    failure: str | None = None

    @property
    def objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else self.initial_objective


def fallback_allocation(frame: FrameState, cfg: SystemConfig, prev_alpha=None) -> Allocation:
    """Equal beacon split, previous harvest share, all available energy spent."""
    K = frame.K
    alpha = np.full(K, 0.5) if prev_alpha is None else np.clip(np.asarray(prev_alpha, dtype=float),
                                                               cfg.alpha_lo, cfg.alpha_hi)
    base = Allocation(np.full(K, cfg.P_max / K), np.zeros(K), alpha)
    return clip_power(frame, base, cfg)


def _strictly_feasible(problem: ConvexProblem, x) -> bool:
    if np.any(x <= problem.lo) or np.any(x >= problem.hi):
        return False
    c = problem.constraint_values(x)
    return not (c.size and np.any(c >= 0))


def _restricted(scheme, frame, point, beta, cfg, battery):
    prob = build_subproblem(frame, point, beta, cfg, battery)
    rprob = scheme_restrict(scheme, prob, frame, point, cfg, margin=cfg.start_margin)
    if rprob is not prob:
        rprob.centering = _centering(prob, rprob)
    return prob, rprob


def _clipped(scheme, frame, a_star, cfg):
    if scheme == "max-power":
        return Allocation(a_star.p_e, max_power_rule(frame, a_star.alpha, a_star.p_e, cfg), a_star.alpha)
    return clip_power(frame, a_star, cfg)


def solve_frame(frame: FrameState, beta: float, cfg: SystemConfig, scheme: str = "proposed",
                prev_alpha=None, warm_barrier: bool = False) -> ScaResult:
    """Run the SCA loop for one frame and return the clipped allocation.

    The trace holds the surrogate-program optimum (``L[t]`` added back) per
    iteration, which the inner approximation makes non-decreasing. The
    exact per-frame objective of each clipped allocation goes to
    ``true_objectives``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    battery = scheme != "max-power"
    try:
        alloc0, slack0, point = initial_point(frame, cfg, scheme)
        # lift psi to the service the start allocation actually supports
        x0, slack0, point = tighten(frame, alloc0, cfg, scheme, margin=cfg.start_margin)
    except InfeasibleFrame as exc:
        log.info("frame %d: %s; falling back to energy-limited transmission", frame.t, exc)
        alloc = fallback_allocation(frame, cfg, prev_alpha)
        F = frame_objective(frame, alloc, beta, cfg)
        return ScaResult(alloc, None, [F], 0, False, initial_objective=F, fallback=True, failure=str(exc))

    res = ScaResult(alloc0, slack0, [], 0, False)
    res.initial_objective = frame_objective(frame, _clipped(scheme, frame, alloc0, cfg), beta, cfg)
    t0 = None
    best = None
    for kappa in range(1, cfg.max_sca_iter + 1):
        prob, rprob = _restricted(scheme, frame, point, beta, cfg, battery)
        free = rprob.meta.get("free")
        xr0 = x0 if free is None else x0[free]
        if not _strictly_feasible(rprob, xr0):
            # only reachable for max-power, whose fixed p_i moves with the point
            a_prev, _ = from_internal(x0, cfg)
            try:
                x0, _, point = tighten(frame, a_prev, cfg, scheme, margin=cfg.start_margin)
            except InfeasibleFrame as exc:
                res.failure = f"iteration {kappa}: {exc}"
                break
            prob, rprob = _restricted(scheme, frame, point, beta, cfg, battery)
            xr0 = x0 if free is None else x0[free]
            t0 = None
        try:
            xr, rep = solve(rprob, xr0, cfg.solver, t0=t0)
        except InfeasibleStart as exc:
            res.failure = f"iteration {kappa}: {exc}"
            break
        res.reports.append(rep)
        res.statuses.append(rep.status)
        res.violations.append(rep.max_violation)
        if rep.status == "numerical_failure":
            res.failure = f"iteration {kappa}: numerical failure"
            log.warning("frame %d scheme %s: solver numerical failure at SCA iteration %d", frame.t, scheme, kappa)
            break
        x = rprob.expand(xr)
        G = prob.meta["objective_physical"](prob.objective(x)) + prob.meta["L_t"]
        if res.objective_trace and G < res.objective_trace[-1]:
            # keep the previous iterate; record how far the candidate fell short
            res.rejected_drop = max(res.rejected_drop, res.objective_trace[-1] - G)
            res.converged = True
            break
        a_star, s_star = from_internal(x, cfg)
        alloc = _clipped(scheme, frame, a_star, cfg)
        res.objective_trace.append(G)
        res.true_objectives.append(frame_objective(frame, alloc, beta, cfg))
        res.iterations = kappa
        best = (alloc, s_star)
        if len(res.objective_trace) > 1:
            prev = res.objective_trace[-2]
            if abs(G - prev) <= cfg.sca_tol * max(abs(G), 1e-300):
                res.converged = True
                break
        point = ExpansionPoint(a_star.alpha.copy(), a_star.p_e.copy(), s_star.psi.copy(),
                               s_star.alpha_hat.copy())
        x0 = x
        # a warm t leaves slacks near roundoff and Newton stalls; restart t
        t0 = rep.t_final if warm_barrier else None
    if best is not None:
        res.allocation, res.slack = best
    else:
        res.allocation = _clipped(scheme, frame, alloc0, cfg)
        res.slack = None
        res.objective_trace.append(res.initial_objective)
    return res
