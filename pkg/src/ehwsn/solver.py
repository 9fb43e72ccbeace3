"""Feasible-start log-barrier interior-point method for small dense convex programs.

Problems are posed as maximisation of a concave objective subject to
convex constraints ``c(x) <= 0`` and a variable box. Constraints come in
vectorised blocks: a block evaluates ``m`` rows at once and returns the
weighted sum of its row Hessians, which keeps the per-Newton-step cost low
for the per-frame resource allocation programs (n = 6K variables).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import nnls

from .config import SolverConfig

KINDS = ("affine", "convex-quadratic", "quadratic-over-linear", "reciprocal", "neg-log-rate")


class InfeasibleStart(ValueError):
    pass


class Constraint:
    """A block of ``m`` convex constraint rows ``c_j(x) <= 0``.

    ``support`` is an (m, n) boolean mask of the variables each row reads.
    """

    kind = "affine"

    def __init__(self, support, kind=None, names=None):
        self.support = np.asarray(support, dtype=bool)
        if kind is not None:
            self.kind = kind
        if self.kind not in KINDS:
            raise ValueError(f"unknown constraint class {self.kind}")
        self.names = names

    @property
    def m(self) -> int:
        return self.support.shape[0]

    def value(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def hessian(self, x, w):
        raise NotImplementedError


class Affine(Constraint):
    def __init__(self, A, b, names=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        super().__init__(self.A != 0, "affine", names)

    def value(self, x):
        return self.A @ x - self.b

    def jacobian(self, x):
        return self.A

    def hessian(self, x, w):
        return 0.0


class Smooth(Constraint):
    """Constraint block backed by plain callables."""

    def __init__(self, kind, support, value, jacobian, hessian, names=None):
        super().__init__(support, kind, names)
        self._v, self._j, self._h = value, jacobian, hessian

    def value(self, x):
        return np.atleast_1d(self._v(x))

    def jacobian(self, x):
        return np.atleast_2d(self._j(x))

    def hessian(self, x, w):
        return self._h(x, w)


@dataclass
class ConvexProblem:
    n: int
    objective: Callable
    gradient: Callable
    hessian: Callable
    constraints: list = field(default_factory=list)
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    # optional single-pass evaluators over all rows, in block order:
    # fused_values(x) -> c, fused_derivs(x, w) -> (J, sum_j w_j Hess c_j)
    fused_values: Callable | None = None
    fused_derivs: Callable | None = None
    # optional compiled centring: (x, t, opts) -> (x, newton_steps, failed)
    centering: Callable | None = None

    def __post_init__(self):
        self.lo = np.full(self.n, -np.inf) if self.lo is None else np.asarray(self.lo, dtype=float)
        self.hi = np.full(self.n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float)

    @property
    def m(self) -> int:
        return sum(c.m for c in self.constraints)

    def constraint_values(self, x) -> np.ndarray:
        if self.fused_values is not None:
            return self.fused_values(x)
        if not self.constraints:
            return np.empty(0)
        return np.concatenate([c.value(x) for c in self.constraints])

    def constraint_derivs(self, x, w):
        """Row Jacobian and the ``w``-weighted sum of row Hessians."""
        if self.fused_derivs is not None:
            return self.fused_derivs(x, w)
        J = np.zeros((0, self.n))
        H = np.zeros((self.n, self.n))
        if self.constraints:
            J = np.vstack([c.jacobian(x) for c in self.constraints])
            i = 0
            for c in self.constraints:
                H = H + c.hessian(x, w[i:i + c.m])
                i += c.m
        return J, H

    def box_values(self, x) -> np.ndarray:
        lo_m, hi_m = np.isfinite(self.lo), np.isfinite(self.hi)
        return np.concatenate([(self.lo - x)[lo_m], (x - self.hi)[hi_m]])

    def max_violation(self, x) -> float:
        v = np.concatenate([self.constraint_values(x), self.box_values(x)])
        return float(v.max()) if v.size else -np.inf

    def expand(self, x):
        """Map a (possibly restricted) variable vector back to the full layout."""
        f = self.meta.get("expand")
        return f(x) if f is not None else x


# ---------------------------------------------------------------------------
# variable fixing


class _Restricted(Constraint):
    def __init__(self, base: Constraint, rows, free, expand):
        super().__init__(base.support[np.ix_(rows, free)], base.kind,
                         None if base.names is None else [base.names[i] for i in rows])
        self.base, self.rows, self.free, self._expand = base, rows, free, expand
        self._all_rows = len(rows) == base.m

    def value(self, x):
        v = self.base.value(self._expand(x))
        return v if self._all_rows else v[self.rows]

    def jacobian(self, x):
        J = self.base.jacobian(self._expand(x))
        return J[np.ix_(self.rows, self.free)]

    def hessian(self, x, w):
        if self._all_rows:
            wf = w
        else:
            wf = np.zeros(self.base.m)
            wf[self.rows] = w
        H = self.base.hessian(self._expand(x), wf)
        if np.isscalar(H):
            return H
        return H[np.ix_(self.free, self.free)]


def fix_variables(problem: ConvexProblem, fixed: dict, feas_tol: float = 1e-9) -> ConvexProblem:
    """Remove the variables in ``fixed`` (index -> value) from ``problem``.

    Constraint rows left without any free variable are constants; they are
    checked against ``feas_tol`` and dropped.
    """
    n = problem.n
    idx = np.array(sorted(fixed), dtype=int)
    free = np.setdiff1d(np.arange(n), idx)
    template = np.zeros(n)
    template[idx] = [fixed[i] for i in idx]

    def expand(xr):
        x = template.copy()
        x[free] = xr
        return x

    cons = []
    keep = []
    offset = 0
    probe = expand(np.clip(np.zeros(len(free)), problem.lo[free], problem.hi[free]))
    for c in problem.constraints:
        live = c.support[:, free].any(axis=1)
        dead = np.flatnonzero(~live)
        if dead.size:
            v = c.value(probe)[dead]
            if np.any(v > feas_tol):
                raise InfeasibleStart(f"fixed values violate a {c.kind} constraint by {v.max():.3g}")
        rows = np.flatnonzero(live)
        if rows.size:
            cons.append(_Restricted(c, rows, free, expand))
        keep.append(offset + rows)
        offset += c.m
    keep = np.concatenate(keep) if keep else np.empty(0, dtype=int)
    fv = fd = None
    if problem.fused_values is not None and problem.fused_derivs is not None:
        m_full = offset
        ix = np.ix_(free, free)

        def fv(xr):
            return problem.fused_values(expand(xr))[keep]

        def fd(xr, w):
            wf = np.zeros(m_full)
            wf[keep] = w
            J, H = problem.fused_derivs(expand(xr), wf)
            return J[keep][:, free], H[ix]
    if np.any(template[idx] < problem.lo[idx] - feas_tol) or np.any(template[idx] > problem.hi[idx] + feas_tol):
        raise InfeasibleStart("fixed values outside the variable box")

    def obj(xr):
        return problem.objective(expand(xr))

    def grad(xr):
        return problem.gradient(expand(xr))[free]

    def hess(xr):
        return problem.hessian(expand(xr))[np.ix_(free, free)]

    meta = dict(problem.meta)
    meta.update(free=free, rows=keep, n_full=n, fixed=dict(fixed), expand=expand, parent=problem)
    return ConvexProblem(len(free), obj, grad, hess, cons, problem.lo[free], problem.hi[free], meta, fv, fd)


# ---------------------------------------------------------------------------
# solve


@dataclass
class SolverReport:
    status: str  # converged | max_iter | numerical_failure
    iterations: int
    outer_iterations: int
    gap: float
    objective: float
    kkt_residual: float
    max_violation: float
    multipliers: np.ndarray
    objective_history: list
    t_final: float
    trajectory: list | None = None


def _box_masks(problem):
    return np.isfinite(problem.lo), np.isfinite(problem.hi)


def multipliers_at(problem: ConvexProblem, x, t: float) -> np.ndarray:
    """Barrier-implied multipliers ``1 / (-t c_j(x))`` for rows then box sides."""
    c = np.concatenate([problem.constraint_values(x), problem.box_values(x)])
    return 1.0 / (-t * c)


def kkt_residual(problem: ConvexProblem, x, multipliers) -> float:
    """Stationarity plus complementary-slackness residual (Euclidean norms).

    ``multipliers`` lists the constraint rows first, then the finite lower
    and upper box sides in variable order.
    """
    u = np.asarray(multipliers, dtype=float)
    if np.any(u < 0):
        raise ValueError("multipliers must be non-negative")
    m = problem.m
    lo_m, hi_m = _box_masks(problem)
    stat = np.array(problem.gradient(x), dtype=float)
    if m:
        stat -= problem.constraint_derivs(x, np.zeros(m))[0].T @ u[:m]
    nlo = int(lo_m.sum())
    stat[lo_m] += u[m:m + nlo]
    stat[hi_m] -= u[m + nlo:]
    c = np.concatenate([problem.constraint_values(x), problem.box_values(x)])
    return float(np.linalg.norm(stat) + np.linalg.norm(u * c))


def refine_multipliers(problem: ConvexProblem, x, support=None) -> np.ndarray:
    """Non-negative multipliers minimising stationarity plus complementarity.

    Barrier multipliers ``1/(-t c)`` inherit the cancellation error of
    nearly active rows; this least-squares estimate does not. ``support``
    (boolean, rows then box sides) restricts which multipliers may be
    non-zero.
    """
    m = problem.m
    lo_m, hi_m = _box_masks(problem)
    J = problem.constraint_derivs(x, np.zeros(m))[0] if m else np.zeros((0, problem.n))
    eye = np.eye(problem.n)
    G = np.hstack([J.T, -eye[:, lo_m], eye[:, hi_m]])
    c = np.concatenate([problem.constraint_values(x), problem.box_values(x)])
    sel = np.ones(len(c), dtype=bool) if support is None else np.asarray(support, dtype=bool)
    A = np.vstack([G[:, sel], np.diag(np.abs(c[sel]))])
    b = np.concatenate([np.asarray(problem.gradient(x), dtype=float), np.zeros(int(sel.sum()))])
    u = np.zeros(len(c))
    u[sel] = nnls(A, b)[0]
    return u


def certify(problem: ConvexProblem, x, t: float, tol: float = 0.0):
    """``(kkt, multipliers)``: the best of barrier and refined multipliers.

    Refinement first tries the rows whose barrier multiplier is not
    negligible and widens to all rows only if that misses ``tol``.
    """
    u = multipliers_at(problem, x, t)
    kkt = kkt_residual(problem, x, u)
    if not u.size or kkt <= tol:
        return kkt, u
    for sel in (u > 1e-9 * u.max(), None):
        if sel is not None and not sel.any():
            continue
        u2 = refine_multipliers(problem, x, sel)
        k2 = kkt_residual(problem, x, u2)
        if k2 < kkt:
            kkt, u = k2, u2
        if kkt <= tol:
            break
    return kkt, u


def _newton_direction(H, g, ridge0):
    """Solve ``H d = -g`` on the Jacobi-equilibrated system.

    A ridge is added only when the solve fails or the result is not a
    descent direction; an unconditional ridge ruins the
    quadratic rate on the badly scaled barrier Hessians seen here.
    """
    dg = np.sqrt(np.maximum(np.abs(np.diag(H)), 1e-300))
    Hs = H / np.outer(dg, dg)
    gs = g / dg
    ridge = 0.0
    for _attempt in range(14):
        A = Hs if ridge == 0.0 else Hs + ridge * np.eye(len(g))
        try:
            y = np.linalg.solve(A, -gs)
        except np.linalg.LinAlgError:
            y = None
        if y is not None and np.all(np.isfinite(y)) and gs @ y < 0:
            return y / dg
        ridge = ridge0 if ridge == 0.0 else ridge * 10.0
    return None


def _max_box_step(x, d, lo, hi, lo_m, hi_m, frac=0.99):
    s = 1.0
    neg = lo_m & (d < 0)
    if np.any(neg):
        s = min(s, frac * float(np.min((lo[neg] - x[neg]) / d[neg])))
    pos = hi_m & (d > 0)
    if np.any(pos):
        s = min(s, frac * float(np.min((hi[pos] - x[pos]) / d[pos])))
    return s


def _initial_t(problem, f0, m_tot):
    if m_tot == 0:
        return 1.0
    return m_tot / (0.01 * max(abs(f0), 1.0))


def solve(problem: ConvexProblem, x0, opts: SolverConfig | None = None, t0: float | None = None,
          strict_margin: float = 0.0, record: bool = False):
    """Maximise ``problem.objective`` from the strictly feasible ``x0``.

    Returns ``(x_star, SolverReport)``. Raises InfeasibleStart when ``x0``
    violates a constraint or sits on the box boundary.
    """
    opts = opts or SolverConfig()
    x = np.array(x0, dtype=float)
    lo, hi = problem.lo, problem.hi
    lo_m, hi_m = _box_masks(problem)
    if np.any(x <= lo) or np.any(x >= hi):
        raise InfeasibleStart("x0 not strictly inside the variable box")
    c0 = problem.constraint_values(x)
    if c0.size and np.any(c0 >= -strict_margin):
        j = int(np.argmax(c0))
        raise InfeasibleStart(f"constraint row {j} not strictly satisfied at x0 (value {c0[j]:.3g})")

    m_tot = problem.m + int(lo_m.sum()) + int(hi_m.sum())
    f0 = float(problem.objective(x))
    t = t0 if t0 is not None else _initial_t(problem, f0, m_tot)
    traj = [] if record else None

    def phi(z, t):
        if np.any(z[lo_m] <= lo[lo_m]) or np.any(z[hi_m] >= hi[hi_m]):
            return np.inf
        v = problem.constraint_values(z)
        if np.any(v >= 0):
            return np.inf
        b = -np.sum(np.log(-v)) - np.sum(np.log(z[lo_m] - lo[lo_m])) - np.sum(np.log(hi[hi_m] - z[hi_m]))
        return -t * problem.objective(z) + b

    def grad_hess(z, t):
        g = -t * np.asarray(problem.gradient(z), dtype=float)
        H = -t * np.asarray(problem.hessian(z), dtype=float)
        if problem.m:
            inv = 1.0 / -problem.constraint_values(z)
            J, Hc = problem.constraint_derivs(z, inv)
            g += J.T @ inv
            H += (J.T * inv**2) @ J + Hc
        dlo = np.zeros_like(z)
        dhi = np.zeros_like(z)
        dlo[lo_m] = 1.0 / (z[lo_m] - lo[lo_m])
        dhi[hi_m] = 1.0 / (hi[hi_m] - z[hi_m])
        g += -dlo + dhi
        H[np.diag_indices_from(H)] += dlo**2 + dhi**2
        return g, H

    status = "max_iter"
    newton = 0
    history = []
    outer = 0
    last_kkt = np.inf
    cert = None
    fast = problem.centering if (opts.backend == "compiled" and not record) else None
    for outer in range(1, opts.max_outer + 1):
        if fast is not None:
            x, steps, failed = fast(x, t, opts)
            newton += steps
            if failed:
                status = "numerical_failure"
                break
        # centring
        f_x = None
        for _ in range(0 if fast is not None else opts.max_inner):
            g, H = grad_hess(x, t)
            d = _newton_direction(H, g, opts.ridge)
            if d is None:
                if np.linalg.norm(g) <= 1e-12 * max(1.0, t):
                    break
                status = "numerical_failure"
                break
            dec2 = -(g @ d)
            if dec2 / 2.0 <= opts.newton_tol:
                break
            if f_x is None:
                f_x = phi(x, t)
            s = _max_box_step(x, d, lo, hi, lo_m, hi_m)
            accepted = False
            if s == 1.0 and dec2 < 0.0625:
                # quadratic region: the full step decreases phi even when
                # the decrease is below what float comparison can resolve
                f_n = phi(x + d, t)
                if np.isfinite(f_n):
                    xn, accepted = x + d, True
            while not accepted and s > 1e-12:
                xn = x + s * d
                f_n = phi(xn, t)
                if f_n <= f_x - opts.armijo * s * dec2:
                    accepted = True
                    break
                s *= opts.shrink
            newton += 1
            if not accepted:
                # no representable decrease left: centred to working precision
                break
            x, f_x = xn, f_n
            if record:
                traj.append((outer, newton, t, float(problem.objective(x)), x.copy()))
        if status == "numerical_failure":
            break
        fx = float(problem.objective(x))
        history.append(fx)
        gap = m_tot / t
        if gap <= opts.gap_tol * max(1.0, abs(fx)):
            cert = certify(problem, x, t, opts.kkt_tol)
            kkt = cert[0]
            if kkt <= opts.kkt_tol:
                status = "converged"
                break
            if kkt >= last_kkt:
                # residual has hit its roundoff floor; raising t only hurts
                break
            last_kkt = kkt
        t *= opts.mu

    fx = float(problem.objective(x))
    if fx < f0 and status != "converged":
        # an uncertified iterate never replaces a better feasible start
        x, fx = np.array(x0, dtype=float), f0
        cert = None
    if status != "converged" or cert is None:
        cert = certify(problem, x, t, opts.kkt_tol) if m_tot else (kkt_residual(problem, x, np.empty(0)), np.empty(0))
    kkt, u = cert
    rep = SolverReport(
        status=status,
        iterations=newton,
        outer_iterations=outer,
        gap=m_tot / t,
        objective=fx,
        kkt_residual=kkt,
        max_violation=problem.max_violation(x),
        multipliers=u,
        objective_history=history,
        t_final=t,
        trajectory=traj,
    )
    return x, rep


def dump_trajectory(report: SolverReport, path) -> None:
    """Write recorded Newton iterates (``solve(..., record=True)``) as CSV."""
    if report.trajectory is None:
        raise ValueError("solve was not run with record=True")
    n = len(report.trajectory[0][4]) if report.trajectory else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["outer", "newton", "t", "objective"] + [f"x{i}" for i in range(n)])
        for outer, k, t, f, x in report.trajectory:
            w.writerow([outer, k, repr(t), repr(f)] + [repr(float(v)) for v in x])
