"""Compiled barrier centring for the per-frame SCA subproblem.

Mirrors the Python centring loop in :mod:`ehwsn.solver` (same damped
Newton step, Armijo backtracking and quadratic-region rule) with the row
formulas of :func:`ehwsn.sca.fused_oracle` written out by hand. Variable
layout is ``[p_e, p_i, alpha, lam, psi, alpha_hat]`` blocks of ``K``.
"""
from __future__ import annotations

import numpy as np

try:
    import numba
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*a, **k):
        def wrap(f):
            return f
        return wrap(a[0]) if a and callable(a[0]) else wrap

OK, NUMERICAL_FAILURE = 0, 1


@njit(cache=True)
def _row_values(x, K, P_max, D, A, s0, sa, su, c, rho, ca, cp, out):
    tot = 0.0
    for k in range(K):
        tot += x[k]
    out[0] = tot - P_max
    for k in range(K):
        u = x[k]
        v = x[K + k]
        a = x[2 * K + k]
        lam = x[3 * K + k]
        p = x[4 * K + k]
        h = x[5 * K + k]
        s = 1.0 - a
        z = a - u
        out[1 + k] = D[k] - lam - p
        out[1 + K + k] = v + 0.25 * A[k] * z * z / s - (s0[k] + sa[k] * a + su[k] * u)
        out[1 + 2 * K + k] = 0.5 * ca[k] * h * h + 0.5 * cp[k] * p * p - rho * np.log1p(c[k] * v)
        out[1 + 3 * K + k] = 1.0 / s - h


@njit(cache=True)
def _objective(x, K, c, w_coef):
    f = 0.0
    for k in range(K):
        f += w_coef * np.log1p(c[k] * x[K + k]) - 0.5 * x[3 * K + k] ** 2
    return f


@njit(cache=True)
def _phi(x, t, free, lo, hi, act, K, P_max, D, A, s0, sa, su, c, rho, ca, cp, w_coef, buf):
    b = 0.0
    for i in free:
        if np.isfinite(lo[i]):
            if x[i] <= lo[i]:
                return np.inf
            b -= np.log(x[i] - lo[i])
        if np.isfinite(hi[i]):
            if x[i] >= hi[i]:
                return np.inf
            b -= np.log(hi[i] - x[i])
    _row_values(x, K, P_max, D, A, s0, sa, su, c, rho, ca, cp, buf)
    for j in range(buf.shape[0]):
        if act[j]:
            if buf[j] >= 0.0:
                return np.inf
            b -= np.log(-buf[j])
    return -t * _objective(x, K, c, w_coef) + b


@njit(cache=True)
def _add_row(g, H, w, idx, val, n_ent, hw_scale):
    # rank-one term w^2 grad grad^T and gradient term w grad
    for i in range(n_ent):
        g[idx[i]] += w * val[i]
        for j in range(n_ent):
            H[idx[i], idx[j]] += hw_scale * val[i] * val[j]


@njit(cache=True)
def _grad_hess(x, t, free, lo, hi, act, K, P_max, D, A, s0, sa, su, c, rho, ca, cp, w_coef, buf):
    n = 6 * K
    g = np.zeros(n)
    H = np.zeros((n, n))
    idx = np.empty(3, dtype=np.int64)
    val = np.empty(3)
    # objective
    for k in range(K):
        iv = K + k
        il = 3 * K + k
        den = 1.0 + c[k] * x[iv]
        g[iv] -= t * w_coef * c[k] / den
        H[iv, iv] += t * w_coef * c[k] * c[k] / (den * den)
        g[il] += t * x[il]
        H[il, il] += t
    _row_values(x, K, P_max, D, A, s0, sa, su, c, rho, ca, cp, buf)
    if act[0]:
        w = 1.0 / -buf[0]
        for i in range(K):
            g[i] += w
            for j in range(K):
                H[i, j] += w * w
    for k in range(K):
        u_i, v_i, a_i, l_i, p_i, h_i = k, K + k, 2 * K + k, 3 * K + k, 4 * K + k, 5 * K + k
        a = x[a_i]
        s = 1.0 - a
        z = a - x[u_i]
        j = 1 + k
        if act[j]:
            w = 1.0 / -buf[j]
            idx[0], idx[1] = l_i, p_i
            val[0], val[1] = -1.0, -1.0
            _add_row(g, H, w, idx, val, 2, w * w)
        j = 1 + K + k
        if act[j]:
            w = 1.0 / -buf[j]
            idx[0], idx[1], idx[2] = v_i, a_i, u_i
            val[0] = 1.0
            val[1] = 0.25 * A[k] * (2.0 * z / s + z * z / (s * s)) - sa[k]
            val[2] = -0.5 * A[k] * z / s - su[k]
            _add_row(g, H, w, idx, val, 3, w * w)
            q = 0.25 * A[k] * w
            hau = q * (-2.0 / s - 2.0 * z / (s * s))
            H[a_i, a_i] += q * (2.0 / s + 4.0 * z / (s * s) + 2.0 * z * z / (s * s * s))
            H[a_i, u_i] += hau
            H[u_i, a_i] += hau
            H[u_i, u_i] += q * 2.0 / s
        j = 1 + 2 * K + k
        if act[j]:
            w = 1.0 / -buf[j]
            den = 1.0 + c[k] * x[v_i]
            idx[0], idx[1], idx[2] = h_i, p_i, v_i
            val[0] = ca[k] * x[h_i]
            val[1] = cp[k] * x[p_i]
            val[2] = -rho * c[k] / den
            _add_row(g, H, w, idx, val, 3, w * w)
            H[h_i, h_i] += w * ca[k]
            H[p_i, p_i] += w * cp[k]
            H[v_i, v_i] += w * rho * c[k] * c[k] / (den * den)
        j = 1 + 3 * K + k
        if act[j]:
            w = 1.0 / -buf[j]
            idx[0], idx[1] = a_i, h_i
            val[0] = 1.0 / (s * s)
            val[1] = -1.0
            _add_row(g, H, w, idx, val, 2, w * w)
            H[a_i, a_i] += w * 2.0 / (s * s * s)
    nf = free.shape[0]
    gf = np.empty(nf)
    Hf = np.empty((nf, nf))
    for ii in range(nf):
        i = free[ii]
        gi = g[i]
        hii = 0.0
        if np.isfinite(lo[i]):
            d = 1.0 / (x[i] - lo[i])
            gi -= d
            hii += d * d
        if np.isfinite(hi[i]):
            d = 1.0 / (hi[i] - x[i])
            gi += d
            hii += d * d
        gf[ii] = gi
        for jj in range(nf):
            Hf[ii, jj] = H[i, free[jj]]
        Hf[ii, ii] += hii
    return gf, Hf


@njit(cache=True)
def _cholesky_solve(A, b):
    n = b.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not (s > 0.0) or not np.isfinite(s):
            return b, False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * y[k]
        y[i] = s / L[i, i]
    return y, True


@njit(cache=True)
def _newton_direction(H, g, ridge0):
    n = g.shape[0]
    dg = np.empty(n)
    for i in range(n):
        dg[i] = np.sqrt(max(abs(H[i, i]), 1e-300))
    Hs = np.empty((n, n))
    gs = np.empty(n)
    for i in range(n):
        gs[i] = -g[i] / dg[i]
        for j in range(n):
            Hs[i, j] = H[i, j] / (dg[i] * dg[j])
    ridge = 0.0
    Ar = np.empty((n, n))
    for _attempt in range(14):
        Ar[:, :] = Hs
        for i in range(n):
            Ar[i, i] += ridge
        y, ok = _cholesky_solve(Ar, gs)
        if ok:
            desc = 0.0
            fin = True
            for i in range(n):
                desc -= gs[i] * y[i]
                if not np.isfinite(y[i]):
                    fin = False
            if fin and desc < 0.0:
                for i in range(n):
                    y[i] /= dg[i]
                return y, True
        ridge = ridge0 if ridge == 0.0 else ridge * 10.0
    return gs, False


@njit(cache=True)
def center(x, t, free, lo, hi, act, K, P_max, D, A, s0, sa, su, c, rho, ca, cp, w_coef,
           armijo, shrink, ridge, newton_tol, max_inner):
    """Newton centring of the barrier problem at weight ``t``; returns (x, steps, status)."""
    buf = np.empty(1 + 4 * K)
    x = x.copy()
    nf = free.shape[0]
    steps = 0
    f_x = np.nan
    xn = x.copy()
    for _ in range(max_inner):
        g, H = _grad_hess(x, t, free, lo, hi, act, K, P_max, D, A, s0, sa, su, c, rho, ca, cp, w_coef, buf)
        d, ok = _newton_direction(H, g, ridge)
        if not ok:
            gn = 0.0
            for i in range(nf):
                gn += g[i] * g[i]
            if np.sqrt(gn) <= 1e-12 * max(1.0, t):
                break
            return x, steps, NUMERICAL_FAILURE
        dec2 = 0.0
        for i in range(nf):
            dec2 -= g[i] * d[i]
        if dec2 / 2.0 <= newton_tol:
            break
        if np.isnan(f_x):
            f_x = _phi(x, t, free, lo, hi, act, K, P_max, D, A, s0, sa, su, c, rho, ca, cp, w_coef, buf)
        s = 1.0
        for ii in range(nf):
            i = free[ii]
            if d[ii] < 0.0 and np.isfinite(lo[i]):
                s = min(s, 0.99 * (lo[i] - x[i]) / d[ii])
            elif d[ii] > 0.0 and np.isfinite(hi[i]):
                s = min(s, 0.99 * (hi[i] - x[i]) / d[ii])
        accepted = False
        f_n = np.inf
        if s == 1.0 and dec2 < 0.0625:
            for ii in range(nf):
                xn[free[ii]] = x[free[ii]] + d[ii]
            f_n = _phi(xn, t, free, lo, hi, act, K, P_max, D, A, s0, sa, su, c, rho, ca, cp, w_coef, buf)
            accepted = np.isfinite(f_n)
        while not accepted and s > 1e-12:
            for ii in range(nf):
                xn[free[ii]] = x[free[ii]] + s * d[ii]
            f_n = _phi(xn, t, free, lo, hi, act, K, P_max, D, A, s0, sa, su, c, rho, ca, cp, w_coef, buf)
            if f_n <= f_x - armijo * s * dec2:
                accepted = True
                break
            s *= shrink
        steps += 1
        if not accepted:
            break
        x[:] = xn
        f_x = f_n
    return x, steps, OK


def row_values(x, K, P_max, D, A, s0, sa, su, c, rho, ca, cp):
    out = np.empty(1 + 4 * K)
    _row_values(np.asarray(x, dtype=float), K, P_max, D, A, s0, sa, su, c, rho, ca, cp, out)
    return out
