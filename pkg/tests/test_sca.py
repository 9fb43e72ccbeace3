import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ehwsn import kernels, phy, sca
from ehwsn.config import FrameState
from ehwsn.harness import random_frame
from ehwsn.solver import solve

pos = st.floats(1e-3, 1e3)


def test_taylor_inv_examples():
    assert sca.taylor_inv_lower(2, 2) == 0.5
    assert sca.taylor_inv_lower(1, 2) == 0.75
    assert sca.taylor_inv_lower(4, 2) == 0.0
    with pytest.raises(ValueError):
        sca.taylor_inv_lower(0, 2)


def test_quad_over_lin_examples():
    assert sca.taylor_quad_over_lin_lower(1, 2, 1, 2) == 0.5
    assert sca.taylor_quad_over_lin_lower(2, 2, 1, 2) == 1.5
    assert sca.taylor_quad_over_lin_lower(1, 4, 1, 2) == 0.0
    with pytest.raises(ValueError):
        sca.taylor_quad_over_lin_lower(1, -4, 1, 2)


def test_bilinear_examples():
    assert sca.bilinear_upper(2, 3, 2, 3) == pytest.approx(6.0)
    assert sca.bilinear_upper(1, 1, 2, 3) == pytest.approx(1.0833, abs=1e-4)
    assert sca.bilinear_upper(4, 6, 2, 3) == pytest.approx(24.0)
    with pytest.raises(ValueError):
        sca.bilinear_upper(1, 1, 0, 3)


@given(pos, pos, pos, pos)
def test_surrogates_one_sided(x, y, xb, yb):
    assert sca.taylor_inv_lower(x, xb) <= 1 / x * (1 + 1e-12)
    assert sca.taylor_quad_over_lin_lower(x, y, xb, yb) <= x * x / y * (1 + 1e-12) + 1e-300
    assert sca.bilinear_upper(x, y, xb, yb) >= x * y * (1 - 1e-12)


@given(pos, st.floats(0.1, 10), st.floats(0.1, 10))
def test_bilinear_tight_on_ray(s, pb, hb):
    assert sca.bilinear_upper(s * pb, s * hb, pb, hb) == pytest.approx(s * s * pb * hb, rel=1e-12)


def test_time_slack_examples():
    assert sca.soc_holds(0.5, 2.0) and sca.smooth_time_slack_holds(0.5, 2.0)
    assert np.hypot(1, 0.75) == 1.25
    assert sca.soc_holds(0.5, 3.0) and 3.0 - 1 / 0.5 == 1.0
    assert not sca.soc_holds(0.5, 1.5) and not sca.smooth_time_slack_holds(0.5, 1.5)


def test_soc_parity_grid():
    a, h = np.meshgrid(np.linspace(0.01, 0.99, 200), np.linspace(1, 10, 200))
    assert sca.soc_parity_check(a, h)


@pytest.fixture(scope="module")
def frames(cfg):
    return [random_frame(cfg, 21, i, q_hi=2e5, E_hi=1e-3 if i % 2 else 1e-8) for i in range(6)]


def _point(frame, cfg, rng):
    K = frame.K
    a = rng.uniform(cfg.alpha_lo, cfg.alpha_hi, K)
    return sca.ExpansionPoint(a, rng.uniform(0, cfg.P_max / K, K), rng.uniform(1.0, 1e5, K),
                              (1 + rng.uniform(0, 1, K)) / (1 - a))


def test_coupling_tight_and_one_sided(cfg, frames, rng):
    for fr in frames:
        for k in range(fr.K):
            pt = _point(fr, cfg, rng)
            args = (fr.E[k], cfg.tau, cfg.eta, fr.g_norm2[k])
            ab, ub = pt.alpha_bar[k], pt.p_e_bar[k]
            assert sca.coupling_rhs_surrogate(*args, ab, ub, ab, ub) == pytest.approx(
                sca.coupling_rhs_exact(*args, ab, ub), rel=1e-12)
            a = rng.uniform(cfg.alpha_lo, cfg.alpha_hi, 2000)
            u = rng.uniform(0, cfg.P_max, 2000)
            exact = sca.coupling_rhs_exact(*args, a, u)
            assert np.all(sca.coupling_rhs_surrogate(*args, a, u, ab, ub) <= exact * (1 + 1e-10))


def test_coupling_exact_form_matches_harvest_rule(cfg, frames, rng):
    fr = frames[1]
    a = rng.uniform(0.1, 0.9, fr.K)
    u = rng.uniform(0.1, 5, fr.K)
    cap = phy.energy_limited_power(fr.E, phy.harvested_energy(cfg.eta, cfg.tau, a, u, fr.g_norm2), a, cfg.tau)
    lhs_minus_rhs = sca.coupling_lhs(cap, cfg.eta, fr.g_norm2, a, u) - sca.coupling_rhs_exact(
        fr.E, cfg.tau, cfg.eta, fr.g_norm2, a, u)
    assert np.allclose(lhs_minus_rhs, 0, atol=1e-12 * cap.max())


def test_coupling_row_at_expansion_point(cfg, frames, rng):
    fr = frames[0]
    pt = _point(fr, cfg, rng)
    row = sca.build_power_coupling_constraint(fr, 2, pt, cfg)
    x = sca.to_internal(sca.Allocation(pt.p_e_bar, np.full(fr.K, 1e-4), pt.alpha_bar),
                        sca.SlackState(np.ones(fr.K), pt.psi_bar, pt.alpha_hat_bar), cfg)
    k = 2
    exact = sca.coupling_lhs(1e-4, cfg.eta, fr.g_norm2[k], pt.alpha_bar[k], pt.p_e_bar[k]) - sca.coupling_rhs_exact(
        fr.E[k], cfg.tau, cfg.eta, fr.g_norm2[k], pt.alpha_bar[k], pt.p_e_bar[k])
    assert row.value(x)[0] * cfg.units.power_scale == pytest.approx(exact, rel=1e-9, abs=1e-18)


def test_rate_row_chains_to_true_rate(cfg, frames, rng):
    fr = frames[0]
    pt = _point(fr, cfg, rng)
    rate, deficit = sca.build_rate_constraint(fr, 0, pt, cfg)
    Q = cfg.units.queue_scale
    for _ in range(200):
        p_i = rng.uniform(1e-8, cfg.P_bar, fr.K)
        psi = rng.uniform(1.0, 1e5, fr.K)
        ah = rng.uniform(1.0, 20.0, fr.K)
        x = sca.to_internal(sca.Allocation(np.ones(fr.K), p_i, np.full(fr.K, 0.5)),
                            sca.SlackState(np.zeros(fr.K), psi, ah), cfg)
        if rate.value(x)[0] <= 0:
            r = phy.RateFn(cfg.w_k, fr.h_norm2, cfg.noise_power)(p_i)[0]
            assert psi[0] * ah[0] <= r * cfg.tau * (1 + 1e-12)
    assert deficit.m == 1


def test_subproblem_shape(cfg, frames):
    fr = frames[0]
    _, _, pt = sca.initial_point(fr, cfg)
    prob = sca.build_subproblem(fr, pt, cfg.beta, cfg)
    counts = sca.constraint_family_counts(prob)
    assert prob.n == 24 and counts["families"] == 21
    assert counts["by_kind"] == {"affine": 5, "quadratic-over-linear": 4, "neg-log-rate": 4, "reciprocal": 4}


def test_fused_matches_blocks(cfg, frames, rng):
    for fr in frames:
        pt = _point(fr, cfg, rng)
        prob = sca.build_subproblem(fr, pt, cfg.beta, cfg)
        blocks = dataclasses.replace(prob, fused_values=None, fused_derivs=None)
        for _ in range(5):
            x = np.clip(rng.uniform(prob.lo, np.where(np.isfinite(prob.hi), prob.hi, prob.lo + 10)), 1e-6, None)
            w = rng.uniform(0, 1, prob.m)
            assert np.allclose(prob.constraint_values(x), blocks.constraint_values(x), rtol=1e-12, atol=1e-12)
            J1, H1 = prob.constraint_derivs(x, w)
            J2, H2 = blocks.constraint_derivs(x, w)
            assert np.allclose(J1, J2, rtol=1e-12, atol=1e-12) and np.allclose(H1, H2, rtol=1e-12, atol=1e-12)
            kv = kernels.row_values(x, *prob.meta["kernel_args"][:-1])
            assert np.allclose(kv, prob.constraint_values(x), rtol=1e-12, atol=1e-12)


def test_initial_point_strictly_feasible(cfg, frames):
    for fr in frames:
        for scheme in sca.SCHEMES:
            alloc, slack, pt = sca.initial_point(fr, cfg, scheme)
            prob = sca.build_subproblem(fr, pt, cfg.beta, cfg, battery=scheme != "max-power")
            # fixed variables drop the rows they saturate (the budget under equal-power)
            rprob = sca.scheme_restrict(scheme, prob, fr, pt, cfg)
            x = sca.to_internal(alloc, slack, cfg)
            free = rprob.meta.get("free")
            assert np.all(rprob.constraint_values(x if free is None else x[free]) < 0)
            assert np.all(alloc.alpha == 0.5)
            assert np.allclose(slack.lam, fr.q + fr.a * cfg.tau, rtol=1e-5)


def _mean_frame(cfg, q=0.0, a=0.0, E=0.0):
    # every node 100 m from both ends, unit fading
    K = cfg.K
    return FrameState(0, np.full(K, cfg.M * 1e-6), np.full(K, cfg.N * 1e-6), np.full(K, a), np.full(K, q),
                      np.full(K, E))


def test_initial_point_examples(cfg):
    fr = _mean_frame(cfg)
    alloc, slack, _ = sca.initial_point(fr, cfg)
    p_min = phy.min_power(cfg.gamma_min, cfg.noise_power, fr.h_norm2)
    # eta tau (1/2) (P_max/K) M PL / (tau / 2) = 4.79e-5 W, well above p_min = 6.25e-10 W
    assert alloc.p_i[0] == pytest.approx(4.79e-5, rel=1e-3)
    assert np.all(alloc.p_i > p_min)
    assert np.all(slack.lam <= 1e-5 * cfg.psi_floor)  # q = a = 0
    big = _mean_frame(cfg, E=1.0)
    alloc, _, _ = sca.initial_point(big, cfg)
    assert np.allclose(alloc.p_i, cfg.P_bar * (1 - cfg.strict_margin))


def test_initial_point_infeasible():
    from ehwsn.config import SystemConfig
    c = SystemConfig(gamma_min=1e9)
    with pytest.raises(sca.InfeasibleFrame):
        sca.initial_point(_mean_frame(c), c)


def test_scheme_restrict(cfg, frames):
    fr = frames[0]
    _, _, pt = sca.initial_point(fr, cfg)
    prob = sca.build_subproblem(fr, pt, cfg.beta, cfg)
    assert sca.scheme_restrict("proposed", prob, fr, pt, cfg) is prob
    ep = sca.scheme_restrict("equal-power", prob, fr, pt, cfg)
    assert ep.n == 20
    pe = ep.expand(np.ones(ep.n))[:4] * cfg.units.beacon_power_scale
    assert np.allclose(pe, 4.988, rtol=1e-3)
    et = sca.scheme_restrict("equal-time", prob, fr, pt, cfg)
    assert et.n == 16
    full = et.expand(np.ones(et.n))
    assert np.all(full[8:12] == 0.5) and np.all(full[20:24] == 2.0)
    with pytest.raises(ValueError):
        sca.scheme_restrict("greedy", prob, fr, pt, cfg)


@pytest.mark.parametrize("scheme", sca.SCHEMES)
def test_solve_frame_properties(cfg, frames, scheme):
    for fr in frames:
        res = sca.solve_frame(fr, cfg.beta, cfg, scheme)
        tr = np.array(res.objective_trace)
        assert np.all(np.diff(tr) >= -1e-9 * np.abs(tr[:-1]))
        assert res.iterations <= cfg.max_sca_iter
        al = res.allocation
        # harvest cap holds after the clip
        E = 0.0 if scheme == "max-power" else fr.E
        e = phy.harvested_energy(cfg.eta, cfg.tau, al.alpha, al.p_e, fr.g_norm2)
        cap = np.minimum(phy.energy_limited_power(E, e, al.alpha, cfg.tau), cfg.P_bar)
        assert np.all(al.p_i <= cap * (1 + 1e-12))
        assert np.sum(al.p_e) <= cfg.P_max * (1 + 1e-9)
        if scheme == "equal-power":
            assert np.allclose(al.p_e, cfg.P_max / cfg.K)
        if scheme == "equal-time":
            assert np.all(al.alpha == 0.5)
        if res.true_objectives:
            assert res.true_objectives[-1] >= res.initial_objective - 1e-9 * abs(res.initial_objective)


def test_solve_frame_deterministic(cfg, frames):
    a = sca.solve_frame(frames[2], cfg.beta, cfg)
    b = sca.solve_frame(frames[2], cfg.beta, cfg)
    assert a.objective_trace == b.objective_trace
    assert np.array_equal(a.allocation.p_e, b.allocation.p_e)


def test_compiled_matches_python_backend(cfg, cfg_python, frames):
    for fr in frames[:3]:
        for scheme in sca.SCHEMES:
            a = sca.solve_frame(fr, cfg.beta, cfg, scheme)
            b = sca.solve_frame(fr, cfg.beta, cfg_python, scheme)
            assert a.objective == pytest.approx(b.objective, rel=1e-9)


def test_zero_queues_beta_zero(cfg):
    fr = _mean_frame(cfg)
    res = sca.solve_frame(fr, 0.0, cfg)
    assert np.all((res.allocation.alpha > cfg.alpha_lo) & (res.allocation.alpha < cfg.alpha_hi))
    # the surrogate optimum is 0 up to the barrier gap, in solver units of (Q / tau)^2
    scale = (cfg.units.queue_scale / cfg.tau) ** 2
    assert abs(res.objective) <= cfg.solver.gap_tol * scale
    assert res.true_objectives[-1] == 0.0


def test_subproblem_convexity_midpoints(cfg, frames, rng):
    fr = frames[3]
    pt = _point(fr, cfg, rng)
    prob = sca.build_subproblem(fr, pt, cfg.beta, cfg)
    hi = np.where(np.isfinite(prob.hi), prob.hi, prob.lo + 10)
    for _ in range(200):
        x, y = rng.uniform(prob.lo, hi), rng.uniform(prob.lo, hi)
        m = 0.5 * (x + y)
        cx, cy, cm = (prob.constraint_values(v) for v in (x, y, m))
        assert np.all(cm <= 0.5 * (cx + cy) + 1e-9 * (np.abs(cx) + np.abs(cy)))
        assert prob.objective(m) >= 0.5 * (prob.objective(x) + prob.objective(y)) - 1e-12
