import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ehwsn.config import SolverConfig
from ehwsn.solver import (Affine, ConvexProblem, InfeasibleStart, certify, dump_trajectory, fix_variables,
                          kkt_residual, solve)
from ehwsn import testproblems as tp

LN2 = np.log(2.0)


@pytest.mark.parametrize("case", tp.library(), ids=lambda c: c.name)
def test_closed_form_library(case):
    x, rep = solve(case.problem, case.x0)
    assert rep.status == "converged"
    assert rep.kkt_residual <= 1e-6
    assert np.all(np.abs(x - case.x_star) <= 1e-6 * np.maximum(1.0, np.abs(case.x_star)))
    assert rep.objective == pytest.approx(case.f_star, rel=1e-6, abs=1e-6)
    assert rep.max_violation <= 1e-9
    assert rep.objective >= case.problem.objective(case.x0)


def test_spec_examples():
    assert solve(tp.log_rate_cap().problem, [1.0])[0][0] == pytest.approx(5.0, rel=1e-6)
    x, rep = solve(tp.projected_quadratic().problem, [0.0])
    assert x[0] == pytest.approx(2.0, rel=1e-6) and rep.objective == pytest.approx(-1.0, rel=1e-6)
    assert solve(tp.rate_minus_power().problem, [0.5])[0][0] == pytest.approx(1.8854, abs=1e-4)


def _rate_cap_problem():
    f = lambda x: 2 * np.log2(1 + x[0])
    g = lambda x: np.array([2 / ((1 + x[0]) * LN2)])
    h = lambda x: np.array([[-2 / ((1 + x[0]) ** 2 * LN2)]])
    return ConvexProblem(1, f, g, h, [Affine([[1.0]], [2.0])])


def test_kkt_residual_examples():
    p = tp.rate_minus_power().problem  # one finite lower bound
    xs = np.array([2 / LN2 - 1])
    assert kkt_residual(p, xs, [0.0]) == pytest.approx(0.0, abs=1e-12)
    p = _rate_cap_problem()
    assert kkt_residual(p, np.array([2.0]), [2 / (3 * LN2)]) <= 1e-8
    assert kkt_residual(p, np.array([0.5]), [0.1]) > 1e-3
    with pytest.raises(ValueError):
        kkt_residual(p, np.array([2.0]), [-1.0])


def test_unconstrained_residual_is_gradient_norm():
    p = ConvexProblem(2, lambda x: -x @ x, lambda x: -2 * x, lambda x: -2 * np.eye(2))
    x = np.array([0.3, -0.4])
    assert kkt_residual(p, x, np.empty(0)) == pytest.approx(1.0)


def test_infeasible_start():
    with pytest.raises(InfeasibleStart):
        solve(tp.projected_quadratic().problem, [2.5])
    with pytest.raises(InfeasibleStart):
        solve(tp.rate_minus_power().problem, [0.0])


def test_determinism_and_barrier_monotonicity():
    case = tp.water_filling()
    x1, r1 = solve(case.problem, case.x0)
    x2, r2 = solve(case.problem, case.x0)
    assert np.array_equal(x1, x2) and r1.objective_history == r2.objective_history
    h = np.array(r1.objective_history)
    assert np.all(np.diff(h) >= -1e-10)


def test_trajectory_dump(tmp_path):
    case = tp.disk_linear()
    _, rep = solve(case.problem, case.x0, record=True)
    p = tmp_path / "traj.csv"
    dump_trajectory(rep, p)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("outer,newton,t,objective,x0,x1") and len(lines) == len(rep.trajectory) + 1
    _, rep = solve(case.problem, case.x0)
    with pytest.raises(ValueError):
        dump_trajectory(rep, p)


def test_max_iter_status():
    case = tp.water_filling()
    _, rep = solve(case.problem, case.x0, SolverConfig(max_outer=1))
    assert rep.status == "max_iter"
    assert rep.objective >= case.problem.objective(case.x0)


def test_fix_variables():
    case = tp.small_lp()
    r = fix_variables(case.problem, {1: 0.5})
    assert r.n == 1
    x, rep = solve(r, [1.0])
    # x + 0.5 <= 4 binds before x + 1.5 <= 6
    assert x[0] == pytest.approx(3.5, rel=1e-6)
    assert np.allclose(r.expand(x), [x[0], 0.5])
    with pytest.raises(InfeasibleStart):
        fix_variables(case.problem, {0: 5.0, 1: 0.0})


@settings(max_examples=25)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.2, 2.0))
def test_matches_grid_oracle_2d(a, b, r):
    # nearest point of the disk of radius r to (a, b), against a dense grid
    t = np.array([a, b])
    from ehwsn.solver import Smooth
    con = Smooth("convex-quadratic", [[True, True]], lambda z: [z @ z - r * r], lambda z: [2 * z],
                 lambda z, w: 2 * w[0] * np.eye(2))
    p = ConvexProblem(2, lambda z: -np.sum((z - t) ** 2), lambda z: -2 * (z - t), lambda z: -2 * np.eye(2), [con])
    x, rep = solve(p, np.zeros(2))
    g = np.linspace(-r, r, 401)
    X, Y = np.meshgrid(g, g)
    ok = X**2 + Y**2 <= r * r
    best = np.max(np.where(ok, -((X - a) ** 2 + (Y - b) ** 2), -np.inf))
    step = g[1] - g[0]
    assert rep.objective >= best - 1e-6  # barrier gap tolerance
    assert rep.objective <= best + 4 * step * (np.hypot(a, b) + r + step)


def test_certify_prefers_refined_multipliers():
    case = tp.log_rate_cap()
    x, rep = solve(case.problem, case.x0)
    kkt, u = certify(case.problem, x, rep.t_final, 0.0)
    assert kkt <= rep.kkt_residual + 1e-15 and np.all(u >= 0)
