"""Small convex programs with known optima, used to certify :mod:`ehwsn.solver`."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .solver import Affine, ConvexProblem, Smooth

LN2 = np.log(2.0)


@dataclass
class ClosedForm:
    name: str
    problem: ConvexProblem
    x0: np.ndarray
    x_star: np.ndarray
    f_star: float


def _scalar(f, g, h):
    return (lambda x: float(f(x)), lambda x: np.atleast_1d(np.asarray(g(x), dtype=float)),
            lambda x: np.atleast_2d(np.asarray(h(x), dtype=float)))


def log_rate_cap(c=5.0) -> ClosedForm:
    f, g, h = _scalar(lambda x: np.log2(1 + x[0]), lambda x: [1 / ((1 + x[0]) * LN2)],
                      lambda x: [[-1 / ((1 + x[0]) ** 2 * LN2)]])
    p = ConvexProblem(1, f, g, h, [Affine([[1.0]], [c])], lo=[0.0])
    return ClosedForm("log-rate-cap", p, np.array([1.0]), np.array([c]), float(np.log2(1 + c)))


def projected_quadratic() -> ClosedForm:
    f, g, h = _scalar(lambda x: -(x[0] - 3) ** 2, lambda x: [-2 * (x[0] - 3)], lambda x: [[-2.0]])
    p = ConvexProblem(1, f, g, h, [Affine([[1.0]], [2.0])])
    return ClosedForm("projected-quadratic", p, np.array([0.0]), np.array([2.0]), -1.0)


def rate_minus_power() -> ClosedForm:
    f, g, h = _scalar(lambda x: 2 * np.log2(1 + x[0]) - x[0], lambda x: [2 / ((1 + x[0]) * LN2) - 1],
                      lambda x: [[-2 / ((1 + x[0]) ** 2 * LN2)]])
    xs = 2 / LN2 - 1
    p = ConvexProblem(1, f, g, h, [], lo=[0.0])
    return ClosedForm("rate-minus-power", p, np.array([0.5]), np.array([xs]), 2 * np.log2(1 + xs) - xs)


def halfplane_projection() -> ClosedForm:
    # nearest point to (1, 2) with x + y <= 1
    t = np.array([1.0, 2.0])
    f, g, h = _scalar(lambda x: -np.sum((x - t) ** 2), lambda x: -2 * (x - t), lambda x: -2 * np.eye(2))
    p = ConvexProblem(2, f, g, h, [Affine([[1.0, 1.0]], [1.0])])
    return ClosedForm("halfplane-projection", p, np.zeros(2), np.array([0.0, 1.0]), -2.0)


def water_filling(noise=(0.1, 0.5, 1.0), P=1.0) -> ClosedForm:
    n = np.asarray(noise, dtype=float)
    # level nu with sum max(nu - n, 0) = P
    srt = np.sort(n)
    for j in range(len(srt), 0, -1):
        nu = (P + srt[:j].sum()) / j
        if nu > srt[j - 1]:
            break
    xs = np.maximum(nu - n, 0.0)
    f, g, h = _scalar(lambda x: np.sum(np.log(n + x)), lambda x: 1 / (n + x), lambda x: np.diag(-1 / (n + x) ** 2))
    p = ConvexProblem(len(n), f, g, h, [Affine([np.ones(len(n))], [P])], lo=np.zeros(len(n)))
    return ClosedForm("water-filling", p, np.full(len(n), P / (2 * len(n))), xs, float(np.sum(np.log(n + xs))))


def quad_over_lin() -> ClosedForm:
    # max x s.t. x^2 / y <= 1, y <= 4
    con = Smooth("quadratic-over-linear", [[True, True]],
                 lambda z: [z[0] ** 2 / z[1] - 1.0],
                 lambda z: [[2 * z[0] / z[1], -z[0] ** 2 / z[1] ** 2]],
                 lambda z, w: w[0] * np.array([[2 / z[1], -2 * z[0] / z[1] ** 2],
                                               [-2 * z[0] / z[1] ** 2, 2 * z[0] ** 2 / z[1] ** 3]]))
    f, g, h = _scalar(lambda z: z[0], lambda z: [1.0, 0.0], lambda z: np.zeros((2, 2)))
    p = ConvexProblem(2, f, g, h, [con], lo=[-np.inf, 0.0], hi=[np.inf, 4.0])
    return ClosedForm("quad-over-lin", p, np.array([0.5, 2.0]), np.array([2.0, 4.0]), 2.0)


def reciprocal_slack() -> ClosedForm:
    # min y s.t. 1/(1-a) <= y, a in [0.5, 0.99]
    con = Smooth("reciprocal", [[True, True]],
                 lambda z: [1 / (1 - z[0]) - z[1]],
                 lambda z: [[1 / (1 - z[0]) ** 2, -1.0]],
                 lambda z, w: w[0] * np.array([[2 / (1 - z[0]) ** 3, 0.0], [0.0, 0.0]]))
    f, g, h = _scalar(lambda z: -z[1], lambda z: [0.0, -1.0], lambda z: np.zeros((2, 2)))
    p = ConvexProblem(2, f, g, h, [con], lo=[0.5, -np.inf], hi=[0.99, np.inf])
    return ClosedForm("reciprocal-slack", p, np.array([0.7, 5.0]), np.array([0.5, 2.0]), -2.0)


def min_power_for_rate(R=3.0) -> ClosedForm:
    # min p s.t. log2(1 + p) >= R
    con = Smooth("neg-log-rate", [[True]],
                 lambda z: [R - np.log2(1 + z[0])],
                 lambda z: [[-1 / ((1 + z[0]) * LN2)]],
                 lambda z, w: w[0] * np.array([[1 / ((1 + z[0]) ** 2 * LN2)]]))
    f, g, h = _scalar(lambda z: -z[0], lambda z: [-1.0], lambda z: [[0.0]])
    p = ConvexProblem(1, f, g, h, [con], lo=[0.0])
    return ClosedForm("min-power-for-rate", p, np.array([20.0]), np.array([2 ** R - 1]), -(2 ** R - 1))


def disk_linear() -> ClosedForm:
    # max x + y on x^2 + y^2 <= 2
    con = Smooth("convex-quadratic", [[True, True]],
                 lambda z: [z @ z - 2.0], lambda z: [2 * z], lambda z, w: 2 * w[0] * np.eye(2))
    f, g, h = _scalar(lambda z: z[0] + z[1], lambda z: [1.0, 1.0], lambda z: np.zeros((2, 2)))
    p = ConvexProblem(2, f, g, h, [con])
    return ClosedForm("disk-linear", p, np.zeros(2), np.ones(2), 2.0)


def small_lp() -> ClosedForm:
    # max 3x + 2y s.t. x + y <= 4, x + 3y <= 6, x, y >= 0
    f, g, h = _scalar(lambda z: 3 * z[0] + 2 * z[1], lambda z: [3.0, 2.0], lambda z: np.zeros((2, 2)))
    p = ConvexProblem(2, f, g, h, [Affine([[1.0, 1.0], [1.0, 3.0]], [4.0, 6.0])], lo=np.zeros(2))
    return ClosedForm("small-lp", p, np.array([1.0, 1.0]), np.array([4.0, 0.0]), 12.0)


def library() -> list[ClosedForm]:
    return [log_rate_cap(), projected_quadratic(), rate_minus_power(), halfplane_projection(), water_filling(),
            quad_over_lin(), reciprocal_slack(), min_power_for_rate(), disk_linear(), small_lp()]
