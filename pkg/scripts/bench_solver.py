#!/usr/bin/env python3
"""Timing of the barrier solver: closed-form library, then SCA frames per scheme and backend."""
import argparse
import dataclasses
import time

import numpy as np

from ehwsn import harness, sca, testproblems
from ehwsn.config import SystemConfig, validate_config
from ehwsn.solver import solve


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=20)
    ap.add_argument("--seed", type=int, default=7)
    a = ap.parse_args()

    print(f"{'problem':24s} {'status':10s} {'newton':>6s} {'kkt':>9s} {'rel err':>9s} {'ms':>7s}")
    for case in testproblems.library():
        t0 = time.perf_counter()
        x, rep = solve(case.problem, case.x0)
        ms = 1e3 * (time.perf_counter() - t0)
        err = np.max(np.abs(x - case.x_star) / np.maximum(1.0, np.abs(case.x_star)))
        print(f"{case.name:24s} {rep.status:10s} {rep.iterations:6d} {rep.kkt_residual:9.2e} {err:9.2e} {ms:7.2f}")

    cfg = validate_config(SystemConfig())
    frames = [harness.random_frame(cfg, a.seed, i, q_hi=2e5) for i in range(a.frames)]
    print()
    for backend in ("compiled", "python"):
        c = dataclasses.replace(cfg, solver=dataclasses.replace(cfg.solver, backend=backend))
        sca.solve_frame(frames[0], c.beta, c)  # jit warm-up
        for scheme in sca.SCHEMES:
            t0 = time.perf_counter()
            its = [sca.solve_frame(f, c.beta, c, scheme).iterations for f in frames]
            dt = (time.perf_counter() - t0) / len(frames)
            print(f"{backend:9s} {scheme:12s} {1e3 * dt:8.1f} ms/frame  mean SCA iterations {np.mean(its):.2f}")


if __name__ == "__main__":
    main()
