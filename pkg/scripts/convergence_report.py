#!/usr/bin/env python3
"""SCA convergence statistics on operating-point frames and on iid stress frames."""
import argparse

import numpy as np

from ehwsn import harness, sca
from ehwsn.config import SystemConfig, validate_config


def report(name, frames, cfg, budget):
    its, mono, conv = [], 0, 0
    for f in frames:
        res = sca.solve_frame(f, cfg.beta, cfg)
        tr = np.asarray(res.objective_trace)
        mono += bool(np.all(np.diff(tr) >= -1e-9 * np.abs(tr[:-1])))
        ok = res.converged and res.iterations <= budget
        conv += ok
        its.append(res.iterations)
    n = len(frames)
    hist = np.bincount(its, minlength=cfg.max_sca_iter + 1)
    print(f"{name}: {n} frames, monotone {mono}/{n}, converged within {budget} iterations {conv}/{n} "
          f"({100 * conv / n:.0f}%)")
    print("  iterations histogram:", {i: int(c) for i, c in enumerate(hist) if c})


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-n", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--budget", type=int, default=10)
    a = ap.parse_args()
    cfg = validate_config(SystemConfig())
    report("operating frames", harness.operating_frames(cfg, a.seed, a.n), cfg, a.budget)
    report("iid stress frames", [harness.random_frame(cfg, a.seed, i) for i in range(a.n)], cfg, a.budget)


if __name__ == "__main__":
    main()
