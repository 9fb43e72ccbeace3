#!/usr/bin/env python3
"""Run the four experiments back to back, one output directory each."""
import argparse
import sys
from pathlib import Path

from ehwsn import cli
from ehwsn.harness import EXPERIMENTS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "default.yaml"))
    ap.add_argument("--frames", type=int, default=200)
    ap.add_argument("--realizations", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results")
    ap.add_argument("--only", nargs="+", choices=EXPERIMENTS, default=list(EXPERIMENTS))
    a = ap.parse_args()
    rc = 0
    for exp in a.only:
        print(f"== {exp}", flush=True)
        rc |= cli.main(["--config", a.config, "--experiment", exp, "--frames", str(a.frames),
                        "--realizations", str(a.realizations), "--seed", str(a.seed),
                        "--out", str(Path(a.out) / exp)])
    return rc


if __name__ == "__main__":
    sys.exit(main())
