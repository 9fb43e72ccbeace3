"""Command line entry point: ``ehwsn --config configs/default.yaml --experiment beta-sweep``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

from . import __version__, harness, sca
from .config import ConfigError, load_config, validate_config

log = logging.getLogger("ehwsn")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ehwsn", description="Energy-harvesting WSN resource allocation experiments.")
    p.add_argument("--config", required=True, metavar="PATH", help="YAML system configuration")
    p.add_argument("--scheme", default="all", choices=sca.SCHEMES + ("all",))
    p.add_argument("--experiment", default="throughput-vs-time", choices=harness.EXPERIMENTS, metavar="NAME",
                   help="one of: " + ", ".join(harness.EXPERIMENTS))
    p.add_argument("--frames", type=int, default=200, metavar="T")
    p.add_argument("--realizations", type=int, default=50, metavar="R")
    p.add_argument("--seed", type=int, default=None, metavar="S", help="defaults to rng_seed of the config")
    p.add_argument("--beta", type=float, default=None, metavar="X", help="override the drift-penalty weight")
    p.add_argument("--grid", type=float, nargs="+", default=None,
                   help="sweep values (beta, or P_max in dBm); defaults per experiment")
    p.add_argument("--frame-logs", action="store_true", help="also write the frame log of realization 0")
    p.add_argument("--out", default="results", metavar="DIR")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def run(args) -> list:
    cfg = load_config(args.config)
    if args.beta is not None:
        cfg = validate_config(dataclasses.replace(cfg, beta=args.beta))
    seed = cfg.rng_seed if args.seed is None else args.seed
    schemes = sca.SCHEMES if args.scheme == "all" else (args.scheme,)
    spec = harness.ExperimentSpec(args.experiment, schemes, tuple(args.grid or ()), args.frames,
                                  args.realizations, seed)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc

    t0 = time.time()
    keep = args.frame_logs and args.experiment != "convergence"
    res = harness.run_experiment(spec, cfg, keep_episodes=keep)
    written = harness.write_result(res, out)
    if keep:
        for (gv, s), eps in res.episodes.items():
            p = out / f"frames_{s}_{gv:g}.csv"
            eps[0].write_csv(p)
            written.append(p)
    manifest = harness.write_manifest(out, cfg, dict(
        experiment=spec.experiment, schemes=list(schemes), grid=list(spec.grid_values), frames=spec.T,
        realizations=spec.R, seed=seed, failures=res.failures, runtime_s=time.time() - t0,
        files=sorted(p.name for p in written)))
    return written + [manifest]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        files = run(args)
    except (ConfigError, FileNotFoundError, OSError, ValueError, harness.ExperimentError) as exc:
        print(f"ehwsn: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, (ConfigError, FileNotFoundError)) else 1
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
