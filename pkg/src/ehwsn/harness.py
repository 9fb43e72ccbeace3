"""Episode driver, experiment sweeps and CSV output."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import phy, queues, sca
from .config import FrameState, SystemConfig, config_to_dict, validate_config
from .stochastic import ARRIVAL, CHANNEL, TOPOLOGY, RngStream, draw_arrivals, place_nodes, sample_channels

log = logging.getLogger(__name__)

BACKLOG, FRAME_PICK = 3, 4  # extra stream ids next to the stochastic module's

FRAME_LOG_HEADER = ("t", "k", "p_e_w", "p_i_w", "alpha", "e_j", "a_bps", "q_bits", "E_j", "r_bps",
                    "served_bits", "sca_iters", "objective")
EXPERIMENT_HEADER = ("grid_value", "scheme", "mean_sum_throughput_bps", "std_sum_throughput_bps",
                     "avg_total_queue_bits", "avg_harvested_w")
TRACE_HEADER = ("frame", "kappa", "objective", "max_constraint_violation", "solver_status")
EXPERIMENTS = ("convergence", "throughput-vs-time", "beta-sweep", "pmax-sweep")
DEFAULT_GRIDS = {
    "beta-sweep": (1e-6, 1e-5, 1e-4, 1e-3),
    "pmax-sweep": (40.0, 43.0, 46.0, 50.0, 55.0, 60.0),
}
# per-node (T, K) columns of an episode, in log order
_NODE_COLS = ("p_e", "p_i", "alpha", "e", "a", "q", "E", "r", "served")


class ExperimentError(RuntimeError):
    pass


class FrameError(RuntimeError):
    def __init__(self, t, cause):
        super().__init__(f"frame {t}: {cause}")
        self.t = t


@dataclass
class EpisodeLog:
    """Per-frame, per-node record of one episode.

    ``q`` and ``E`` hold the backlog at the start of each frame;
    ``q_final``/``E_final`` the state after the last one.
    """

    scheme: str
    p_e: np.ndarray
    p_i: np.ndarray
    alpha: np.ndarray
    e: np.ndarray
    a: np.ndarray
    q: np.ndarray
    E: np.ndarray
    r: np.ndarray
    served: np.ndarray
    sca_iters: np.ndarray
    objective: np.ndarray
    q_final: np.ndarray
    E_final: np.ndarray
    fallbacks: int = 0
    traces: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.p_e.shape[0]

    @property
    def K(self) -> int:
        return self.p_e.shape[1]

    @property
    def sum_throughput(self) -> np.ndarray:
        """Network utility ``sum_k r_k`` per frame (bit/s), the reported throughput."""
        return self.r.sum(axis=1)

    def delivered_throughput(self, tau: float) -> np.ndarray:
        """Served bits per second of frame, ``sum_k r_k (1 - alpha_k)``."""
        return self.served.sum(axis=1) / tau

    @property
    def total_queue(self) -> np.ndarray:
        return self.q.sum(axis=1)

    def harvested_power(self, tau: float) -> np.ndarray:
        return self.e.sum(axis=1) / tau

    def summary(self, tau: float) -> dict:
        return dict(
            sum_throughput=float(self.sum_throughput.mean()),
            delivered_throughput=float(self.delivered_throughput(tau).mean()),
            total_queue=float(self.total_queue.mean()),
            harvested_w=float(self.harvested_power(tau).mean()),
        )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(FRAME_LOG_HEADER)
            for t in range(self.T):
                for k in range(self.K):
                    row = [t, k] + [repr(float(getattr(self, c)[t, k])) for c in _NODE_COLS]
                    w.writerow(row + [int(self.sca_iters[t]), repr(float(self.objective[t]))])

    @classmethod
    def read_csv(cls, path, scheme: str = "") -> "EpisodeLog":
        """Load a frame log; the final queue state is not part of the file and is left empty."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            if tuple(next(reader)) != FRAME_LOG_HEADER:
                raise ValueError(f"{path}: unexpected header")
            rows = np.array([[float(v) for v in r] for r in reader])
        T, K = int(rows[:, 0].max()) + 1, int(rows[:, 1].max()) + 1
        cols = {c: rows[:, 2 + i].reshape(T, K) for i, c in enumerate(_NODE_COLS)}
        per_frame = rows[::K]
        return cls(scheme, **cols, sca_iters=per_frame[:, 11].astype(int), objective=per_frame[:, 12],
                   q_final=np.full(K, np.nan), E_final=np.full(K, np.nan))


def replay_errors(ep: EpisodeLog, cfg: SystemConfig) -> tuple[float, float]:
    """Largest mismatch between logged and recomputed queue trajectories.

    Uses only logged columns; an exact episode gives ``(0.0, 0.0)``.
    """
    q_err = E_err = 0.0
    q, E = np.zeros(ep.K), np.zeros(ep.K)
    for t in range(ep.T + 1):
        q_log = ep.q[t] if t < ep.T else ep.q_final
        E_log = ep.E[t] if t < ep.T else ep.E_final
        if t < ep.T or np.all(np.isfinite(q_log)):
            q_err = max(q_err, float(np.max(np.abs(q - q_log))))
            E_err = max(E_err, float(np.max(np.abs(E - E_log))))
        if t == ep.T:
            break
        q = queues.update_data_queue(q, ep.a[t], cfg.tau, ep.r[t], ep.alpha[t], cfg.cap_service_to_backlog)
        E = queues.update_energy_queue(E, ep.e[t], ep.p_i[t], ep.alpha[t], cfg.tau, cfg.E_max)
    return q_err, E_err


def frame_rng(seed: int, stream: int, realization: int, t: int) -> np.random.Generator:
    return RngStream(seed, stream).generator(realization, t)


def episode_topology(cfg: SystemConfig, seed: int, realization: int):
    r = realization if cfg.resample_topology else 0
    return place_nodes(cfg, RngStream(seed, TOPOLOGY).generator(r))


def _as_seed(rng) -> int:
    if isinstance(rng, RngStream):
        return rng.seed
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    raise TypeError("rng must be an RngStream or an integer seed")


def run_episode(cfg: SystemConfig, scheme: str, T: int, rng, beta: float | None = None,
                realization: int = 0, topology=None, keep_traces: bool = False) -> EpisodeLog:
    """Per-frame allocation loop over ``T`` frames starting from empty queues.

    Draws depend only on ``(seed, stream, realization, t)``, so every
    scheme of a realization sees the same topology, channels and arrivals.
    """
    if scheme not in sca.SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if T < 1:
        raise ValueError("T must be >= 1")
    seed = _as_seed(rng)
    beta = cfg.beta if beta is None else beta
    K, tau = cfg.K, cfg.tau
    topo = topology if topology is not None else episode_topology(cfg, seed, realization)
    cols = {c: np.zeros((T, K)) for c in _NODE_COLS}
    iters = np.zeros(T, dtype=int)
    obj = np.zeros(T)
    traces = []
    q, E = np.zeros(K), np.zeros(K)
    prev_alpha = None
    fallbacks = 0
    for t in range(T):
        frame = episode_frame(cfg, seed, realization, t, q, E, topo)
        g, h, a = frame.g_norm2, frame.h_norm2, frame.a
        try:
            res = sca.solve_frame(frame, beta, cfg, scheme, prev_alpha)
        except Exception as exc:  # noqa: BLE001 - re-raised with the frame index
            raise FrameError(t, exc) from exc
        if res.failure and any(s == "numerical_failure" for s in res.statuses) and not res.objective_trace:
            raise FrameError(t, res.failure)
        fallbacks += bool(res.fallback)
        al = res.allocation
        e = phy.harvested_energy(cfg.eta, tau, al.alpha, al.p_e, g)
        r = phy.RateFn(cfg.w_k, h, cfg.noise_power)(al.p_i)
        for c, v in zip(_NODE_COLS, (al.p_e, al.p_i, al.alpha, e, a, q, E, r, r * (1.0 - al.alpha) * tau)):
            cols[c][t] = v
        iters[t] = res.iterations
        obj[t] = res.objective
        if keep_traces:
            traces.append(res)
        try:
            E_next = queues.update_energy_queue(E, e, al.p_i, al.alpha, tau, cfg.E_max)
        except queues.EnergyViolation as exc:
            raise FrameError(t, exc) from exc
        q = queues.update_data_queue(q, a, tau, r, al.alpha, cfg.cap_service_to_backlog)
        E = E_next
        prev_alpha = al.alpha
    return EpisodeLog(scheme, **cols, sca_iters=iters, objective=obj, q_final=q, E_final=E,
                      fallbacks=fallbacks, traces=traces)


def episode_frame(cfg: SystemConfig, seed: int, realization: int, t: int, q, E, topology=None) -> FrameState:
    """Frame ``t`` of a realization with the given queue state (common random numbers)."""
    topo = topology if topology is not None else episode_topology(cfg, seed, realization)
    g, h = sample_channels(cfg, topo, frame_rng(seed, CHANNEL, realization, t), t)
    a = draw_arrivals(cfg, frame_rng(seed, ARRIVAL, realization, t), t, cfg.K)
    return FrameState(t, g, h, a, np.asarray(q, dtype=float), np.asarray(E, dtype=float))


def operating_frames(cfg: SystemConfig, seed: int, n: int, T: int = 40, per_episode: int = 10,
                     scheme: str = "proposed", beta: float | None = None) -> list:
    """``n`` frames drawn from simulated episodes of ``scheme``.

    Each realization runs ``T`` frames and contributes ``per_episode``
    frames at random indices, carrying the queue state the system actually
    reached there.
    """
    if n < 1 or per_episode < 1 or per_episode > T:
        raise ValueError("need n >= 1 and 1 <= per_episode <= T")
    frames = []
    r = 0
    pick = RngStream(seed, FRAME_PICK)
    while len(frames) < n:
        topo = episode_topology(cfg, seed, r)
        ep = run_episode(cfg, scheme, T, seed, beta=beta, realization=r, topology=topo)
        ts = np.sort(pick.generator(r).choice(T, size=per_episode, replace=False))
        for t in ts[: n - len(frames)]:
            frames.append(episode_frame(cfg, seed, r, int(t), ep.q[t], ep.E[t], topo))
        r += 1
    return frames


def random_frame(cfg: SystemConfig, seed: int, index: int, q_hi: float = 4e6, E_hi: float = 1e-8) -> FrameState:
    """A frame with fresh topology, channels, arrivals and random backlogs.

    Backlogs are independent across nodes, so this also produces the
    strongly unbalanced states that episodes rarely visit.
    """
    topo = episode_topology(dataclasses.replace(cfg, resample_topology=True), seed, index)
    g, h = sample_channels(cfg, topo, frame_rng(seed, CHANNEL, index, 0))
    a = draw_arrivals(cfg, frame_rng(seed, ARRIVAL, index, 0))
    st = RngStream(seed, BACKLOG).generator(index)
    q = st.uniform(0.0, q_hi, cfg.K)
    E = st.uniform(0.0, E_hi, cfg.K)
    return FrameState(index, g, h, a, q, E)


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str
    schemes: tuple = sca.SCHEMES
    grid: tuple = ()
    T: int = 200
    R: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if not self.schemes or any(s not in sca.SCHEMES for s in self.schemes):
            raise ValueError(f"schemes must be a non-empty subset of {sca.SCHEMES}")
        if self.R < 1 or self.T < 1:
            raise ValueError("T and R must be >= 1")
        g = np.asarray(self.grid_values, dtype=float)
        if g.size == 0 or np.any(np.diff(g) <= 0):
            raise ValueError("grid must be non-empty and strictly increasing")

    @property
    def grid_values(self) -> tuple:
        if self.grid:
            return tuple(float(v) for v in self.grid)
        return DEFAULT_GRIDS.get(self.experiment, (None,))

    def grid_label(self, cfg: SystemConfig, v):
        return cfg.beta if v is None else v


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list  # dicts keyed by EXPERIMENT_HEADER
    plots: dict  # file stem -> (header, rows)
    failures: list
    episodes: dict = field(default_factory=dict)  # (grid_value, scheme) -> [EpisodeLog]


def _cfg_at(cfg: SystemConfig, experiment: str, v):
    if experiment == "pmax-sweep" and v is not None:
        from .config import dbm_to_watt
        return dataclasses.replace(cfg, P_max=float(dbm_to_watt(v)))
    return cfg


def _beta_at(cfg, experiment, v):
    return v if experiment == "beta-sweep" and v is not None else cfg.beta


def aggregate(episodes, tau: float) -> dict:
    """Mean/std over realizations of per-episode time averages."""
    s = np.array([ep.summary(tau)["sum_throughput"] for ep in episodes])
    qtot = np.array([ep.summary(tau)["total_queue"] for ep in episodes])
    hp = np.array([ep.summary(tau)["harvested_w"] for ep in episodes])
    dl = np.array([ep.summary(tau)["delivered_throughput"] for ep in episodes])
    return dict(
        mean_sum_throughput_bps=float(np.mean(s)),
        std_sum_throughput_bps=float(np.std(s)),
        avg_total_queue_bits=float(np.mean(qtot)),
        avg_harvested_w=float(np.mean(hp)),
        mean_delivered_throughput_bps=float(np.mean(dl)),
    )


def _check_failures(failed, total, what):
    if failed and len(failed) > 0.01 * total:
        raise ExperimentError(f"{what}: {len(failed)} of {total} realizations failed; first: {failed[0]}")


def run_convergence(spec: ExperimentSpec, cfg: SystemConfig, beta: float | None = None) -> ExperimentResult:
    """SCA traces on R frames sampled from proposed-scheme episodes of length T.

    Frame 0 gives the single-channel trace.
    """
    beta = cfg.beta if beta is None else beta
    traces = {s: [] for s in spec.schemes}
    failures = []
    frames = operating_frames(cfg, spec.seed, spec.R, T=max(spec.T, 1), per_episode=min(10, spec.T), beta=beta)
    for r, frame in enumerate(frames):
        for s in spec.schemes:
            try:
                traces[s].append(sca.solve_frame(frame, beta, cfg, s))
            except Exception as exc:  # noqa: BLE001
                log.warning("convergence: realization %d scheme %s failed: %s", r, s, exc)
                failures.append(f"realization {r} {s}: {exc}")
    _check_failures(failures, spec.R * len(spec.schemes), "convergence")
    plots = {}
    for s, res_list in traces.items():
        rows = []
        for i, res in enumerate(res_list):
            for kappa, f in enumerate(res.objective_trace, start=1):
                viol = res.violations[kappa - 1] if kappa - 1 < len(res.violations) else float("nan")
                status = res.statuses[kappa - 1] if kappa - 1 < len(res.statuses) else "fallback"
                rows.append((i, kappa, f, viol, status))
        plots[f"sca_trace_{s}"] = (TRACE_HEADER, rows)
    n = max((len(res.objective_trace) for rl in traces.values() for res in rl), default=0)
    avg_rows, single_rows = [], []
    for kappa in range(n):
        avg, one = [kappa + 1], [kappa + 1]
        for s in spec.schemes:
            # a converged trace stays at its last value
            vals = [res.objective_trace[min(kappa, len(res.objective_trace) - 1)] for res in traces[s]]
            avg.append(float(np.mean(vals)) if vals else float("nan"))
            one.append(vals[0] if vals else float("nan"))
        avg_rows.append(avg)
        single_rows.append(one)
    hdr = ("kappa",) + tuple(spec.schemes)
    plots["convergence_averaged"] = (hdr, avg_rows)
    plots["convergence_single"] = (hdr, single_rows)
    rows = []
    for s in spec.schemes:
        thr = [float(np.sum(phy.RateFn(cfg.w_k, f.h_norm2, cfg.noise_power)(res.allocation.p_i)))
               for f, res in zip(frames, traces[s])]
        rows.append(dict(grid_value=beta, scheme=s, mean_sum_throughput_bps=float(np.mean(thr)),
                         std_sum_throughput_bps=float(np.std(thr)), avg_total_queue_bits=float("nan"),
                         avg_harvested_w=float("nan")))
    return ExperimentResult(spec, rows, plots, failures, {})


def run_experiment(spec: ExperimentSpec, cfg: SystemConfig, beta: float | None = None,
                   keep_episodes: bool = False, progress=None) -> ExperimentResult:
    """Run every (grid value, scheme, realization) episode and aggregate.

    A failing realization is logged and excluded; more than 1% failures
    per grid point and scheme abort the experiment.
    """
    cfg = validate_config(cfg)
    if beta is not None:
        cfg = dataclasses.replace(cfg, beta=beta)
    if spec.experiment == "convergence":
        return run_convergence(spec, cfg)
    rows, failures, kept = [], [], {}
    per_time = {}
    for v in spec.grid_values:
        c = _cfg_at(cfg, spec.experiment, v)
        b = _beta_at(cfg, spec.experiment, v)
        gv = spec.grid_label(cfg, v)
        for s in spec.schemes:
            eps, failed = [], []
            for r in range(spec.R):
                try:
                    eps.append(run_episode(c, s, spec.T, spec.seed, beta=b, realization=r))
                except Exception as exc:  # noqa: BLE001
                    log.warning("%s %s=%s scheme %s realization %d failed: %s",
                                spec.experiment, "grid", gv, s, r, exc)
                    failed.append(f"{s} grid={gv} realization {r}: {exc}")
                if progress is not None:
                    progress(gv, s, r)
            _check_failures(failed, spec.R, f"{spec.experiment} {s} grid={gv}")
            failures.extend(failed)
            if not eps:
                raise ExperimentError(f"{spec.experiment} {s} grid={gv}: no successful realization")
            rows.append(dict(grid_value=gv, scheme=s, **aggregate(eps, c.tau)))
            if spec.experiment == "throughput-vs-time":
                per_time[s] = np.mean([ep.sum_throughput for ep in eps], axis=0)
            if keep_episodes:
                kept[(gv, s)] = eps
    plots = {}
    schemes = tuple(spec.schemes)
    hdr_x = {"beta-sweep": "beta", "pmax-sweep": "p_max_dbm"}
    if spec.experiment == "throughput-vs-time":
        plots["throughput_vs_time"] = (("t",) + schemes,
                                      [[t] + [float(per_time[s][t]) for s in schemes] for t in range(spec.T)])
    else:
        x = hdr_x[spec.experiment]
        for metric, stem in (("avg_total_queue_bits", "queue"), ("mean_sum_throughput_bps", "throughput"),
                             ("avg_harvested_w", "harvested_power")):
            table = []
            for v in spec.grid_values:
                gv = spec.grid_label(cfg, v)
                table.append([gv] + [next(r[metric] for r in rows if r["grid_value"] == gv and r["scheme"] == s)
                                     for s in schemes])
            plots[f"{spec.experiment.replace('-', '_')}_{stem}"] = ((x,) + schemes, table)
    return ExperimentResult(spec, rows, plots, failures, kept)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            vals = [r[h] for h in header] if isinstance(r, dict) else r
            w.writerow([_fmt(v) for v in vals])


def write_result(result: ExperimentResult, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    name = result.spec.experiment.replace("-", "_")
    p = out / f"{name}.csv"
    write_table(p, EXPERIMENT_HEADER, result.rows)
    written.append(p)
    for stem, (hdr, rows) in result.plots.items():
        p = out / f"{stem}.csv"
        write_table(p, hdr, rows)
        written.append(p)
    return written


def write_manifest(out_dir, cfg: SystemConfig, extra: dict) -> Path:
    """Resolved config, noise power, unit scales, tolerances and seeds."""
    cfg = validate_config(cfg)
    data = dict(
        created_unix=time.time(),
        config=config_to_dict(cfg),
        resolved=dict(sigma2_w=cfg.noise_power, w_k_hz=cfg.w_k),
        **extra,
    )
    p = Path(out_dir) / "manifest.json"
    p.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
    return p


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o).__name__)
