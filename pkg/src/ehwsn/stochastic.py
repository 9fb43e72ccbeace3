"""Seeded node placement, block-fading channel gains and data arrivals."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# stream ids
TOPOLOGY, CHANNEL, ARRIVAL = 0, 1, 2


@dataclass(frozen=True)
class RngStream:
    """Deterministic random source keyed by ``(seed, stream_id)``.

    ``generator(*sub)`` derives an independent child generator for any
    further integer key (realization, frame, ...).
    """

    seed: int
    stream_id: int = 0

    def generator(self, *sub: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *sub))
        return np.random.default_rng(ss)

    def child(self, *sub: int) -> "RngStream":
        # folded into the seed so that children remain plain RngStreams
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *sub))
        return RngStream(int(ss.generate_state(1, np.uint64)[0]), 0)


@dataclass(frozen=True)
class Topology:
    node_pos: np.ndarray  # (K, 2)
    d_pb: np.ndarray
    d_ap: np.ndarray

    @classmethod
    def from_positions(cls, pos, cfg) -> "Topology":
        pos = np.asarray(pos, dtype=float).reshape(-1, 2)
        d_pb = np.hypot(*(pos - np.asarray(cfg.pb_pos)).T)
        d_ap = np.hypot(*(pos - np.asarray(cfg.ap_pos)).T)
        return cls(pos, d_pb, d_ap)


def place_nodes(cfg, rng: np.random.Generator) -> Topology:
    """Uniform placement over the disk centred on the access point.

    Nodes closer than ``d_ref`` to either end point are redrawn.
    """
    center = np.asarray(cfg.ap_pos, dtype=float)
    pos = np.empty((cfg.K, 2))
    for k in range(cfg.K):
        while True:
            r = cfg.disk_radius * np.sqrt(rng.uniform())
            th = rng.uniform(0.0, 2.0 * np.pi)
            p = center + r * np.array([np.cos(th), np.sin(th)])
            if (np.hypot(*(p - cfg.ap_pos)) >= cfg.d_ref
                    and np.hypot(*(p - cfg.pb_pos)) >= cfg.d_ref):
                break
        pos[k] = p
    return Topology.from_positions(pos, cfg)


def path_loss(d, exponent=3.0, d_ref=1.0):
    return np.maximum(np.asarray(d, dtype=float), d_ref) ** (-exponent)


def sample_channels(cfg, topo: Topology, rng: np.random.Generator, t: int = 0):
    """Squared channel norms ``(||g_k||^2, ||h_k||^2)`` for one frame.

    Each norm is the path loss times a sum of unit-mean exponentials, one
    per antenna (Rayleigh fading). ``t`` is only informational; callers
    pass a per-frame generator.
    """
    K = len(topo.d_pb)
    xg = rng.standard_exponential((K, cfg.M)).sum(axis=1)
    xh = rng.standard_exponential((K, cfg.N)).sum(axis=1)
    g = path_loss(topo.d_pb, cfg.path_loss_exp, cfg.d_ref) * xg
    h = path_loss(topo.d_ap, cfg.path_loss_exp, cfg.d_ref) * xh
    return g, h


def draw_arrivals(cfg, rng: np.random.Generator, t: int = 0, K: int | None = None):
    K = cfg.K if K is None else K
    a = rng.uniform(cfg.a_lo, cfg.a_hi, size=K)
    return np.minimum(a, cfg.a_max)


def save_topology(topo: Topology, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "x_m", "y_m"])
        for k, (x, y) in enumerate(topo.node_pos):
            w.writerow([k, repr(float(x)), repr(float(y))])


def load_topology(path, cfg) -> Topology:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: int(r["k"]))
    pos = [[float(r["x_m"]), float(r["y_m"])] for r in rows]
    return Topology.from_positions(pos, cfg)
