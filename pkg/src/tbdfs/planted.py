"""Synthetic user-item stream with a planted revisit motif.

With probability ``revisit_prob`` a user's next planted interaction goes
back to one of the last ``window`` distinct items that user visited;
otherwise it goes to an item outside that window. Uniform noise edges are
mixed in and never enter a user's revisit history. Node features are
random unit identity vectors (orthonormal when there are at most ``dim``
nodes), so the only way to tell a revisit from a random pair is to find
the earlier user->item event along a temporal path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .graphstore import TemporalGraph
from .sampler import brute_force_paths


@dataclass(frozen=True)
class PlantedParams:
    n_users: int = 100
    n_items: int = 200
    revisit_prob: float = 0.8
    noise_edges: int = 500
    horizon: float = 10_000.0
    n_events: int = 4500
    window: int = 4
    dim: int = 16


@dataclass
class PlantedData:
    graph: TemporalGraph
    revisit: np.ndarray  # per event (chronological ids): planted revisit
    noise: np.ndarray    # per event: uniform noise edge
    task: dict           # labeled pairs for rule-based checks


def gen_planted(params: PlantedParams = PlantedParams(), seed: int = 0) -> PlantedData:
    p = params
    if not 0.0 <= p.revisit_prob <= 1.0:
        raise ConfigError(f"revisit_prob must be in [0, 1], got {p.revisit_prob}")
    if p.n_users < 1 or p.n_items < p.window + 2 or p.n_events < 1 or p.window < 1:
        raise ConfigError("degenerate planted sizes: need users >= 1, items >= window + 2, "
                          "events >= 1")
    if p.noise_edges < 0 or p.horizon <= 0:
        raise ConfigError("noise_edges must be >= 0 and horizon > 0")
    rng = np.random.default_rng(seed)
    total = p.n_events + p.noise_edges
    ts = np.sort(rng.uniform(0.0, p.horizon, size=total))
    is_noise = np.zeros(total, dtype=bool)
    is_noise[rng.choice(total, size=p.noise_edges, replace=False)] = True

    users = rng.integers(0, p.n_users, size=total)
    items = np.zeros(total, dtype=np.int64)
    revisit = np.zeros(total, dtype=bool)
    recent: list[list[int]] = [[] for _ in range(p.n_users)]
    for e in range(total):
        u = users[e]
        if is_noise[e]:
            items[e] = rng.integers(0, p.n_items)
            continue
        hist = recent[u]
        if hist and rng.random() < p.revisit_prob:
            item = hist[rng.integers(0, len(hist))]
            revisit[e] = True
        else:
            item = int(rng.integers(0, p.n_items - len(hist)))
            for h in sorted(hist):
                item += item >= h
        items[e] = item
        if item in hist:
            hist.remove(item)
        hist.append(item)
        del hist[:-p.window]

    n_nodes = p.n_users + p.n_items
    if n_nodes <= p.dim:
        # orthonormal identities when they fit
        q, _ = np.linalg.qr(rng.normal(size=(p.dim, p.dim)))
        node_feat = q[:n_nodes].copy()
    else:
        node_feat = rng.normal(0.0, 1.0, size=(n_nodes, p.dim))
        node_feat /= np.linalg.norm(node_feat, axis=1, keepdims=True)
    src = users
    dst = p.n_users + items
    labels = [f"u{i}" for i in range(p.n_users)] + [f"i{i}" for i in range(p.n_items)]
    g = TemporalGraph(src, dst, ts, node_feat=node_feat, n_nodes=p.n_users + p.n_items,
                      d=p.dim, labels=labels,
                      dst_nodes=np.arange(p.n_users, p.n_users + p.n_items))
    task = _labeled_task(g, users, dst, ts, is_noise, rng)
    return PlantedData(g, revisit, is_noise, task)


def _labeled_task(g, users, dst, ts, is_noise, rng) -> dict:
    """Positives: planted events whose user already has history. Negatives: the
    same (user, time) with an item the user never touched before that time."""
    seen: dict[int, set[int]] = {}
    pos, neg = [], []
    items = np.asarray(g.dst_nodes)
    for e in range(len(ts)):
        u, j = int(users[e]), int(dst[e])
        s = seen.setdefault(u, set())
        if not is_noise[e] and s:
            free = np.setdiff1d(items, np.fromiter(s | {j}, dtype=np.int64))
            if len(free):
                pos.append((u, j, float(ts[e])))
                neg.append((u, int(free[rng.integers(0, len(free))]), float(ts[e])))
        s.add(j)
    return {"pos": pos, "neg": neg}


def revisit_rule(g: TemporalGraph, u: int, j: int, t: float) -> bool:
    """Positive iff some one-hop temporal path ending at u before t starts at j."""
    return any(p.nodes[1] == j for p in brute_force_paths(g, u, t, 1))
