"""Layered temporal neighborhood expansion and temporal path harvesting.

Paths are read off the expansion tree itself, so the depth-first view sees
exactly the events the breadth-first aggregation sees.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GuardExceeded
from .graphstore import TemporalGraph


@dataclass(frozen=True)
class TemporalPath:
    """Nodes ordered latest to earliest; ``nodes[0]`` is the target.

    ``times[r]`` and ``event_ids[r]`` describe the arc between nodes[r]
    and nodes[r+1], so len(times) == len(nodes) - 1.
    """
    nodes: tuple[int, ...]
    times: tuple[float, ...]
    event_ids: tuple[int, ...]
    target_time: float

    @property
    def length(self) -> int:
        return len(self.times)

    @property
    def key(self) -> tuple:
        """(node, ts) sequence identifying the path, root included."""
        return ((self.nodes[0], self.target_time),) + tuple(zip(self.nodes[1:], self.times))

    def as_dict(self) -> dict:
        return {"nodes": list(self.nodes), "times": list(self.times),
                "event_ids": list(self.event_ids), "target_time": self.target_time}


@dataclass(frozen=True)
class TreeEntry:
    node: int
    ts: float
    event_id: int
    parent: int  # index into the previous layer; -1 means the root


@dataclass
class BfsTree:
    root: int
    time: float
    depth: int
    layers: list[list[TreeEntry]] = field(default_factory=list)

    def events(self) -> set[tuple[int, float]]:
        return {(e.node, e.ts) for layer in self.layers for e in layer}

    def __len__(self):
        return sum(len(layer) for layer in self.layers)


def expand(g: TemporalGraph, i: int, t: float, L: int, k: int | None = 20, masked: bool = True,
           policy: str = "recent", rng=None) -> BfsTree:
    """Recursive neighbor expansion; each hop is queried at the parent's event time."""
    if L < 1:
        raise ConfigError(f"depth must be >= 1, got {L}")
    if k is not None and k < 1:
        raise ConfigError(f"fan-out must be >= 1, got {k}")
    tree = BfsTree(int(i), float(t), L)
    frontier = [(int(i), float(t))]
    for _ in range(L):
        layer = []
        for p, (node, tq) in enumerate(frontier):
            for j, tj, _, eid in g.temporal_neighbors(node, tq, k, masked=masked,
                                                     policy=policy, rng=rng):
                layer.append(TreeEntry(j, tj, eid, p if tree.layers else -1))
        tree.layers.append(layer)
        frontier = [(e.node, e.ts) for e in layer]
    return tree


def collect_paths(tree: BfsTree, max_paths: int | None = None, rng=None) -> list[TemporalPath]:
    """One path per branch: every depth-L entry, plus entries whose branch stops early."""
    has_child = [np.zeros(len(layer), dtype=bool) for layer in tree.layers]
    for s in range(1, len(tree.layers)):
        for e in tree.layers[s]:
            has_child[s - 1][e.parent] = True
    paths = []
    for s, layer in enumerate(tree.layers):
        last = s == len(tree.layers) - 1
        for idx, e in enumerate(layer):
            if not last and has_child[s][idx]:
                continue
            chain = []
            lvl, cur = s, idx
            while lvl >= 0:
                entry = tree.layers[lvl][cur]
                chain.append(entry)
                cur, lvl = entry.parent, lvl - 1
            chain.reverse()
            paths.append(TemporalPath(
                nodes=(tree.root,) + tuple(c.node for c in chain),
                times=tuple(c.ts for c in chain),
                event_ids=tuple(c.event_id for c in chain),
                target_time=tree.time,
            ))
    if max_paths is not None and len(paths) > max_paths:
        if rng is None:
            raise ConfigError("subsampling paths needs an rng")
        keep = np.sort(rng.choice(len(paths), size=max_paths, replace=False))
        paths = [paths[n] for n in keep]
    return paths


def path_events(paths) -> set[tuple[int, float]]:
    """(node, ts) pairs on the non-target positions of ``paths``."""
    return {(n, ts) for p in paths for n, ts in zip(p.nodes[1:], p.times)}


def brute_force_paths(g: TemporalGraph, i: int, t: float, L: int,
                      guard: int = 1_000_000) -> set[TemporalPath]:
    """Exhaustive enumeration over full adjacency lists, no fan-out cap.

    A path is emitted when it reaches length L or cannot be extended by an
    earlier event. Refuses (GuardExceeded) when more than ``guard`` paths
    would be produced.
    """
    if g.n_nodes == 0 or g.n_events == 0:
        return set()
    adj = [g.adjacency(n) for n in range(g.n_nodes)]

    def earlier(node, tq):
        return [(j, tj, e) for j, tj, e in adj[node] if tj < tq]

    count = 0

    def tally(node, tq, depth):
        nonlocal count
        nxt = earlier(node, tq) if depth < L else []
        if not nxt:
            count += depth > 0
            if count > guard:
                raise GuardExceeded(f"path enumeration exceeds guard {guard} "
                                    f"(at least {count} paths)")
            return
        for j, tj, _ in nxt:
            tally(j, tj, depth + 1)

    tally(int(i), float(t), 0)

    out: set[TemporalPath] = set()

    def walk(node, tq, nodes, times, eids):
        nxt = earlier(node, tq) if len(times) < L else []
        if not nxt:
            if times:
                out.add(TemporalPath(tuple(nodes), tuple(times), tuple(eids), float(t)))
            return
        for j, tj, e in nxt:
            walk(j, tj, nodes + [j], times + [tj], eids + [e])

    walk(int(i), float(t), [int(i)], [], [])
    return out


# ------------------------------------------------------- padded batch trees

@dataclass
class BatchTree:
    """Fixed-width expansion of many roots.

    ``nodes[s]`` etc. have length R * k**s (level 0 holds the roots); the
    children of flat entry f at level s are f*k .. f*k + k - 1 at level s+1.
    """
    k: int
    nodes: list[np.ndarray]
    ts: list[np.ndarray]
    eid: list[np.ndarray]
    mask: list[np.ndarray]

    @property
    def depth(self) -> int:
        return len(self.nodes) - 1

    @property
    def n_roots(self) -> int:
        return len(self.nodes[0])


def expand_batch(g: TemporalGraph, roots, times, L: int, k: int, masked: bool = True,
                 policy: str = "recent", rng=None) -> BatchTree:
    roots = np.asarray(roots, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    nodes, ts, eid, mask = [roots], [times], [np.full(len(roots), -1)], [np.ones(len(roots), bool)]
    for _ in range(L):
        nb, nt, ne, nm = g.neighbors_batch(nodes[-1], ts[-1], k, masked=masked, policy=policy,
                                           rng=rng, valid=mask[-1])
        nodes.append(nb.reshape(-1))
        ts.append(nt.reshape(-1))
        eid.append(ne.reshape(-1))
        mask.append(nm.reshape(-1))
    return BatchTree(k, nodes, ts, eid, mask)


@dataclass
class PathSlots:
    """Padded path view of a BatchTree.

    Arrays are (R, S, L) with S = k + k**2 + ... + k**L slots per root;
    position p holds the (p+1)-th node after the target. ``slot_mask``
    marks slots that are real paths.
    """
    nodes: np.ndarray
    ts: np.ndarray
    eid: np.ndarray
    pos_mask: np.ndarray
    slot_mask: np.ndarray
    target_time: np.ndarray


def path_slots(tree: BatchTree) -> PathSlots:
    R, k, L = tree.n_roots, tree.k, tree.depth
    n_slots = sum(k ** s for s in range(1, L + 1))
    nodes = np.zeros((R, n_slots, L), dtype=np.int64)
    ts = np.zeros((R, n_slots, L))
    eid = np.zeros((R, n_slots, L), dtype=np.int64)
    pos_mask = np.zeros((R, n_slots, L), dtype=bool)
    slot_mask = np.zeros((R, n_slots), dtype=bool)
    off = 0
    for s in range(1, L + 1):
        width = k ** s
        flat = np.arange(R * width).reshape(R, width)
        valid = tree.mask[s][flat]
        if s < L:
            valid = valid & ~tree.mask[s + 1].reshape(-1, k).any(axis=1)[flat]
        slot_mask[:, off:off + width] = valid
        for p in range(1, s + 1):
            anc = flat // k ** (s - p)
            nodes[:, off:off + width, p - 1] = tree.nodes[p][anc]
            ts[:, off:off + width, p - 1] = tree.ts[p][anc]
            eid[:, off:off + width, p - 1] = tree.eid[p][anc]
            pos_mask[:, off:off + width, p - 1] = valid
        off += width
    return PathSlots(nodes, ts, eid, pos_mask, slot_mask, tree.ts[0].copy())


def slots_to_paths(slots: PathSlots, roots) -> list[list[TemporalPath]]:
    out = []
    for r, root in enumerate(np.asarray(roots)):
        paths = []
        for s in np.flatnonzero(slots.slot_mask[r]):
            m = slots.pos_mask[r, s]
            paths.append(TemporalPath(
                (int(root),) + tuple(int(x) for x in slots.nodes[r, s][m]),
                tuple(float(x) for x in slots.ts[r, s][m]),
                tuple(int(x) for x in slots.eid[r, s][m]),
                float(slots.target_time[r])))
        out.append(paths)
    return out
