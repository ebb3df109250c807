"""Immutable temporal graph store, CSV ingestion and chronological splits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, LookupFailure


@dataclass(frozen=True)
class Schema:
    """Column mapping for an edge CSV.

    ``features`` lists feature columns explicitly; when None every column
    outside the key columns and ``skip`` is a feature, including unnamed
    trailing columns of rows wider than the header. ``bipartite``
    keeps source and destination id spaces apart (JODIE-style files reuse
    small integers on both sides).
    """
    src: str = "src"
    dst: str = "dst"
    ts: str = "ts"
    features: tuple[str, ...] | None = None
    bipartite: bool = False
    skip: tuple[str, ...] = ()


@dataclass(frozen=True)
class SplitBundle:
    train: range
    val: range
    test: range
    t_train_end: float
    t_val_end: float

    def as_dict(self) -> dict:
        return {
            "train": [self.train.start, self.train.stop],
            "val": [self.val.start, self.val.stop],
            "test": [self.test.start, self.test.stop],
            "t_train_end": self.t_train_end,
            "t_val_end": self.t_val_end,
        }


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class TemporalGraph:
    """Undirected temporal graph; every event is stored as two arcs.

    Events are kept in chronological order: ``event_id`` is the position
    of the event after a stable sort by timestamp, so two files holding the
    same events in different row orders produce identical stores. Each
    node's arcs are sorted by (ts, event_id).
    """

    def __init__(self, src, dst, ts, edge_feat=None, node_feat=None, n_nodes=None,
                 d=None, labels=None, dst_nodes=None):
        src = np.asarray(src, dtype=np.int64).reshape(-1)
        dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        ts = np.asarray(ts, dtype=np.float64).reshape(-1)
        if not (len(src) == len(dst) == len(ts)):
            raise DataError("src, dst and ts must have equal length")
        if len(ts) and (not np.all(np.isfinite(ts)) or ts.min() < 0):
            raise DataError("timestamps must be finite and non-negative")
        if n_nodes is None:
            n_nodes = int(max(src.max(initial=-1), dst.max(initial=-1)) + 1)
        if len(src) and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n_nodes):
            raise DataError("node id out of range")
        if d is None:
            d = (edge_feat.shape[1] if edge_feat is not None
                 else node_feat.shape[1] if node_feat is not None else 0)
        self.d = int(d)
        self.n_nodes = int(n_nodes)
        self.labels = list(labels) if labels is not None else [str(i) for i in range(n_nodes)]

        order = np.argsort(ts, kind="stable")
        self.src = _readonly(src[order])
        self.dst = _readonly(dst[order])
        self.ts = _readonly(ts[order])
        self.edge_feat = _readonly(_fit_width(edge_feat, len(ts), self.d)[order])
        self.node_feat = _readonly(_fit_width(node_feat, self.n_nodes, self.d))
        self.n_events = len(ts)
        # destination partition used by negative sampling on bipartite data
        self.dst_nodes = _readonly(np.unique(self.dst) if dst_nodes is None
                                   else np.asarray(dst_nodes, dtype=np.int64))
        self._build_arcs()

    def _build_arcs(self):
        eid = np.arange(self.n_events, dtype=np.int64)
        a_src = np.concatenate([self.src, self.dst])
        a_dst = np.concatenate([self.dst, self.src])
        a_eid = np.concatenate([eid, eid])
        # event ids are already chronological, so (src, eid) order is (src, ts, eid)
        order = np.lexsort((a_eid, a_src))
        self.arc_src = _readonly(a_src[order])
        self.arc_nbr = _readonly(a_dst[order])
        self.arc_eid = _readonly(a_eid[order])
        self.arc_ts = _readonly(self.ts[self.arc_eid])
        counts = np.bincount(self.arc_src, minlength=self.n_nodes)
        self.indptr = _readonly(np.concatenate([[0], np.cumsum(counts)]).astype(np.int64))
        # arc sort key for vectorised "strictly before t" lookups
        self._uts = np.unique(self.ts)
        rank = np.searchsorted(self._uts, self.arc_ts)
        self._arc_key = _readonly(self.arc_src * (len(self._uts) + 1) + rank)

    # ------------------------------------------------------------ accessors

    @classmethod
    def empty(cls, d: int = 0) -> "TemporalGraph":
        return cls([], [], [], n_nodes=0, d=d)

    @property
    def is_bipartite(self) -> bool:
        return bool(len(np.intersect1d(self.src, self.dst)) == 0) and self.n_events > 0

    def adjacency(self, i: int) -> list[tuple[int, float, int]]:
        """Full arc list of ``i`` as (neighbor, ts, event_id), chronological."""
        self._check_node(i)
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return [(int(j), float(t), int(e)) for j, t, e in
                zip(self.arc_nbr[lo:hi], self.arc_ts[lo:hi], self.arc_eid[lo:hi])]

    def _check_node(self, i):
        if not (0 <= int(i) < self.n_nodes):
            raise LookupFailure(f"unknown node {i}")

    def _cutoff(self, nodes: np.ndarray, times: np.ndarray) -> np.ndarray:
        """Index one past the last arc of each node with ts < time."""
        r = np.searchsorted(self._uts, times, side="left")
        key = nodes * (len(self._uts) + 1) + r
        return np.searchsorted(self._arc_key, key, side="left")

    def temporal_neighbors(self, i: int, t: float, k: int | None = 20, masked: bool = True,
                           policy: str = "recent", rng: np.random.Generator | None = None):
        """Temporal neighbors of ``i`` strictly before ``t``.

        Returns up to ``k`` tuples (j, t_j, edge_feat, event_id) ordered by
        ascending t_j; ``k=None`` means no cap. With ``masked=False`` the
        time filter is dropped (used only by the no-time ablation).
        """
        self._check_node(i)
        if not math.isfinite(t):
            raise DataError(f"query time must be finite, got {t}")
        lo = int(self.indptr[i])
        hi = int(self._cutoff(np.array([i]), np.array([t]))[0]) if masked else int(self.indptr[i + 1])
        idx = _choose(lo, hi, k, policy, rng)
        return [(int(self.arc_nbr[a]), float(self.arc_ts[a]), self.edge_feat[self.arc_eid[a]],
                 int(self.arc_eid[a])) for a in idx]

    def neighbors_batch(self, nodes, times, k: int, masked: bool = True, policy: str = "recent",
                        rng: np.random.Generator | None = None, valid=None):
        """Padded neighbor lookup for many (node, time) queries at once.

        Returns (nbr, ts, eid, mask), each of shape (n, k). Valid entries are
        left-aligned and ascending in time. Queries with ``valid`` False get
        an all-False row.
        """
        nodes = np.asarray(nodes, dtype=np.int64)
        times = np.asarray(times, dtype=np.float64)
        n = len(nodes)
        if valid is None:
            valid = np.ones(n, dtype=bool)
        safe = np.where(valid, nodes, 0)
        lo = self.indptr[safe] if self.n_nodes else np.zeros(n, dtype=np.int64)
        if not self.n_nodes:
            hi = lo
        elif masked:
            hi = self._cutoff(safe, np.where(valid, times, 0.0))
        else:
            hi = self.indptr[safe + 1]
        hi = np.where(valid, hi, lo)
        nbr = np.zeros((n, k), dtype=np.int64)
        ts = np.zeros((n, k))
        eid = np.zeros((n, k), dtype=np.int64)
        if policy == "recent":
            cnt = np.minimum(hi - lo, k)
            pos = (hi - cnt)[:, None] + np.arange(k)[None, :]
            mask = np.arange(k)[None, :] < cnt[:, None]
            pos = np.where(mask, pos, 0)
        elif policy == "uniform":
            pos = np.zeros((n, k), dtype=np.int64)
            mask = np.zeros((n, k), dtype=bool)
            for q in range(n):
                idx = _choose(int(lo[q]), int(hi[q]), k, "uniform", rng)
                pos[q, :len(idx)] = idx
                mask[q, :len(idx)] = True
        else:
            raise ConfigError(f"unknown sampling policy {policy!r}")
        if len(self.arc_nbr):
            nbr = np.where(mask, self.arc_nbr[pos], 0)
            ts = np.where(mask, self.arc_ts[pos], 0.0)
            eid = np.where(mask, self.arc_eid[pos], 0)
        return nbr, ts, eid, mask

    def stats(self) -> dict:
        return {
            "nodes": self.n_nodes,
            "events": self.n_events,
            "arcs": int(2 * self.n_events),
            "feature_dim": self.d,
            "ts_min": float(self.ts[0]) if self.n_events else None,
            "ts_max": float(self.ts[-1]) if self.n_events else None,
            "bipartite": self.is_bipartite,
        }

    def replace(self, ts=None, edge_feat=None, node_feat=None) -> "TemporalGraph":
        """Copy with some event/node arrays swapped (events stay in current id order)."""
        return TemporalGraph(
            self.src, self.dst, self.ts if ts is None else ts,
            edge_feat=self.edge_feat if edge_feat is None else edge_feat,
            node_feat=self.node_feat if node_feat is None else node_feat,
            n_nodes=self.n_nodes, d=self.d, labels=self.labels, dst_nodes=self.dst_nodes)

    def same_as(self, other: "TemporalGraph") -> bool:
        arrays = ("src", "dst", "ts", "edge_feat", "node_feat", "indptr", "arc_nbr", "arc_eid", "arc_ts")
        return (self.n_nodes == other.n_nodes and self.d == other.d and self.labels == other.labels
                and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays))


def _choose(lo, hi, k, policy, rng):
    if k is None or hi - lo <= k:
        return list(range(lo, hi))
    if policy == "recent":
        return list(range(hi - k, hi))
    if policy == "uniform":
        if rng is None:
            raise ConfigError("uniform neighbor sampling needs an rng")
        return sorted(int(a) for a in rng.choice(np.arange(lo, hi), size=k, replace=False))
    raise ConfigError(f"unknown sampling policy {policy!r}")


def _fit_width(feat, rows, d) -> np.ndarray:
    """Zero-pad or truncate feature rows to width d; None becomes zeros."""
    out = np.zeros((rows, d))
    if feat is None:
        return out
    feat = np.asarray(feat, dtype=np.float64)
    if feat.ndim == 1:
        feat = feat.reshape(rows, -1)
    w = min(d, feat.shape[1])
    out[:, :w] = feat[:, :w]
    return out


def _label_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def load_csv(path, schema: Schema | None = None, d: int = 0,
             node_features: str | Path | None = None,
             max_events: int | None = None) -> TemporalGraph:
    """Read a headered edge CSV (``src,dst,ts[,f1..fn]``) into a TemporalGraph.

    Node ids are the sorted distinct labels (numerically when they parse as
    numbers). Missing features become zeros; rows wider than ``d`` are
    truncated, narrower ones zero-padded. ``max_events`` keeps only the
    earliest events (file order breaks timestamp ties).
    """
    schema = schema or Schema()
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return TemporalGraph.empty(d)
        header = [h.strip() for h in header]
        try:
            ci = [header.index(c) for c in (schema.src, schema.dst, schema.ts)]
        except ValueError:
            raise DataError(f"{path}: header {header} lacks one of "
                            f"{schema.src!r}, {schema.dst!r}, {schema.ts!r}") from None
        excluded = set(ci) | {header.index(c) for c in schema.skip if c in header}
        fcols = None
        if schema.features is not None:
            fcols = [header.index(c) for c in schema.features]
        srcs, dsts, tss, feats = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                s, t_, ts = row[ci[0]].strip(), row[ci[1]].strip(), float(row[ci[2]])
                cols = fcols if fcols is not None else (
                    c for c in range(len(row)) if c not in excluded)
                f = [float(row[c]) for c in cols if c < len(row) and row[c].strip()]
            except (ValueError, IndexError) as e:
                raise DataError(f"{path}:{lineno}: cannot parse row {row!r} ({e})") from None
            if not math.isfinite(ts):
                raise DataError(f"{path}:{lineno}: non-finite timestamp")
            if ts < 0:
                raise DataError(f"{path}:{lineno}: negative timestamp {ts}")
            if schema.bipartite:
                s, t_ = "u:" + s, "i:" + t_
            srcs.append(s)
            dsts.append(t_)
            tss.append(ts)
            feats.append(f[:d] + [0.0] * (d - len(f[:d])))

    if max_events is not None and len(tss) > max_events:
        keep = np.sort(np.argsort(np.array(tss), kind="stable")[:max_events])
        srcs = [srcs[r] for r in keep]
        dsts = [dsts[r] for r in keep]
        tss = [tss[r] for r in keep]
        feats = [feats[r] for r in keep]
    if schema.bipartite:
        labels = (sorted(set(srcs), key=lambda x: _label_key(x[2:]))
                  + sorted(set(dsts), key=lambda x: _label_key(x[2:])))
    else:
        labels = sorted(set(srcs) | set(dsts), key=_label_key)
    index = {lab: n for n, lab in enumerate(labels)}
    src = np.array([index[s] for s in srcs], dtype=np.int64)
    dst = np.array([index[s] for s in dsts], dtype=np.int64)
    ts = np.array(tss, dtype=np.float64)
    # break timestamp ties by row content so row order never matters
    edge_feat = np.array(feats, dtype=np.float64).reshape(len(tss), d)
    order = np.lexsort(tuple(edge_feat[:, c] for c in range(d - 1, -1, -1)) + (dst, src, ts))
    node_feat = None
    if node_features is not None:
        node_feat = _load_node_features(Path(node_features), index, d, schema.bipartite)
    dst_nodes = np.unique(dst) if schema.bipartite else None
    return TemporalGraph(src[order], dst[order], ts[order], edge_feat=edge_feat[order],
                         node_feat=node_feat, n_nodes=len(labels), d=d, labels=labels,
                         dst_nodes=dst_nodes)


def _load_node_features(path: Path, index: dict, d: int, bipartite: bool) -> np.ndarray:
    out = np.zeros((len(index), d))
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: cannot parse row {row!r} ({e})") from None
            label = row[0].strip()
            keys = ["u:" + label, "i:" + label] if bipartite else [label]
            for key in keys:
                if key in index:
                    w = min(d, len(vals))
                    out[index[key], :w] = vals[:w]
    return out


def chronological_split(g: TemporalGraph, train_frac: float = 0.70,
                        val_frac: float = 0.15) -> SplitBundle:
    """Split events by count in chronological order.

    Train takes floor(train_frac*n) events, val ceil(val_frac*n), test the rest.
    """
    if train_frac <= 0 or val_frac <= 0 or train_frac + val_frac >= 1:
        raise ConfigError("split fractions must be positive and sum to < 1")
    n = g.n_events
    if n < 10:
        raise DataError(f"refusing to split a graph with only {n} events (need >= 10)")
    n_train = int(math.floor(train_frac * n + 1e-9))
    n_val = int(math.ceil(val_frac * n - 1e-9))
    n_val = min(n_val, n - n_train - 1)
    train = range(0, n_train)
    val = range(n_train, n_train + n_val)
    test = range(n_train + n_val, n)
    return SplitBundle(train, val, test, float(g.ts[n_train - 1]), float(g.ts[n_train + n_val - 1]))
