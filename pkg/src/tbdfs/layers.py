"""Temporal attention layers: neighbor (BFS) attention, path (DFS) attention,
path-set aggregation and the BFS/DFS balance.

Row-vector convention throughout: a projection is ``h @ W``. Multi-head
projection matrices are stored with the heads side by side in the columns,
so ``W[:, m*D:(m+1)*D]`` is head m's D x D matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ConfigError, DimensionError
from .sampler import BatchTree, TemporalPath, path_slots
from .timeenc import TimeEncoder


def _param(rng, name, fan_in, fan_out, shape=None):
    return dc.Tensor(dc.glorot(rng, fan_in, fan_out, shape), requires_grad=True, name=name)


def _zeros(name, n):
    return dc.Tensor(np.zeros(n), requires_grad=True, name=name)


class MultiHeadAttention:
    """Cross-attention of one query over a masked set of keys.

    Scores are plain dot products of the projected query and keys (no
    1/sqrt(D) scaling). The heads' weighted value sums are concatenated.
    """

    def __init__(self, prefix: str, dim: int, heads: int, rng: np.random.Generator):
        if heads < 1:
            raise ConfigError(f"need at least one attention head, got {heads}")
        self.dim, self.heads = dim, heads
        self.WQ = _param(rng, f"{prefix}.WQ", dim, dim, (dim, dim * heads))
        self.WK = _param(rng, f"{prefix}.WK", dim, dim, (dim, dim * heads))
        self.WV = _param(rng, f"{prefix}.WV", dim, dim, (dim, dim * heads))

    def params(self):
        return {p.name: p for p in (self.WQ, self.WK, self.WV)}

    def __call__(self, query, keys, mask, uniform=False, dropout=0.0, train=False, rng=None):
        """query (..., D), keys (..., K, D), mask (..., K) -> ((..., M*D), weights (..., M, K)).

        Leading dims of query and keys broadcast. Rows with no unmasked key
        produce zeros. ``uniform`` replaces learned weights by the plain
        average over unmasked keys.
        """
        query, keys = dc.as_tensor(query), dc.as_tensor(keys)
        D, M = self.dim, self.heads
        if query.shape[-1] != D or keys.shape[-1] != D or query.ndim != keys.ndim - 1:
            raise DimensionError(f"attention expects query (..., {D}) and keys (..., K, {D}), "
                                 f"got {query.shape} and {keys.shape}")
        K = keys.shape[-2]
        lead = keys.shape[:-2]
        mask = np.asarray(mask, dtype=bool)
        v = dc.swapaxes(dc.reshape(dc.matmul(keys, self.WV), lead + (K, M, D)), -3, -2)
        if uniform:
            cnt = mask.sum(axis=-1, keepdims=True)
            w = np.where(mask, 1.0 / np.maximum(cnt, 1), 0.0)
            probs = dc.Tensor(np.broadcast_to(w[..., None, :], lead + (M, K)).copy())
        else:
            q = dc.reshape(dc.matmul(query, self.WQ), query.shape[:-1] + (M, D, 1))
            kk = dc.swapaxes(dc.reshape(dc.matmul(keys, self.WK), lead + (K, M, D)), -3, -2)
            scores = dc.reshape(dc.matmul(kk, q), lead + (M, K))
            probs = dc.softmax(scores, axis=-1, mask=mask[..., None, :])
            probs = dc.dropout(probs, dropout, train, rng)
        out = dc.matmul(dc.reshape(probs, lead + (M, 1, K)), v)  # (..., M, 1, D)
        return dc.reshape(out, lead + (M * D,)), probs


class FFN:
    """Two-layer relu network on a concatenation [self_part ‖ agg_part].

    The first weight matrix is kept as two row blocks so the self part can
    broadcast against many aggregated rows without materialising copies.
    """

    def __init__(self, prefix: str, self_dim: int, agg_dim: int, hidden: int, out: int,
                 rng: np.random.Generator):
        fan_in = self_dim + agg_dim
        self.W1s = _param(rng, f"{prefix}.W1_self", fan_in, hidden, (self_dim, hidden))
        self.W1a = _param(rng, f"{prefix}.W1_agg", fan_in, hidden, (agg_dim, hidden))
        self.b1 = _zeros(f"{prefix}.b1", hidden)
        self.W2 = _param(rng, f"{prefix}.W2", hidden, out)
        self.b2 = _zeros(f"{prefix}.b2", out)

    def params(self):
        return {p.name: p for p in (self.W1s, self.W1a, self.b1, self.W2, self.b2)}

    def __call__(self, self_part, agg_part, dropout=0.0, train=False, rng=None):
        h = dc.matmul(self_part, self.W1s) + dc.matmul(agg_part, self.W1a) + self.b1
        h = dc.dropout(dc.relu(h), dropout, train, rng)
        return dc.matmul(h, self.W2) + self.b2


# ------------------------------------------------------------ feature blocks

def neighbor_feature(h_j, x_ij, dt, enc: TimeEncoder) -> dc.Tensor:
    """h_j ‖ x_ij ‖ Φ(dt); works on any matching leading shape."""
    h_j, x_ij = dc.as_tensor(h_j), dc.as_tensor(x_ij)
    phi = enc(dt)
    if h_j.shape != x_ij.shape or h_j.shape != phi.shape:
        raise DimensionError(f"feature blocks differ: {h_j.shape}, {x_ij.shape}, {phi.shape}")
    return dc.concat([h_j, x_ij, phi], axis=-1)


def self_feature(h_i, enc: TimeEncoder) -> dc.Tensor:
    """h_i ‖ 0 ‖ Φ(0): the target attends from its own query time."""
    h_i = dc.as_tensor(h_i)
    return neighbor_feature(h_i, np.zeros(h_i.shape), np.zeros(h_i.shape[:-1]), enc)


def balance(h_bfs, h_dfs, alpha: float) -> dc.Tensor:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"balance alpha must be in [0, 1], got {alpha}")
    return dc.mul(h_bfs, alpha) + dc.mul(h_dfs, 1.0 - alpha)


# ------------------------------------------------------------------- blocks

class BfsLayer:
    """One neighbor-attention layer: attention over temporal neighbors, then
    FFN(h_prev ‖ heads) back to d."""

    def __init__(self, prefix, d, heads, rng):
        self.d, self.heads = d, heads
        self.attn = MultiHeadAttention(f"{prefix}.attn", 3 * d, heads, rng)
        self.ffn = FFN(f"{prefix}.ffn", d, 3 * d * heads, d, d, rng)

    def params(self):
        return {**self.attn.params(), **self.ffn.params()}

    def __call__(self, h_prev, self_f, neigh_f, mask, dropout=0.0, train=False, rng=None):
        heads, probs = self.attn(self_f, neigh_f, mask, dropout=dropout, train=train, rng=rng)
        return self.ffn(h_prev, heads, dropout, train, rng), probs


class PathEncoder:
    """Single attention layer over the nodes of one temporal path.

    The target's self feature is the query; keys are the path's other
    nodes, each carrying x_j ‖ edge into j ‖ Φ(t - t_j) with t the target
    time. Output is FFN(x_target ‖ heads).
    """

    def __init__(self, prefix, d, heads, rng):
        self.d = d
        self.attn = MultiHeadAttention(f"{prefix}.attn", 3 * d, heads, rng)
        self.ffn = FFN(f"{prefix}.ffn", d, 3 * d * heads, d, d, rng)

    def params(self):
        return {**self.attn.params(), **self.ffn.params()}

    def __call__(self, x_target, self_f, node_f, mask, average=False, dropout=0.0, train=False,
                 rng=None):
        heads, probs = self.attn(self_f, node_f, mask, uniform=average, dropout=dropout,
                                 train=train, rng=rng)
        return self.ffn(x_target, heads, dropout, train, rng), probs

    def encode_tree(self, g, tree: BatchTree, enc: TimeEncoder, average=False, dropout=0.0,
                    train=False, rng=None):
        """Encode every path slot of ``tree`` at once -> ((R, S, d), slot mask (R, S)).

        Same function as calling the encoder path by path, arranged so each
        tree entry is projected once: a path's key/value at position p is the
        projection of its level-p ancestor, which is shared by all slots below
        it. The value projection and the FFN's first layer are fused per head
        (heads ‖ ... @ W1_agg == sum_m head_m @ W1_agg[m]).
        """
        R, k, L, d = tree.n_roots, tree.k, tree.depth, self.d
        M, D = self.attn.heads, self.attn.dim
        x_root = g.node_feat[tree.nodes[0]]
        q = dc.matmul(self_feature(x_root, enc), self.attn.WQ)
        q = dc.reshape(q, (R, M, D, 1))
        wv = dc.swapaxes(dc.reshape(self.attn.WV, (D, M, D)), 0, 1)            # (M, D, D)
        w1 = dc.reshape(self.ffn.W1a, (M, D, d))
        fused = dc.reshape(dc.swapaxes(dc.matmul(wv, w1), 0, 1), (D, M * d))  # (D, M*d)

        scores, values = [], []
        for p in range(1, L + 1):
            n = k ** p
            x = g.node_feat[tree.nodes[p]]
            e = g.edge_feat[tree.eid[p]]
            dt = np.repeat(tree.ts[0], n) - tree.ts[p]
            f = neighbor_feature(x, e, dt, enc)                                 # (R*n, D)
            if not average:
                kp = dc.swapaxes(dc.reshape(dc.matmul(f, self.attn.WK), (R, n, M, D)), 1, 2)
                sc = dc.reshape(dc.matmul(kp, q), (R, M, n))
                scores.append(dc.swapaxes(sc, 1, 2))                            # (R, n, M)
            values.append(dc.reshape(dc.matmul(f, fused), (R, n, M, d)))

        hs = dc.matmul(dc.Tensor(x_root), self.ffn.W1s) + self.ffn.b1        # (R, d)
        hs = dc.reshape(hs, (R, 1, d))
        blocks, masks = [], []
        for s in range(1, L + 1):
            n = k ** s
            vals = [dc.reshape(dc.repeat(values[p - 1], k ** (s - p), axis=1), (R, n, M, 1, d))
                    for p in range(1, s + 1)]
            vals = dc.concat(vals, axis=3) if s > 1 else vals[0]              # (R, n, M, s, d)
            if average:
                probs = dc.Tensor(np.full((R, n, M, 1, s), 1.0 / s))
            else:
                sc = [dc.reshape(dc.repeat(scores[p - 1], k ** (s - p), axis=1), (R, n, M, 1))
                      for p in range(1, s + 1)]
                sc = dc.concat(sc, axis=3) if s > 1 else sc[0]                 # (R, n, M, s)
                probs = dc.softmax(sc, axis=-1)
                probs = dc.dropout(probs, dropout, train, rng)
                probs = dc.reshape(probs, (R, n, M, 1, s))
            agg = dc.reduce_sum(dc.matmul(probs, vals), axis=(2, 3))           # (R, n, d)
            h = dc.dropout(dc.relu(agg + hs), dropout, train, rng)
            blocks.append(dc.matmul(h, self.ffn.W2) + self.ffn.b2)
            valid = tree.mask[s].reshape(R, n)
            if s < L:
                valid = valid & ~tree.mask[s + 1].reshape(R, n, k).any(axis=2)
            masks.append(valid)
        out = dc.concat(blocks, axis=1) if L > 1 else blocks[0]
        return out, np.concatenate(masks, axis=1)


class PathSetAggregator:
    """Multi-head attention with the BFS representation as query and path
    encodings as keys and values; heads concatenated then projected to d."""

    def __init__(self, prefix, d, heads, rng):
        self.attn = MultiHeadAttention(f"{prefix}.attn", d, heads, rng)
        self.WO = _param(rng, f"{prefix}.WO", d * heads, d)

    def params(self):
        return {**self.attn.params(), self.WO.name: self.WO}

    def __call__(self, h_bfs, path_reprs, mask, average=False, dropout=0.0, train=False, rng=None):
        path_reprs = dc.as_tensor(path_reprs)
        mask = np.asarray(mask, dtype=bool)
        if average:
            cnt = mask.sum(axis=-1, keepdims=True)
            w = np.where(mask, 1.0 / np.maximum(cnt, 1), 0.0)[..., None, :]
            out = dc.matmul(dc.Tensor(w), path_reprs)
            return dc.reshape(out, out.shape[:-2] + (out.shape[-1],)), None
        h_bfs = dc.as_tensor(h_bfs)
        heads, probs = self.attn(h_bfs, path_reprs, mask, dropout=dropout, train=train, rng=rng)
        return dc.matmul(heads, self.WO), probs


# ----------------------------------------------------------- single-item API

def bfs_attend(self_f, neigh_f, h_prev_i, layer: BfsLayer, train=False, dropout=0.0, rng=None):
    """One BFS layer for a single target. ``neigh_f`` may be an empty list."""
    self_f = dc.as_tensor(self_f)
    D = self_f.shape[-1]
    if len(neigh_f):
        keys = dc.concat([dc.reshape(dc.as_tensor(f), (1, D)) for f in neigh_f], axis=0)
        mask = np.ones(len(neigh_f), dtype=bool)
    else:
        keys, mask = dc.Tensor(np.zeros((1, D))), np.zeros(1, dtype=bool)
    out, probs = layer(dc.reshape(dc.as_tensor(h_prev_i), (1, -1)), dc.reshape(self_f, (1, D)),
                       dc.reshape(keys, (1,) + keys.shape), mask[None], dropout, train, rng)
    return dc.reshape(out, (-1,)), probs.value[0][:, :len(neigh_f)]


def dfs_path_encode(path: TemporalPath, g, enc: TimeEncoder, encoder: PathEncoder,
                    average=False):
    """Encode one path (target first) -> (d-vector, per-head weights over path nodes)."""
    if path.length < 1:
        raise ValueError("cannot encode an empty path")
    t = path.target_time
    nodes = np.array(path.nodes[1:])
    x = g.node_feat[nodes]
    e = g.edge_feat[np.array(path.event_ids)]
    dt = t - np.array(path.times)
    node_f = neighbor_feature(x, e, dt, enc)
    x_i = g.node_feat[path.nodes[0]]
    self_f = self_feature(x_i, enc)
    out, probs = encoder(x_i[None], dc.reshape(self_f, (1, -1)), dc.reshape(node_f, (1,) + node_f.shape),
                         np.ones((1, len(nodes)), bool), average=average)
    return dc.reshape(out, (-1,)), probs.value[0]


def dfs_aggregate(h_bfs, path_reprs, agg: PathSetAggregator, average=False):
    """Aggregate a list of path encodings; empty list gives the zero vector."""
    h_bfs = dc.as_tensor(h_bfs)
    d = h_bfs.shape[-1]
    if not len(path_reprs):
        return dc.Tensor(np.zeros(d))
    keys = dc.concat([dc.reshape(dc.as_tensor(p), (1, d)) for p in path_reprs], axis=0)
    out, _ = agg(dc.reshape(h_bfs, (1, d)), dc.reshape(keys, (1,) + keys.shape),
                 np.ones((1, len(path_reprs)), bool), average=average)
    return dc.reshape(out, (-1,))


# ------------------------------------------------------------ batched model

@dataclass
class Representations:
    final: dc.Tensor
    bfs: dc.Tensor | None
    dfs: dc.Tensor | None


class TemporalEncoder:
    """Node representations at query times from BFS and DFS branches.

    ``path_mode`` / ``paths_mode`` are "attn" or "mean" (ablations);
    ``time_off`` zeroes the time encoding and drops the future mask.
    """

    def __init__(self, d, heads, L, rng, alpha=0.5, path_mode="attn", paths_mode="attn",
                 time_off=False, dropout=0.0, freqs=None):
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError(f"balance alpha must be in [0, 1], got {alpha}")
        if path_mode not in ("attn", "mean") or paths_mode not in ("attn", "mean"):
            raise ConfigError("aggregation modes must be 'attn' or 'mean'")
        self.d, self.heads, self.L = d, heads, L
        self.alpha, self.path_mode, self.paths_mode = alpha, path_mode, paths_mode
        self.time_off, self.dropout = time_off, dropout
        self.enc = TimeEncoder(d, freqs, zero=time_off)
        self.bfs_layers = [BfsLayer(f"bfs.{l}", d, heads, rng) for l in range(1, L + 1)]
        self.path_encoder = PathEncoder("dfs.path", d, heads, rng)
        self.path_agg = PathSetAggregator("dfs.agg", d, heads, rng)

    def params(self) -> dict[str, dc.Tensor]:
        out = dict(self.enc.params())
        for layer in self.bfs_layers:
            out.update(layer.params())
        out.update(self.path_encoder.params())
        out.update(self.path_agg.params())
        return out

    def bfs(self, g, tree: BatchTree, train=False, rng=None) -> dc.Tensor:
        """h^(L) of the tree roots by memoised recursion over tree levels."""
        L, k = tree.depth, tree.k
        if L < self.L:
            raise ConfigError(f"tree depth {L} < model depth {self.L}")
        memo: dict[tuple[int, int], dc.Tensor] = {}
        d = self.d

        def rep(l, s):
            if (l, s) in memo:
                return memo[(l, s)]
            if l == 0:
                out = dc.Tensor(g.node_feat[tree.nodes[s]])
            else:
                n = len(tree.nodes[s])
                h_self = rep(l - 1, s)
                h_nb = dc.reshape(rep(l - 1, s + 1), (n, k, d))
                e = g.edge_feat[tree.eid[s + 1]].reshape(n, k, d)
                dt = tree.ts[s][:, None] - tree.ts[s + 1].reshape(n, k)
                mask = tree.mask[s + 1].reshape(n, k)
                neigh_f = neighbor_feature(h_nb, e, dt, self.enc)
                self_f = self_feature(h_self, self.enc)
                out, _ = self.bfs_layers[l - 1](h_self, self_f, neigh_f, mask,
                                                self.dropout, train, rng)
            memo[(l, s)] = out
            return out

        return rep(self.L, 0)

    def path_encodings(self, g, tree: BatchTree, train=False, rng=None):
        """Per-slot path encodings (R, S, d) and the slot mask (R, S)."""
        return self.path_encoder.encode_tree(g, tree, self.enc, self.path_mode == "mean",
                                             self.dropout, train, rng)

    def path_encodings_by_slot(self, g, tree: BatchTree):
        """Unfused slot-by-slot evaluation of ``path_encodings`` (eval mode)."""
        slots = path_slots(tree)
        roots = tree.nodes[0]
        x = g.node_feat[slots.nodes]
        e = g.edge_feat[slots.eid]
        dt = slots.target_time[:, None, None] - slots.ts
        node_f = neighbor_feature(x, e, dt, self.enc)  # (R, S, L, 3d)
        x_i = g.node_feat[roots]
        self_f = dc.reshape(self_feature(x_i, self.enc), (len(roots), 1, 3 * self.d))
        reprs, _ = self.path_encoder(x_i[:, None, :], self_f, node_f, slots.pos_mask,
                                     average=self.path_mode == "mean")
        return reprs, slots.slot_mask

    def dfs(self, g, tree: BatchTree, h_bfs, train=False, rng=None) -> dc.Tensor:
        reprs, slot_mask = self.path_encodings(g, tree, train, rng)
        out, _ = self.path_agg(h_bfs, reprs, slot_mask, average=self.paths_mode == "mean",
                               dropout=self.dropout, train=train, rng=rng)
        return out

    def __call__(self, g, tree: BatchTree, train=False, rng=None, full=False) -> Representations:
        """``full`` forces both branches even when alpha makes one irrelevant."""
        h_bfs = self.bfs(g, tree, train, rng)
        if self.alpha == 1.0 and not full:
            return Representations(h_bfs, h_bfs, None)
        h_dfs = self.dfs(g, tree, h_bfs, train, rng)
        return Representations(balance(h_bfs, h_dfs, self.alpha), h_bfs, h_dfs)
