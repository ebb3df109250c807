"""Full link-prediction model: temporal encoder plus pairwise scorer."""
from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .config import RunConfig
from .errors import ConfigError
from .layers import FFN, TemporalEncoder
from .sampler import expand_batch


class TBDFS:
    def __init__(self, config: RunConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        c = config
        self.encoder = TemporalEncoder(c.dim, c.heads, c.layers, rng, alpha=c.alpha,
                                       path_mode=c.path_mode, paths_mode=c.paths_mode,
                                       time_off=c.time_off, dropout=c.dropout)
        # scorer: [h_i ‖ h_j] (2d) -> d (relu) -> 1
        self.scorer = FFN("scorer", c.dim, c.dim, c.dim, 1, rng)

    def params(self) -> dict[str, dc.Tensor]:
        return {**self.encoder.params(), **self.scorer.params()}

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in sorted(self.params().items())}

    def load_state(self, state: dict[str, np.ndarray]):
        params = self.params()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state lacks parameters {sorted(missing)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"parameter {k}: shape {state[k].shape} != {p.shape}")
            p.value = np.array(state[k], dtype=np.float64)

    def tree(self, g, nodes, times, rng=None):
        c = self.config
        if g.d != c.dim:
            raise ConfigError(f"graph feature width {g.d} does not match model dim {c.dim}")
        return expand_batch(g, nodes, times, c.layers, c.fanout, masked=not c.time_off,
                            policy=c.sampling, rng=rng)

    def embed(self, g, nodes, times, train=False, rng=None, full=False):
        """h'_i(t) for each (node, time) pair -> Representations with (n, d) tensors."""
        tree = self.tree(g, nodes, times, rng)
        return self.encoder(g, tree, train=train, rng=rng, full=full)

    def logits(self, h_i, h_j, train=False, rng=None) -> dc.Tensor:
        out = self.scorer(h_i, h_j, self.config.dropout, train, rng)
        return dc.reshape(out, (out.shape[0],))

    def pair_logits(self, g, src, dst, neg, times, train=False, rng=None):
        """Scores of (src, dst) and (src, neg) at ``times``, sharing one forward pass."""
        n = len(src)
        nodes = np.concatenate([src, dst, neg])
        h = self.embed(g, nodes, np.tile(times, 3), train, rng).final
        h_s = _rows(h, 0, n)
        h_d = _rows(h, n, 2 * n)
        h_n = _rows(h, 2 * n, 3 * n)
        return self.logits(h_s, h_d, train, rng), self.logits(h_s, h_n, train, rng)

    def predict_proba(self, g, src, dst, times, batch_size=600):
        """sigmoid scores of (src, dst) pairs in eval mode."""
        out = []
        for lo in range(0, len(src), batch_size):
            sl = slice(lo, lo + batch_size)
            n = len(src[sl])
            reps = self.embed(g, np.concatenate([src[sl], dst[sl]]), np.tile(times[sl], 2)).final
            out.append(dc.sigmoid(self.logits(_rows(reps, 0, n), _rows(reps, n, 2 * n))).value)
        return np.concatenate(out) if out else np.zeros(0)

    def pair_proba(self, g, src, dst, neg, times, batch_size=400):
        """Eval-mode probabilities for (src, dst) and (src, neg), src embedded once."""
        pos, negp = [], []
        for lo in range(0, len(src), batch_size):
            sl = slice(lo, lo + batch_size)
            a, b = self.pair_logits(g, src[sl], dst[sl], neg[sl], times[sl])
            pos.append(dc.sigmoid(a).value)
            negp.append(dc.sigmoid(b).value)
        if not pos:
            return np.zeros(0), np.zeros(0)
        return np.concatenate(pos), np.concatenate(negp)


def _rows(t: dc.Tensor, lo: int, hi: int) -> dc.Tensor:
    return dc.take(t, np.arange(lo, hi), axis=0)
