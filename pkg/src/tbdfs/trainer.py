"""Contrastive link-prediction training with Adam, plus checkpoints."""
from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .config import RunConfig
from .errors import DataError, DivergenceError, SamplingError
from .graphstore import SplitBundle, TemporalGraph
from .model import TBDFS

log = logging.getLogger(__name__)

MAGIC = b"TBDF"
FORMAT_VERSION = 1


# --------------------------------------------------------- negative sampling

def _bipartite(g: TemporalGraph, config: RunConfig | None):
    if config is not None and config.bipartite is not None:
        return config.bipartite
    return g.is_bipartite


def sample_negatives(src, dst, g: TemporalGraph, rng: np.random.Generator,
                     bipartite: bool | None = None) -> np.ndarray:
    """One corrupted destination per (src, dst) pair, uniform over candidates.

    Bipartite graphs draw from the destination partition minus dst; other
    graphs draw from all nodes except src and dst.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if bipartite is None:
        bipartite = g.is_bipartite
    n = len(dst)
    if bipartite:
        cand = np.asarray(g.dst_nodes)
        if len(cand) < 2:
            raise SamplingError("destination partition has no alternative to sample")
        pos = np.searchsorted(cand, dst)
        inside = (pos < len(cand)) & (cand[np.minimum(pos, len(cand) - 1)] == dst)
        r = rng.integers(0, len(cand) - 1, size=n)
        r = r + (inside & (r >= pos))
        # dst outside the partition: len(cand) - 1 choices would skip one valid node
        if not inside.all():
            r[~inside] = rng.integers(0, len(cand), size=int((~inside).sum()))
        return cand[r]
    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    n_excl = np.where(lo == hi, 1, 2)
    if np.any(g.n_nodes - n_excl < 1):
        raise SamplingError(f"graph with {g.n_nodes} nodes has no negative candidate")
    r = (rng.random(n) * (g.n_nodes - n_excl)).astype(np.int64)
    r = r + (r >= lo)
    r = r + ((lo != hi) & (r >= hi))
    return r


def sample_negative(edge, g: TemporalGraph, rng: np.random.Generator, bipartite=None):
    i, j, t = edge
    return int(i), int(sample_negatives([i], [j], g, rng, bipartite)[0]), t


# -------------------------------------------------------------------- loss

def link_score(h_i, h_j, model: TBDFS) -> np.ndarray:
    """sigmoid(FFN(h_i ‖ h_j)) for row-aligned batches (or single vectors)."""
    h_i, h_j = np.atleast_2d(h_i), np.atleast_2d(h_j)
    return dc.sigmoid(model.logits(h_i, h_j)).value


def contrastive_loss(pos_logits, neg_logits) -> dc.Tensor:
    """-sum[log sigmoid(s_pos) + log sigmoid(-s_neg)] in fused form."""
    return dc.neg(dc.reduce_sum(dc.log_sigmoid(pos_logits)) +
                  dc.reduce_sum(dc.log_sigmoid(dc.neg(neg_logits))))


def batch_loss(src, dst, ts, g, model: TBDFS, rng, neg=None, train=True):
    """Loss over one batch of positive edges; negatives drawn if not given."""
    if len(src) == 0:
        raise DataError("empty batch")
    if neg is None:
        neg = sample_negatives(src, dst, g, rng, _bipartite(g, model.config))
    pos, negl = model.pair_logits(g, np.asarray(src), np.asarray(dst), np.asarray(neg),
                                  np.asarray(ts, dtype=np.float64), train=train, rng=rng)
    return contrastive_loss(pos, negl)


# --------------------------------------------------------------- optimiser

class Adam:
    def __init__(self, params: dict[str, dc.Tensor], lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps, self.wd = lr, beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            g = grads[k]
            if self.wd:
                g = g + self.wd * p.value
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            if self.lr:
                p.value = p.value - self.lr * mhat / (np.sqrt(vhat) + self.eps)


# -------------------------------------------------------------- checkpoint

@dataclass
class Checkpoint:
    config: RunConfig
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def model(self) -> TBDFS:
        m = TBDFS(self.config)
        m.load_state(self.params)
        return m

    def save(self, path):
        path = Path(path)
        header = json.dumps({"config": self.config.to_dict(), "meta": self.meta},
                            sort_keys=True).encode()
        with path.open("wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", FORMAT_VERSION))
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(struct.pack("<I", len(self.params)))
            for name in sorted(self.params):
                arr = np.ascontiguousarray(self.params[name], dtype="<f8")
                raw = name.encode()
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.tobytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        data = Path(path).read_bytes()
        if data[:4] != MAGIC:
            raise DataError(f"{path}: not a checkpoint (bad magic)")
        version, hlen = struct.unpack_from("<II", data, 4)
        if version != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        off = 12
        header = json.loads(data[off:off + hlen])
        off += hlen
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off:off + nlen].decode()
            off += nlen
            (rank,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            params[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).copy()
            off += 8 * size
        return cls(RunConfig.from_dict(header["config"]), params, header["meta"])


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    final_params: dict[str, np.ndarray]


def _streams(seed: int):
    init, neg, drop, val = np.random.SeedSequence(seed).spawn(4)
    return (np.random.default_rng(init), np.random.default_rng(neg),
            np.random.default_rng(drop), int(val.generate_state(1)[0]))


def train(g: TemporalGraph, splits: SplitBundle, config: RunConfig, log_path=None,
          progress=None) -> TrainResult:
    """Train on the train range in chronological batches; keep the best-val state.

    Deterministic for a given seed. ``progress`` is called with each epoch
    record as it is produced.
    """
    from .evalbench import evaluate_model

    if len(splits.train) == 0:
        raise DataError("empty training split")
    init_rng, neg_rng, drop_rng, val_seed = _streams(config.seed)
    model = TBDFS(config, init_rng)
    params = model.params()
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.eps, config.weight_decay)
    bip = _bipartite(g, config)
    best = model.state()
    best_meta = {"epoch": 0, "val_acc": None, "val_f1": None}
    best_acc = -np.inf
    stale = 0
    history = []
    ids = np.arange(splits.train.start, splits.train.stop)
    log_fh = Path(log_path).open("w") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            start = time.perf_counter()
            total, count = 0.0, 0
            for lo in range(0, len(ids), config.batch_size):
                b = ids[lo:lo + config.batch_size]
                src, dst, ts = g.src[b], g.dst[b], g.ts[b]
                neg = sample_negatives(src, dst, g, neg_rng, bip)
                with dc.Tape():
                    loss = batch_loss(src, dst, ts, g, model, drop_rng, neg=neg, train=True)
                    if not np.isfinite(loss.value):
                        raise DivergenceError(f"loss became {loss.value} in epoch {epoch}")
                    grads = dc.backward(loss, params)
                opt.step(grads)
                total += float(loss.value)
                count += len(b)
            val_acc, val_f1 = (evaluate_model(model, g, splits.val, val_seed, bip)
                               if len(splits.val) else (float("nan"), float("nan")))
            rec = {"epoch": epoch, "train_loss": total / count, "val_acc": val_acc,
                   "val_f1": val_f1, "seconds": round(time.perf_counter() - start, 3)}
            history.append(rec)
            log.info("epoch %d loss %.4f val_acc %.4f", epoch, rec["train_loss"], val_acc)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
                log_fh.flush()
            if progress:
                progress(rec)
            if val_acc > best_acc:
                best_acc, best, stale = val_acc, model.state(), 0
                best_meta = {"epoch": epoch, "val_acc": val_acc, "val_f1": val_f1}
            else:
                stale += 1
                if stale >= config.patience:
                    break
    finally:
        if log_fh:
            log_fh.close()
    meta = {**best_meta, "epochs_run": len(history),
            "rng_state": {"seed": config.seed, "neg": neg_rng.bit_generator.state["state"]["state"]}}
    meta["rng_state"]["neg"] = str(meta["rng_state"]["neg"])
    return TrainResult(Checkpoint(config, best, meta), history, model.state())
