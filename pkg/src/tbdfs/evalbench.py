"""Link-prediction evaluation, multi-seed aggregation, ablations and alpha sweeps."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .config import VARIANTS, RunConfig, config_diff
from .errors import ConfigError, DataError
from .graphstore import SplitBundle, TemporalGraph


def confusion(y_true, y_pred) -> dict:
    y_true = np.asarray(y_true, bool)
    y_pred = np.asarray(y_pred, bool)
    return {"tp": int(np.sum(y_true & y_pred)), "fp": int(np.sum(~y_true & y_pred)),
            "tn": int(np.sum(~y_true & ~y_pred)), "fn": int(np.sum(y_true & ~y_pred))}


def accuracy_f1(y_true, y_pred) -> tuple[float, float]:
    """Accuracy and positive-class F1 (0 when undefined)."""
    c = confusion(y_true, y_pred)
    n = sum(c.values())
    acc = (c["tp"] + c["tn"]) / n if n else 0.0
    denom = 2 * c["tp"] + c["fp"] + c["fn"]
    f1 = 2 * c["tp"] / denom if denom else 0.0
    return acc, f1


def evaluate_scores(pos_scores, neg_scores, threshold=0.5) -> tuple[float, float]:
    pos_scores, neg_scores = np.asarray(pos_scores), np.asarray(neg_scores)
    y = np.concatenate([np.ones(len(pos_scores), bool), np.zeros(len(neg_scores), bool)])
    pred = np.concatenate([pos_scores, neg_scores]) > threshold
    return accuracy_f1(y, pred)


def eval_pairs(g: TemporalGraph, split: range, seed: int, bipartite=None):
    """Positive edges of ``split`` and one negative destination each.

    Negatives follow the trainer's policy with an rng seeded by ``seed``.
    """
    from .trainer import sample_negatives

    if len(split) == 0:
        raise DataError("cannot evaluate on an empty split")
    ids = np.arange(split.start, split.stop)
    src, dst, ts = g.src[ids], g.dst[ids], g.ts[ids]
    neg = sample_negatives(src, dst, g, np.random.default_rng(seed), bipartite)
    return src, dst, neg, ts


def evaluate_with(scorer, g: TemporalGraph, split: range, seed: int, bipartite=None):
    """Evaluate any ``scorer(src, dst, ts) -> probabilities`` on a split."""
    src, dst, neg, ts = eval_pairs(g, split, seed, bipartite)
    return evaluate_scores(scorer(src, dst, ts), scorer(src, neg, ts))


def evaluate_model(model, g, split, seed, bipartite=None):
    src, dst, neg, ts = eval_pairs(g, split, seed, bipartite)
    return evaluate_scores(*model.pair_proba(g, src, dst, neg, ts))


def evaluate(checkpoint, g: TemporalGraph, split: range, seed: int):
    model = checkpoint.model()
    return evaluate_model(model, g, split, seed, checkpoint.config.bipartite
                          if checkpoint.config.bipartite is not None else g.is_bipartite)


# ------------------------------------------------------------- statistics

def paired_ttest(a, b) -> tuple[float, float]:
    """Two-tailed paired t-test; identical vectors give (0.0, 1.0)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    diff = a - b
    if len(a) < 2:
        raise ConfigError("paired t-test needs at least two pairs")
    if np.all(diff == diff[0]):
        if diff[0] == 0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff[0]), 0.0
    res = stats.ttest_rel(a, b)
    return float(res.statistic), float(res.pvalue)


@dataclass
class MetricsReport:
    seeds: list[int]
    accuracy: list[float]
    f1: list[float]
    config: dict = field(default_factory=dict)
    histories: list = field(default_factory=list, repr=False)

    @property
    def acc_mean(self):
        return float(np.mean(self.accuracy))

    @property
    def acc_std(self):
        return float(np.std(self.accuracy, ddof=1)) if len(self.accuracy) > 1 else 0.0

    @property
    def f1_mean(self):
        return float(np.mean(self.f1))

    @property
    def f1_std(self):
        return float(np.std(self.f1, ddof=1)) if len(self.f1) > 1 else 0.0

    def as_dict(self) -> dict:
        return {"seeds": self.seeds, "accuracy": self.accuracy, "f1": self.f1,
                "acc_mean": self.acc_mean, "acc_std": self.acc_std,
                "f1_mean": self.f1_mean, "f1_std": self.f1_std, "config": self.config}

    def compare(self, other: "MetricsReport") -> dict:
        if self.seeds != other.seeds:
            raise ConfigError("paired comparison needs the same seed list")
        t_acc, p_acc = paired_ttest(self.accuracy, other.accuracy)
        t_f1, p_f1 = paired_ttest(self.f1, other.f1)
        return {"t_acc": t_acc, "p_acc": p_acc, "t_f1": t_f1, "p_f1": p_f1}


def _one_seed(args):
    from .trainer import train

    g, splits, config, seed = args
    cfg = config.replace(seed=seed)
    res = train(g, splits, cfg)
    model = res.checkpoint.model()
    bip = cfg.bipartite if cfg.bipartite is not None else g.is_bipartite
    acc, f1 = evaluate_model(model, g, splits.test, seed, bip)
    return acc, f1, res.history


def run_seeds(g: TemporalGraph, splits: SplitBundle, config: RunConfig, seeds=(0, 1, 2, 3, 4),
              threads: int = 1) -> MetricsReport:
    """Train and test once per seed; seeds may run in worker processes."""
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ConfigError("run_seeds needs at least two seeds")
    jobs = [(g, splits, config, s) for s in seeds]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_one_seed, jobs))
    else:
        results = [_one_seed(j) for j in jobs]
    return MetricsReport(seeds, [r[0] for r in results], [r[1] for r in results],
                         config.to_dict(), [r[2] for r in results])


def ablation_grid(g, splits, config: RunConfig, seeds=(0, 1, 2, 3, 4), variants=VARIANTS,
                  threads: int = 1) -> dict:
    """One row per variant with mean/std metrics and the config diff to ``full``."""
    rows = {}
    for name in variants:
        cfg = config.variant(name)
        rep = run_seeds(g, splits, cfg, seeds, threads)
        rows[name] = {**rep.as_dict(), "diff_from_full": config_diff(config, cfg)}
    if "full" in rows:
        full = MetricsReport(rows["full"]["seeds"], rows["full"]["accuracy"], rows["full"]["f1"])
        for name, row in rows.items():
            if name != "full":
                other = MetricsReport(row["seeds"], row["accuracy"], row["f1"])
                row["vs_full"] = full.compare(other)
    return {"config": config.to_dict(), "seeds": list(seeds), "rows": rows}


def ablation_csv(grid: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "acc_mean", "acc_std", "f1_mean", "f1_std"])
    for name, row in grid["rows"].items():
        w.writerow([name, _fmt(row["acc_mean"]), _fmt(row["acc_std"]),
                    _fmt(row["f1_mean"]), _fmt(row["f1_std"])])
    return buf.getvalue()


def default_grid(step: float = 0.1) -> list[float]:
    n = int(round(1.0 / step))
    return [round(i * step, 10) for i in range(n + 1)]


def alpha_sweep(g, splits, config: RunConfig, grid=None, seeds=(0, 1, 2, 3, 4),
                threads: int = 1) -> list[dict]:
    grid = default_grid() if grid is None else list(grid)
    rows = []
    for a in grid:
        rep = run_seeds(g, splits, config.replace(alpha=float(a)), seeds, threads)
        rows.append({"alpha": float(a), "acc_mean": rep.acc_mean, "acc_std": rep.acc_std,
                     "f1_mean": rep.f1_mean, "f1_std": rep.f1_std,
                     "accuracy": rep.accuracy, "f1": rep.f1})
    return rows


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["alpha", "acc_mean", "acc_std", "f1_mean", "f1_std"])
    for r in rows:
        w.writerow([_fmt(r["alpha"]), _fmt(r["acc_mean"]), _fmt(r["acc_std"]),
                    _fmt(r["f1_mean"]), _fmt(r["f1_std"])])
    return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.6f}"
