"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line with the measured quantity; the
lines are also repeated in the terminal summary (see conftest.py).
"""
import math
import os
import time

import numpy as np
import pytest

from tbdfs.config import RunConfig
from tbdfs.evalbench import evaluate_model, paired_ttest, run_seeds
from tbdfs.graphstore import chronological_split, load_csv, Schema
from tbdfs.model import TBDFS
from tbdfs.planted import PlantedParams, gen_planted
from tbdfs.sampler import brute_force_paths, collect_paths, expand, path_events
from tbdfs.trainer import _streams, batch_loss, sample_negatives, train

from conftest import random_graph
from oracles import model_grad_errors, op_cases, op_grad_error

RESULTS: list[str] = []

# pre-registered planted setup for criteria 6 and 7 (see the decisions ledger)
PLANTED = PlantedParams(n_users=6, n_items=10, window=1, revisit_prob=0.8, n_events=4500,
                        noise_edges=500, dim=16)
PLANTED_CFG = RunConfig(dim=16, heads=1, layers=2, fanout=5, lr=5e-3, batch_size=50,
                        dropout=0.0, epochs=6, patience=6)
SEEDS = (0, 1, 2, 3, 4)
CANDIDATE_ALPHAS = (0.0, 0.25, 0.5)

# 200-edge toy for the loss-reduction half of criterion 8
TOY = PlantedParams(n_users=4, n_items=12, window=1, revisit_prob=0.8, n_events=200,
                    noise_edges=0, dim=16)
TOY_CFG = RunConfig(dim=16, heads=1, layers=2, fanout=5, lr=3e-3, batch_size=20,
                    dropout=0.0, epochs=30, patience=30)


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# --------------------------------------------------------------- criterion 1

def test_criterion_1_gradients():
    start = time.perf_counter()
    per_op = {name: op_grad_error(fn, inputs) for name, fn, inputs in op_cases()}
    model = model_grad_errors(0, "attn", 0.5)
    secs = time.perf_counter() - start
    worst_op, worst_model = max(per_op.values()), max(model.values())
    ok = worst_op < 1e-4 and worst_model < 1e-3 and secs < 60
    report(1, ok, f"max per-op rel err {worst_op:.2e} (< 1e-4) over {len(per_op)} ops, "
                  f"max end-to-end rel err {worst_model:.2e} (< 1e-3) over {len(model)} "
                  f"parameters, {secs:.1f}s (< 60s)")


# --------------------------------------------------------------- criterion 2

def test_criterion_2_sampler_oracle():
    start = time.perf_counter()
    mismatches, checked = [], 0
    for seed in range(50):
        g = random_graph(seed)
        i = seed % g.n_nodes
        t = float(np.quantile(g.ts, 0.8))
        for L in (1, 2, 3):
            got = {p.key for p in collect_paths(expand(g, i, t, L, k=None))}
            want = {p.key for p in brute_force_paths(g, i, t, L)}
            checked += 1
            if got != want:
                mismatches.append((seed, L))
    secs = time.perf_counter() - start
    report(2, not mismatches and secs < 60,
           f"{checked - len(mismatches)}/{checked} (graph, L) cases equal as exact sets, "
           f"{secs:.1f}s (< 60s)")


# --------------------------------------------------------------- criterion 3

def test_criterion_3_receptive_field():
    bad = []
    for seed in range(50):
        g = random_graph(seed)
        i = seed % g.n_nodes
        t = float(np.quantile(g.ts, 0.8))
        for k in (None, 3):
            tree = expand(g, i, t, 2, k=k)
            if path_events(collect_paths(tree)) != tree.events():
                bad.append((seed, k))
    report(3, not bad, f"{100 - len(bad)}/100 trees (50 graphs x fan-out in {{inf, 3}}) have "
                       f"identical path and tree (node, ts) sets")


# --------------------------------------------------------------- criterion 4

def test_criterion_4_balance_endpoints():
    data = gen_planted(PlantedParams(n_users=4, n_items=8, n_events=160, noise_edges=0, dim=8),
                       seed=0)
    g = data.graph
    sp = chronological_split(g)
    trained = train(g, sp, RunConfig(dim=8, heads=2, fanout=4, epochs=2, lr=0.01, batch_size=40,
                                     dropout=0.0, alpha=0.5)).final_params
    nodes = np.arange(g.n_nodes)
    times = np.full(g.n_nodes, float(g.ts[sp.val.start]))
    diffs = {}
    for alpha in (1.0, 0.0):
        m = TBDFS(RunConfig(dim=8, heads=2, fanout=4, alpha=alpha))
        m.load_state(trained)
        tree = m.tree(g, nodes, times)
        out = m.embed(g, nodes, times).final.value
        h_bfs = m.encoder.bfs(g, tree)
        ref = h_bfs.value if alpha == 1.0 else m.encoder.dfs(g, tree, h_bfs).value
        diffs[alpha] = float(np.max(np.abs(out - ref)))
    ok = max(diffs.values()) < 1e-9
    report(4, ok, f"trained model, alpha=1 vs BFS-only max abs diff {diffs[1.0]:.1e}, "
                  f"alpha=0 vs DFS-only {diffs[0.0]:.1e} (< 1e-9)")


# --------------------------------------------------------------- criterion 5

def test_criterion_5_temporal_masking():
    changed, total = 0, 0
    for seed in range(10):
        g = random_graph(seed, n_nodes=20, n_events=200, d=4, int_times=False)
        rng = np.random.default_rng(seed)
        m = TBDFS(RunConfig(dim=4, heads=2, fanout=5, alpha=0.5), np.random.default_rng(seed))
        for q in (0.3, 0.6, 0.9):
            t = float(np.quantile(g.ts, q))
            future = g.ts >= t
            ef = g.edge_feat.copy()
            ef[future] = rng.normal(size=(future.sum(), 4)) * 50
            ts = g.ts.copy()
            ts[future] += rng.uniform(0, 10, future.sum())
            g2 = g.replace(ts=ts, edge_feat=ef)
            nodes = np.arange(g.n_nodes)
            a = m.embed(g, nodes, np.full(g.n_nodes, t), full=True)
            b = m.embed(g2, nodes, np.full(g.n_nodes, t), full=True)
            for part in ("final", "bfs", "dfs"):
                total += 1
                changed += not np.array_equal(getattr(a, part).value, getattr(b, part).value)
    report(5, changed == 0, f"{total - changed}/{total} representation blocks bit-identical "
                            f"after perturbing all events at t >= query time")


# ------------------------------------------------------- criteria 6 and 7

@pytest.fixture(scope="module")
def planted_runs():
    data = gen_planted(PLANTED, seed=0)
    g = data.graph
    sp = chronological_split(g)
    out = {"n_events": g.n_events}
    start = time.perf_counter()
    for alpha in CANDIDATE_ALPHAS + (1.0,):
        rep = run_seeds(g, sp, PLANTED_CFG.replace(alpha=alpha), SEEDS)
        out[alpha] = {"test": rep.accuracy,
                      "val": [max(h["val_acc"] for h in hist) for hist in rep.histories]}
    out["seconds_alpha"] = time.perf_counter() - start
    # best alpha chosen on validation accuracy, never on test
    best = max(CANDIDATE_ALPHAS, key=lambda a: np.mean(out[a]["val"]))
    out["best"] = best
    start = time.perf_counter()
    rep = run_seeds(g, sp, PLANTED_CFG.replace(alpha=best).variant("-time"), SEEDS)
    out["-time"] = {"test": rep.accuracy}
    out["seconds_time"] = time.perf_counter() - start
    return out


def test_criterion_6_planted_learning(planted_runs):
    r = planted_runs
    best = r["best"]
    full, bfs = r[best]["test"], r[1.0]["test"]
    t, p = paired_ttest(full, bfs)
    minutes = r["seconds_alpha"] / 60
    ok = np.mean(full) > np.mean(bfs) and p < 0.05 and minutes < 15
    report(6, ok, f"{r['n_events']} events, best alpha {best} (by val) mean acc "
                  f"{np.mean(full):.4f} vs alpha=1 {np.mean(bfs):.4f}, paired t={t:.2f} "
                  f"p={p:.4f} (< 0.05), {minutes:.1f} min (< 15); per-seed full "
                  f"{np.round(full, 4).tolist()} bfs {np.round(bfs, 4).tolist()}")


def test_criterion_7_time_ablation(planted_runs):
    r = planted_runs
    full, no_time = r[r["best"]]["test"], r["-time"]["test"]
    t, p = paired_ttest(full, no_time)
    ok = np.mean(no_time) < np.mean(full) and p < 0.05
    report(7, ok, f"-time mean acc {np.mean(no_time):.4f} vs full {np.mean(full):.4f}, "
                  f"paired t={t:.2f} p={p:.2e} (< 0.05)")


# --------------------------------------------------------------- criterion 8

def test_criterion_8_loss_sanity():
    data = gen_planted(PLANTED, seed=0)
    g = data.graph
    m = TBDFS(PLANTED_CFG, np.random.default_rng(0))
    for p in m.scorer.params().values():
        p.value = np.zeros_like(p.value)
    ids = np.arange(200)
    loss = float(batch_loss(g.src[ids], g.dst[ids], g.ts[ids], g, m, np.random.default_rng(0),
                            train=False).value) / len(ids)
    zero_err = abs(loss - 2 * math.log(2))

    toy = gen_planted(TOY, seed=0).graph
    sp = chronological_split(toy)
    init = TBDFS(TOY_CFG, _streams(TOY_CFG.seed)[0])
    tr = np.arange(sp.train.start, sp.train.stop)
    neg = sample_negatives(toy.src[tr], toy.dst[tr], toy, np.random.default_rng(0), True)
    epoch0 = float(batch_loss(toy.src[tr], toy.dst[tr], toy.ts[tr], toy, init, None, neg=neg,
                              train=False).value) / len(tr)
    res = train(toy, sp, TOY_CFG)
    final = res.history[-1]["train_loss"]
    drop = 1 - final / epoch0
    ok = zero_err < 1e-9 and len(res.history) == 30 and drop >= 0.5
    report(8, ok, f"zero scorer per-edge loss {loss:.12f} (|err| {zero_err:.1e} < 1e-9); "
                  f"{toy.n_events}-edge toy: epoch-0 loss {epoch0:.4f}, epoch-30 loss "
                  f"{final:.4f}, reduction {drop:.1%} (>= 50%)")


# --------------------------------------------------------------- criterion 9

@pytest.mark.slow
def test_criterion_9_wikipedia_direction():
    path = os.environ.get("TBDFS_WIKIPEDIA_CSV")
    if not path or not os.path.exists(path):
        pytest.skip("set TBDFS_WIKIPEDIA_CSV to the public Wikipedia edit CSV to run")
    schema = Schema("user_id", "item_id", "timestamp", bipartite=True, skip=("state_label",))
    g = load_csv(path, schema, d=172, max_events=50_000)
    sp = chronological_split(g)
    cfg = RunConfig(dim=172, heads=2, fanout=20, lr=1e-4, epochs=10, patience=3)
    val = {}
    for alpha in (0.0, 0.25, 0.5, 0.75):
        res = train(g, sp, cfg.replace(alpha=alpha))
        val[alpha] = res
    best = max(val, key=lambda a: val[a].checkpoint.meta["val_acc"])
    acc_best, _ = evaluate_model(val[best].checkpoint.model(), g, sp.test, 0, True)
    bfs = train(g, sp, cfg.replace(alpha=1.0))
    acc_bfs, _ = evaluate_model(bfs.checkpoint.model(), g, sp.test, 0, True)
    report(9, acc_best >= acc_bfs, f"alpha {best} acc {acc_best:.4f} vs alpha=1 {acc_bfs:.4f}")
