import math

import numpy as np
import pytest
from scipy import stats

from tbdfs import diffcore as dc
from tbdfs.config import RunConfig
from tbdfs.errors import DataError, DivergenceError, SamplingError
from tbdfs.graphstore import TemporalGraph, chronological_split
from tbdfs.layers import FFN
from tbdfs.model import TBDFS
from tbdfs.trainer import (Adam, Checkpoint, batch_loss, contrastive_loss, link_score,
                           sample_negative, sample_negatives, train)

from conftest import random_graph, toy_graph


def bipartite_graph(n_users, n_items, n_events=30, seed=0, d=4):
    rng = np.random.default_rng(seed)
    src = rng.integers(0, n_users, n_events)
    dst = n_users + rng.integers(0, n_items, n_events)
    return TemporalGraph(src, dst, np.sort(rng.uniform(0, 100, n_events)),
                         edge_feat=rng.normal(size=(n_events, d)),
                         node_feat=rng.normal(size=(n_users + n_items, d)), d=d,
                         n_nodes=n_users + n_items,
                         dst_nodes=np.arange(n_users, n_users + n_items))


def zero_scorer(model):
    for p in model.scorer.params().values():
        p.value = np.zeros_like(p.value)


# ------------------------------------------------------- negative sampling

def test_single_alternative_destination():
    g = bipartite_graph(3, 2)
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert sample_negative((0, 3, 1.0), g, rng) == (0, 4, 1.0)


def test_negatives_exclude_positive():
    g = bipartite_graph(4, 6)
    rng = np.random.default_rng(1)
    dst = np.full(10_000, 6)
    neg = sample_negatives(np.zeros(10_000, int), dst, g, rng)
    assert not np.any(neg == 6)
    assert set(neg.tolist()) <= set(range(4, 10))
    g2 = random_graph(0, n_nodes=8)
    neg = sample_negatives(np.full(10_000, 2), np.full(10_000, 5), g2, rng, bipartite=False)
    assert not np.any((neg == 2) | (neg == 5))


def test_negatives_uniform_chi_square():
    g = bipartite_graph(2, 11)
    rng = np.random.default_rng(2)
    neg = sample_negatives(np.zeros(10_000, int), np.full(10_000, 2), g, rng)
    counts = np.bincount(neg - 2, minlength=11)
    assert counts[0] == 0
    _, p = stats.chisquare(counts[1:])
    assert p > 0.05


def test_two_node_graph_has_no_negative():
    g = TemporalGraph([0], [1], [1.0])
    with pytest.raises(SamplingError):
        sample_negatives([0], [1], g, np.random.default_rng(0), bipartite=False)
    with pytest.raises(SamplingError):
        sample_negatives([0], [1], g, np.random.default_rng(0), bipartite=True)


# -------------------------------------------------------------- link score

def test_zero_scorer_gives_half():
    m = TBDFS(RunConfig(dim=4), np.random.default_rng(0))
    zero_scorer(m)
    h = np.random.default_rng(1).normal(size=(7, 4))
    assert np.array_equal(link_score(h, h[::-1], m), np.full(7, 0.5))


def test_link_score_in_open_unit_interval():
    m = TBDFS(RunConfig(dim=4), np.random.default_rng(0))
    rng = np.random.default_rng(3)
    p = link_score(rng.normal(size=(1000, 4)), rng.normal(size=(1000, 4)), m)
    assert p.shape == (1000,)
    assert np.all((p > 0) & (p < 1))


def test_link_score_scalar_hand_computation():
    m = TBDFS(RunConfig(dim=2, dropout=0.0), np.random.default_rng(0))
    m.scorer = FFN("scorer", 1, 1, 1, 1, np.random.default_rng(0))
    s = m.scorer
    s.W1s.value, s.W1a.value, s.b1.value = np.array([[2.0]]), np.array([[-1.0]]), np.array([0.5])
    s.W2.value, s.b2.value = np.array([[1.5]]), np.array([-0.25])
    hi, hj = 0.75, 0.5
    z = 1.5 * max(2.0 * hi - 1.0 * hj + 0.5, 0.0) - 0.25
    assert link_score([hi], [hj], m)[0] == pytest.approx(1 / (1 + math.exp(-z)), abs=1e-15)
    z = 1.5 * max(2.0 * -1.0 - 1.0 * 1.0 + 0.5, 0.0) - 0.25
    assert link_score([-1.0], [1.0], m)[0] == pytest.approx(1 / (1 + math.exp(-z)), abs=1e-15)


def test_link_score_shape_mismatch():
    m = TBDFS(RunConfig(dim=4), np.random.default_rng(0))
    with pytest.raises(Exception):
        link_score(np.zeros((2, 4)), np.zeros((2, 3)), m)


# -------------------------------------------------------------------- loss

def test_zero_scorer_loss_is_two_ln_two_per_edge():
    g = toy_graph(d=4)
    m = TBDFS(RunConfig(dim=4, heads=2, fanout=3), np.random.default_rng(0))
    zero_scorer(m)
    src, dst, ts = g.src[4:10], g.dst[4:10], g.ts[4:10]
    loss = batch_loss(src, dst, ts, g, m, np.random.default_rng(0), train=False)
    assert abs(float(loss.value) / 6 - 2 * math.log(2)) < 1e-9


def test_loss_limits():
    big = np.array([800.0, 50.0])
    assert float(contrastive_loss(big, -big).value) < 1e-20
    assert float(contrastive_loss(-big, big).value) == pytest.approx(1700.0)
    assert np.isfinite(contrastive_loss(np.array([1e6]), np.array([-1e6])).value)


def test_single_edge_loss_matches_independent_expression():
    g = toy_graph(d=4)
    m = TBDFS(RunConfig(dim=4, heads=1, fanout=3, dropout=0.0), np.random.default_rng(4))
    src, dst, neg, t = np.array([3]), np.array([4]), np.array([1]), np.array([12.5])
    loss = float(batch_loss(src, dst, t, g, m, None, neg=neg, train=False).value)
    h = m.embed(g, np.array([3, 4, 1]), np.full(3, 12.5)).final.value
    P = {k: p.value for k, p in m.scorer.params().items()}

    def s(a, b):
        hid = np.maximum(a @ P["scorer.W1_self"] + b @ P["scorer.W1_agg"] + P["scorer.b1"], 0)
        return float((hid @ P["scorer.W2"] + P["scorer.b2"])[0])

    sp, sn = s(h[0], h[1]), s(h[0], h[2])
    want = -math.log(1 / (1 + math.exp(-sp))) - math.log(1 - 1 / (1 + math.exp(-sn)))
    assert loss == pytest.approx(want, rel=1e-12)


def test_empty_batch():
    g = toy_graph()
    m = TBDFS(RunConfig(dim=4), np.random.default_rng(0))
    with pytest.raises(DataError):
        batch_loss([], [], [], g, m, np.random.default_rng(0))


# --------------------------------------------------------------- optimiser

def test_adam_zero_lr_leaves_parameters():
    g = toy_graph()
    m = TBDFS(RunConfig(dim=4, fanout=3), np.random.default_rng(0))
    before = m.state()
    params = m.params()
    opt = Adam(params, lr=0.0)
    with dc.Tape():
        grads = dc.backward(batch_loss(g.src[:5], g.dst[:5], g.ts[:5], g, m,
                                       np.random.default_rng(0)), params)
    opt.step(grads)
    after = m.state()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_adam_first_step_is_signed_lr():
    p = dc.Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True, name="w")
    Adam({"w": p}, lr=0.1).step({"w": np.array([3.0, -0.2, 0.0])})
    np.testing.assert_allclose(p.value, [0.9, -1.9, 0.5], atol=1e-7)


# -------------------------------------------------------------- checkpoint

def test_checkpoint_round_trip(tmp_path):
    m = TBDFS(RunConfig(dim=4, heads=2, alpha=0.25), np.random.default_rng(7))
    ck = Checkpoint(m.config, m.state(), {"epoch": 3, "val_acc": 0.625})
    ck.save(tmp_path / "m.tbdf")
    back = Checkpoint.load(tmp_path / "m.tbdf")
    assert back.config == ck.config and back.meta == ck.meta
    assert set(back.params) == set(ck.params)
    for k in ck.params:
        assert back.params[k].tobytes() == ck.params[k].tobytes()
    raw = (tmp_path / "m.tbdf").read_bytes()
    assert raw[:4] == b"TBDF"


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x.tbdf").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(DataError):
        Checkpoint.load(tmp_path / "x.tbdf")


# ---------------------------------------------------------------- training

@pytest.fixture(scope="module")
def tiny():
    g = random_graph(11, n_nodes=10, n_events=80, d=4, int_times=False)
    return g, chronological_split(g)


def test_zero_epochs_returns_initialisation(tiny):
    g, sp = tiny
    cfg = RunConfig(dim=4, fanout=3, epochs=0, seed=5)
    res = train(g, sp, cfg)
    from tbdfs.trainer import _streams

    init = TBDFS(cfg, _streams(5)[0]).state()
    assert res.history == []
    assert all(np.array_equal(res.checkpoint.params[k], init[k]) for k in init)


def test_same_seed_bit_identical(tiny, tmp_path):
    g, sp = tiny
    cfg = RunConfig(dim=4, fanout=3, epochs=2, batch_size=16, lr=0.01, seed=2)
    a, b = train(g, sp, cfg), train(g, sp, cfg)
    a.checkpoint.save(tmp_path / "a.tbdf")
    b.checkpoint.save(tmp_path / "b.tbdf")
    assert (tmp_path / "a.tbdf").read_bytes() == (tmp_path / "b.tbdf").read_bytes()
    assert [h["train_loss"] for h in a.history] == [h["train_loss"] for h in b.history]


def test_corrupting_heldout_events_leaves_training_unchanged(tiny):
    g, sp = tiny
    held = np.arange(sp.val.start, g.n_events)
    ef = g.edge_feat.copy()
    ef[held] = np.random.default_rng(0).normal(size=(len(held), 4)) * 1e3
    g2 = g.replace(edge_feat=ef)
    cfg = RunConfig(dim=4, fanout=3, epochs=2, batch_size=16, lr=0.01, patience=5, seed=3)
    a, b = train(g, sp, cfg), train(g2, sp, cfg)
    assert [h["train_loss"] for h in a.history] == [h["train_loss"] for h in b.history]
    assert all(np.array_equal(a.final_params[k], b.final_params[k]) for k in a.final_params)


def test_training_log_lines(tiny, tmp_path):
    import json

    g, sp = tiny
    train(g, sp, RunConfig(dim=4, fanout=3, epochs=2, seed=1), log_path=tmp_path / "log.jsonl")
    lines = [json.loads(x) for x in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in lines] == [1, 2]
    assert set(lines[0]) == {"epoch", "train_loss", "val_acc", "val_f1", "seconds"}


def test_early_stopping_respects_patience(tiny):
    g, sp = tiny
    res = train(g, sp, RunConfig(dim=4, fanout=3, epochs=30, patience=1, lr=0.0, seed=0))
    # lr=0 never improves on the first epoch's val accuracy
    assert len(res.history) == 2
    assert res.checkpoint.meta["epoch"] == 1


def test_nan_guard(tiny):
    g, sp = tiny
    bad = g.replace(node_feat=np.full_like(g.node_feat, np.nan))
    with pytest.raises(DivergenceError):
        train(bad, sp, RunConfig(dim=4, fanout=3, epochs=1))
