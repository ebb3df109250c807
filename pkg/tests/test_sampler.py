from collections import Counter

import numpy as np
import pytest

from tbdfs.errors import ConfigError, GuardExceeded
from tbdfs.graphstore import TemporalGraph
from tbdfs.sampler import (brute_force_paths, collect_paths, expand, expand_batch, path_events,
                           path_slots, slots_to_paths)

from conftest import random_graph
from oracles import enumerate_paths, enumerate_paths_multiset


def chain():
    # a=0, b=1, c=2: a-b at 3, b-c at 1
    return TemporalGraph([0, 1], [1, 2], [3.0, 1.0])


def test_chain_hand_trace():
    tree = expand(chain(), 0, 5.0, L=2, k=5)
    assert [(e.node, e.ts) for e in tree.layers[0]] == [(1, 3.0)]
    assert [(e.node, e.ts) for e in tree.layers[1]] == [(2, 1.0)]
    paths = collect_paths(tree)
    assert len(paths) == 1
    assert paths[0].nodes == (0, 1, 2) and paths[0].times == (3.0, 1.0)


def test_expand_before_all_edges_is_empty():
    tree = expand(chain(), 0, 0.5, L=2)
    assert len(tree) == 0
    assert collect_paths(tree) == []


def test_star_keeps_short_paths():
    g = TemporalGraph([0, 0], [1, 2], [1.0, 2.0])
    paths = collect_paths(expand(g, 0, 5.0, L=2))
    assert sorted(p.key for p in paths) == [((0, 5.0), (1, 1.0)), ((0, 5.0), (2, 2.0))]


def test_triangle_hand_enumeration():
    # a-b at 1, b-c at 2, a-c at 3; query the latest vertex c after all events
    g = TemporalGraph([0, 1, 0], [1, 2, 2], [1.0, 2.0, 3.0])
    paths = brute_force_paths(g, 2, 4.0, 2)
    keys = sorted(p.key for p in paths)
    assert keys == [((2, 4.0), (0, 3.0), (1, 1.0)), ((2, 4.0), (1, 2.0), (0, 1.0))]


def test_brute_force_empty_graph():
    assert brute_force_paths(TemporalGraph.empty(), 0, 1.0, 2) == set()


def test_guard():
    g = TemporalGraph(np.zeros(30, int), np.ones(30, int), np.arange(30.0))
    with pytest.raises(GuardExceeded, match="guard"):
        brute_force_paths(g, 0, 100.0, 3, guard=1000)


def test_bad_depth_or_fanout():
    with pytest.raises(ConfigError):
        expand(chain(), 0, 5.0, L=0)
    with pytest.raises(ConfigError):
        expand(chain(), 0, 5.0, L=1, k=0)


@pytest.mark.parametrize("seed", range(20))
def test_layer_two_matches_nested_scan(seed):
    g = random_graph(seed, n_nodes=20)
    t = float(np.max(g.ts)) + 1
    tree = expand(g, 0, t, L=2, k=None)
    want = Counter()
    for j, tj, _ in g.adjacency(0):
        if tj < t:
            for j2, t2, _ in g.adjacency(j):
                if t2 < tj:
                    want[(j2, t2)] += 1
    assert Counter((e.node, e.ts) for e in tree.layers[1]) == want


@pytest.mark.parametrize("seed", range(50))
@pytest.mark.parametrize("L", [1, 2, 3])
def test_collect_paths_equals_oracles(seed, L):
    g = random_graph(seed, n_events=150)
    i = seed % g.n_nodes
    t = float(np.quantile(g.ts, 0.8))
    paths = collect_paths(expand(g, i, t, L, k=None))
    got = {p.key for p in paths}
    assert got == {p.key for p in brute_force_paths(g, i, t, L)}
    assert got == enumerate_paths(g, i, t, L)
    assert Counter(p.key for p in paths) == enumerate_paths_multiset(g, i, t, L)


@pytest.mark.parametrize("seed", range(50))
def test_receptive_field_equality(seed):
    g = random_graph(seed)
    i = (3 * seed) % g.n_nodes
    t = float(np.quantile(g.ts, 0.7))
    for k in (None, 2):
        tree = expand(g, i, t, 2, k=k)
        assert path_events(collect_paths(tree)) == tree.events()


@pytest.mark.parametrize("seed", range(10))
def test_paths_strictly_decrease(seed):
    g = random_graph(seed)
    for p in collect_paths(expand(g, seed % g.n_nodes, 45.0, 3, k=3)):
        times = (p.target_time,) + p.times
        assert all(a > b for a, b in zip(times, times[1:]))
        assert 1 <= p.length <= 3
        for r, e in enumerate(p.event_ids):
            assert {p.nodes[r], p.nodes[r + 1]} == {int(g.src[e]), int(g.dst[e])}
            assert g.ts[e] == p.times[r]


def test_path_count_bounded_and_deterministic():
    g = random_graph(11)
    a = collect_paths(expand(g, 1, 50.0, 2, k=3))
    b = collect_paths(expand(g, 1, 50.0, 2, k=3))
    assert len(a) <= 9
    assert a == b


def test_max_paths_subsample():
    g = random_graph(12, n_events=200)
    tree = expand(g, 0, 60.0, 2, k=None)
    full = collect_paths(tree)
    sub = collect_paths(tree, max_paths=3, rng=np.random.default_rng(0))
    assert len(sub) == min(3, len(full))
    assert set(sub) <= set(full)


@pytest.mark.parametrize("seed", range(15))
def test_batch_slots_match_ragged_paths(seed):
    g = random_graph(seed)
    rng = np.random.default_rng(seed)
    roots = rng.integers(0, g.n_nodes, 6)
    times = rng.uniform(0, 70, 6)
    bt = expand_batch(g, roots, times, 2, 3)
    per_root = slots_to_paths(path_slots(bt), roots)
    for r in range(6):
        ragged = collect_paths(expand(g, int(roots[r]), float(times[r]), 2, k=3))
        assert sorted(p.key for p in per_root[r]) == sorted(p.key for p in ragged)
