import numpy as np
import pytest

from tbdfs.graphstore import TemporalGraph


def random_graph(seed, n_nodes=None, n_events=None, d=0, int_times=True):
    """Small random temporal graph; integer timestamps make ties common."""
    rng = np.random.default_rng(seed)
    n = int(n_nodes or rng.integers(3, 31))
    m = int(n_events or rng.integers(1, 201))
    src = rng.integers(0, n, size=m)
    dst = rng.integers(0, n, size=m)
    ts = rng.integers(0, 60, size=m).astype(float) if int_times else rng.uniform(0, 60, size=m)
    ef = rng.normal(size=(m, d)) if d else None
    nf = rng.normal(size=(n, d)) if d else None
    return TemporalGraph(src, dst, ts, edge_feat=ef, node_feat=nf, n_nodes=n, d=d)


def toy_graph(d=4, seed=1):
    """The six-node graph used by the end-to-end gradient checks."""
    rng = np.random.default_rng(seed)
    src = [0, 1, 2, 3, 4, 0, 1, 2, 5, 3, 4, 5]
    dst = [1, 2, 3, 4, 5, 2, 3, 4, 0, 5, 0, 1]
    ts = np.arange(1, 13) * 1.0
    return TemporalGraph(src, dst, ts, edge_feat=rng.normal(size=(12, d)),
                         node_feat=rng.normal(size=(6, d)), d=d)


@pytest.fixture
def toy():
    return toy_graph()


@pytest.fixture(scope="session")
def small_planted():
    from tbdfs.planted import PlantedParams, gen_planted

    return gen_planted(PlantedParams(n_users=10, n_items=20, n_events=180, noise_edges=20,
                                     dim=8), seed=3)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
