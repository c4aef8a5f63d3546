import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evoformer.graph import DynamicGraph, SnapshotGraph
from evoformer.walks import (
    DeadEndError,
    WalkConfig,
    expected_corpus_size,
    exposure_index,
    generate_corpus,
    high_degree_exposure_index,
    load_corpus,
    next_node_distribution,
    save_corpus,
    walk_from,
    walk_rng,
)
from oracles import node2vec_law, random_adjacency


def dyn(n, *edge_sets):
    return DynamicGraph(tuple(SnapshotGraph.from_edges(n, es) for es in edge_sets), n, "1")


def random_dynamic(seed, n=15, T=3, prob=0.2):
    rng = np.random.default_rng(seed)
    snaps = []
    for _ in range(T):
        A = random_adjacency(rng, n, prob)
        snaps.append(np.argwhere(np.triu(A)))
    return dyn(n, *snaps)


# ---------------------------------------------------------------------------
# transition law


def test_first_step_uniform():
    g = SnapshotGraph.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    nbrs, probs = next_node_distribution(g, None, 0, 0.3, 7.0)
    assert nbrs.tolist() == [1, 2, 3]
    assert np.allclose(probs, 1 / 3)


def test_path_example():
    g = SnapshotGraph.from_edges(3, [(0, 1), (1, 2)])
    nbrs, probs = next_node_distribution(g, 0, 1, p=0.5, q=2)
    assert dict(zip(nbrs.tolist(), probs)) == pytest.approx({0: 0.8, 2: 0.2})


def test_triangle_example():
    g = SnapshotGraph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    nbrs, probs = next_node_distribution(g, 0, 1, p=4, q=9)
    assert dict(zip(nbrs.tolist(), probs)) == pytest.approx({0: 0.2, 2: 0.8})


def test_dead_end_signal():
    g = SnapshotGraph.from_edges(3, [(0, 1)])
    with pytest.raises(DeadEndError):
        next_node_distribution(g, None, 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(0.1, 10))
def test_law_matches_oracle(seed, p, q):
    rng = np.random.default_rng(seed)
    A = random_adjacency(rng, 12, 0.35)
    g = SnapshotGraph.from_edges(12, np.argwhere(np.triu(A)))
    adj = {v: set(g.neighbors(v).tolist()) for v in range(12)}
    for cur in range(12):
        for prev in adj[cur]:
            nbrs, probs = next_node_distribution(g, prev, cur, p, q)
            law = node2vec_law(adj, prev, cur, p, q)
            assert np.isclose(probs.sum(), 1.0)
            assert dict(zip(nbrs.tolist(), probs)) == pytest.approx(law, rel=1e-12)


# ---------------------------------------------------------------------------
# corpus


def test_single_edge_alternates():
    corpus = generate_corpus(dyn(2, [(0, 1)]), WalkConfig(W=2, L=4))
    assert len(corpus) == 4
    rows = {tuple(r) for r in corpus.nodes.tolist()}
    assert rows == {(0, 1, 0, 1), (1, 0, 1, 0)}


def test_isolated_node_contributes_nothing():
    corpus = generate_corpus(dyn(3, [(0, 1)]), WalkConfig(W=3, L=3))
    assert 2 not in corpus.nodes[:, 0]
    assert len(corpus) == 6


def test_empty_snapshot_contributes_nothing():
    g = dyn(3, [(0, 1)], [], [(1, 2)])
    corpus = generate_corpus(g, WalkConfig(W=1, L=3))
    assert corpus.t.tolist() == [1, 1, 3, 3]


def test_dead_end_pads_by_repeat():
    # a node whose neighbour list is empty mid-walk can only arise with a crafted CSR
    g = SnapshotGraph(3, np.array([0, 1, 1, 1]), np.array([1]))
    walk = walk_from(g, 0, 5, 1.0, 1.0, walk_rng(0, 1, 0, 1))
    assert walk.tolist() == [0, 1, 1, 1, 1]


def test_config_validation():
    for bad in [dict(W=0), dict(L=1), dict(p=0), dict(q=-1)]:
        with pytest.raises(ValueError):
            WalkConfig(**bad)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(2, 9), st.sampled_from([0.5, 1.0, 2.0]))
def test_corpus_shape_and_edges(seed, W, L, q):
    g = random_dynamic(seed)
    corpus = generate_corpus(g, WalkConfig(W=W, L=L, q=q, seed=seed))
    assert len(corpus) == expected_corpus_size(g, W)
    assert corpus.nodes.shape == (len(corpus), L)
    for rec in corpus:
        snap = g.snapshots[rec.t - 1]
        assert snap.degrees[rec.nodes[0]] > 0
        for a, b in zip(rec.nodes[:-1], rec.nodes[1:]):
            assert snap.has_edge(int(a), int(b))
    # records come in (t, start, m) order
    keys = list(zip(corpus.t.tolist(), corpus.nodes[:, 0].tolist(), corpus.m.tolist()))
    assert keys == sorted(keys)


def test_deterministic_across_workers():
    g = random_dynamic(5, n=30, T=4)
    cfg = WalkConfig(W=2, L=10, p=0.5, q=2.0, seed=11)
    one = generate_corpus(g, cfg, workers=1)
    two = generate_corpus(g, cfg, workers=2)
    assert one == two
    assert one.dumps() == two.dumps()
    other_seed = generate_corpus(g, WalkConfig(W=2, L=10, p=0.5, q=2.0, seed=12))
    assert other_seed != one


@pytest.mark.parametrize("name", ["walks.txt", "walks.txt.gz"])
def test_save_load_roundtrip(tmp_path, name):
    g = random_dynamic(1)
    corpus = generate_corpus(g, WalkConfig(W=2, L=6, seed=3))
    path = tmp_path / name
    save_corpus(corpus, path, {"config_hash": "abc", "seed": 3})
    back = load_corpus(path)
    assert back == corpus
    assert back.cfg == corpus.cfg
    # gzip output carries no timestamp, so saving twice is byte-identical
    first = path.read_bytes()
    save_corpus(corpus, path, {"config_hash": "abc", "seed": 3})
    assert path.read_bytes() == first


# ---------------------------------------------------------------------------
# exposure


def test_exposure_arithmetic():
    assert exposure_index(0.1249, 0.3466) == pytest.approx(2.775, abs=1e-3)
    with pytest.raises(ValueError):
        exposure_index(0.0, 0.5)


def test_star_exposure_exact():
    n_leaves = 10
    g = dyn(n_leaves + 1, [(0, i) for i in range(1, n_leaves + 1)])
    corpus = generate_corpus(g, WalkConfig(W=1, L=2))
    # forced walks: every leaf walk is (leaf, hub); the hub walk ends on one leaf
    visits_hub = n_leaves + 1
    total = 2 * (n_leaves + 1)
    rep = high_degree_exposure_index(corpus, g, degree_quantile=0.05)
    assert rep.num_high == 1
    assert rep.node_share == pytest.approx(1 / (n_leaves + 1))
    assert rep.visit_share == pytest.approx(visits_hub / total)
    assert rep.hei == pytest.approx((visits_hub / total) * (n_leaves + 1))


def test_regular_graph_exposure_is_one():
    n = 40
    ring = [(i, (i + 1) % n) for i in range(n)] + [(i, (i + 2) % n) for i in range(n)]
    g = dyn(n, ring)
    corpus = generate_corpus(g, WalkConfig(W=5, L=20, seed=2))
    rep = high_degree_exposure_index(corpus, g, 0.1)
    # every degree ties, so all nodes are "high"
    assert rep.num_high == n
    assert rep.hei == pytest.approx(1.0)


def test_exposure_errors():
    g = dyn(2, [(0, 1)])
    corpus = generate_corpus(g, WalkConfig(W=1, L=2))
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            high_degree_exposure_index(corpus, g, bad)
    empty = corpus.__class__(np.zeros(0), np.zeros(0), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        high_degree_exposure_index(empty, g, 0.5)
