import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgemem import EmbeddingVector, MemoryStore, RetrievalConfig
from edgemem.config import validate_config
from edgemem.embedding import MockEmbedder
from edgemem.retrieval import (
    EmptyMemoryError,
    QueryDistribution,
    adaptive_counts,
    draw_cluster_frames,
    min_draws,
    retrieve,
    retrieve_adaptive,
    retrieve_fixed,
    retrieve_topk,
    sample_counts,
    softmax_distribution,
)
from edgemem.types import Cluster, IndexedFrame

from . import oracles
from .conftest import BLUE, GREEN, RED, build_memory, noisy, solid

scores_st = st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=40)


@settings(max_examples=200, deadline=None)
@given(scores_st, st.floats(0.01, 10))
def test_softmax_matches_oracle(scores, tau):
    dist = softmax_distribution(list(enumerate(scores)), tau)
    ref = oracles.softmax(scores, tau)
    assert np.allclose(dist.probabilities, ref, atol=1e-12, rtol=0)
    assert math.fsum(dist.probabilities) == pytest.approx(1.0, abs=1e-12)


def test_softmax_extreme_scores_stay_positive():
    dist = softmax_distribution([(0, 1.0), (1, -1.0)], 1e-4)
    assert dist.probabilities[1] > 0
    assert dist.probabilities[0] == pytest.approx(1.0)


def test_low_temperature_sharpens():
    s = [(0, 0.3), (1, 0.2), (2, 0.1)]
    maxes = [softmax_distribution(s, t).max_probability for t in (10, 1, 0.1, 0.01)]
    assert maxes == sorted(maxes)
    assert softmax_distribution(s, 1e6).probabilities == pytest.approx([1 / 3] * 3, abs=1e-6)


def test_softmax_rejects_bad_input():
    with pytest.raises(ValueError):
        softmax_distribution([], 1.0)
    with pytest.raises(ValueError):
        softmax_distribution([(0, 1.0)], 0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 1), min_size=1, max_size=20), st.integers(1, 200), st.integers(0, 2**32))
def test_sample_counts_sum_and_support(weights, n, seed):
    p = np.array(weights) / sum(weights)
    dist = QueryDistribution.from_probabilities(p, [10 + i for i in range(len(p))])
    counts = sample_counts(dist, n, seed)
    assert sum(counts.values()) == n
    assert set(counts) <= set(dist.index_ids)
    assert counts == sample_counts(dist, n, seed)


def test_min_draws_values():
    d = QueryDistribution.from_probabilities([0.9, 0.1])
    assert min_draws(d, 0.9, 1.0) == 1
    d = QueryDistribution.from_probabilities([0.1] * 10)
    # 0.9 / 0.1 is 9.000000000000002 in binary; the bound is still 9
    assert min_draws(d, 0.9, 1.0) == 9
    assert min_draws(QueryDistribution.from_probabilities([0.25] * 4), 0.9, 1.0) == 4


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.001, 1), min_size=1, max_size=30), st.floats(0.05, 1.0),
       st.integers(1, 64), st.integers(0, 2**32))
def test_adaptive_stopping_rule(weights, theta, n_max, seed):
    p = np.array(weights) / sum(weights)
    dist = QueryDistribution.from_probabilities(p)
    counts, draws, n_min = adaptive_counts(dist, theta, 1.0, n_max, seed)
    assert sum(counts.values()) == draws
    assert 1 <= draws <= n_max
    mass = math.fsum(p[i] for i in counts)
    if draws < n_max:
        assert draws >= n_min - 1e-9 and mass >= theta - 1e-9


def test_adaptive_prefix_replay():
    """Replay the same random stream by hand and check the exact stop point."""
    p = np.array([0.5, 0.3, 0.1, 0.05, 0.05])
    dist = QueryDistribution.from_probabilities(p)
    for seed in range(50):
        _, draws, n_min = adaptive_counts(dist, 0.9, 1.0, 32, seed)
        u = np.random.default_rng(seed).random(32)
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        seen, mass, stop = set(), 0.0, 32
        for t, x in enumerate(u, start=1):
            k = min(int(np.searchsorted(cdf, x, side="right")), 4)
            if k not in seen:
                seen.add(k)
                mass += p[k]
            if t >= n_min and mass >= 0.9 - 1e-9:
                stop = t
                break
        assert draws == stop


def _store(rng):
    # 3 red clusters of 4 frames, 2 green of 3, 1 blue of 5
    groups = [[noisy(RED, rng, 10) for _ in range(4)] for _ in range(3)]
    groups += [[noisy(GREEN, rng, 10) for _ in range(3)] for _ in range(2)]
    groups += [[noisy(BLUE, rng, 10) for _ in range(5)]]
    return build_memory(groups)


def test_draw_cluster_frames_caps_and_orders(rng):
    snap = _store(rng).open_snapshot()
    frames = draw_cluster_frames({0: 10, 5: 2}, snap, 3)
    assert len(frames) == 4 + 2
    assert list(frames) == sorted(frames)
    assert set(frames[:4]) == {0, 1, 2, 3}
    assert set(frames[4:]) <= set(range(18, 23))


def test_retrieve_strategies(rng):
    store = _store(rng)
    snap = store.open_snapshot()
    q = MockEmbedder(256).embed_text("red")
    cfg = RetrievalConfig(seed=4, n_fixed=8)
    fixed = retrieve_fixed(q, snap, cfg)
    assert fixed.n_draws == 8 and sum(fixed.counts.values()) == 8
    akr = retrieve_adaptive(q, snap, cfg)
    assert akr.n_min is not None and akr.n_draws <= cfg.n_max
    assert akr.cumulative_probability >= cfg.theta - 1e-9 or akr.n_draws == cfg.n_max
    top = retrieve_topk(q, snap, 3)
    assert set(top.selected_index_ids) == {0, 1, 2}
    assert len(top.keyframe_ids) == 3
    for res in (fixed, akr, top):
        assert len(set(res.keyframe_ids)) == len(res.keyframe_ids)
        ts = [snap.frame_timestamps()[f] for f in res.keyframe_ids]
        assert ts == sorted(ts)


def test_retrieve_is_reproducible(rng):
    snap = _store(rng).open_snapshot()
    q = MockEmbedder(256).embed_text("green")
    for strategy in ("akr", "fixed", "topk"):
        cfg = RetrievalConfig(strategy=strategy, seed=11, temperature=0.1)
        assert retrieve(q, snap, cfg) == retrieve(q, snap, cfg)


def test_topk_ties_break_to_lower_id(rng):
    vec = [noisy(RED, rng, 0)] * 3
    store = build_memory([[vec[0]], [vec[1]], [vec[2]]])
    res = retrieve_topk(MockEmbedder(256).embed_text("red"), store.open_snapshot(), 2)
    assert res.selected_index_ids == (0, 1)


def test_empty_memory_raises():
    q = MockEmbedder(256).embed_text("red")
    with pytest.raises(EmptyMemoryError, match="memory empty"):
        retrieve(q, MemoryStore(None, 256).open_snapshot(), RetrievalConfig())


def test_time_range_restricts_plan(rng):
    snap = _store(rng).open_snapshot()
    q = MockEmbedder(256).embed_text("red")
    res = retrieve(q, snap, RetrievalConfig(seed=1), time_range=(12.0, 100.0))
    assert set(res.plan_distribution) == {3, 4, 5}


def _vector_snapshot(vectors, sizes=None):
    """One cluster per vector; cluster i holds ``sizes[i]`` frames."""
    sizes = sizes or [1] * len(vectors)
    store = MemoryStore(None, len(vectors[0]))
    fid = 0
    items = []
    for i, (v, n) in enumerate(zip(vectors, sizes)):
        ids = tuple(range(fid, fid + n))
        cl = Cluster(i, 0, ids, tuple(float(f) for f in ids), index_frame_id=fid)
        frames = [solid(RED, size=1, frame_id=f, timestamp=float(f)) for f in ids]
        items.append((IndexedFrame(i, fid, i, "", EmbeddingVector.normalized(v), float(fid)), cl, frames))
        fid += n
    store.insert_many(items)
    return store.open_snapshot()


def test_softmax_closed_forms():
    d = softmax_distribution([(i, 0.3) for i in range(7)], 0.5)
    assert np.allclose(d.probabilities, 1 / 7, atol=1e-15)
    d = softmax_distribution([(0, 1.0), (1, 0.0)], 1.0)
    assert d.probabilities == pytest.approx([0.7310585786, 0.2689414214], abs=1e-9)


def test_softmax_shift_invariance(rng):
    s = rng.uniform(-1, 1, 20)
    a = softmax_distribution(list(enumerate(s)), 0.3).probabilities
    b = softmax_distribution(list(enumerate(s + 0.7)), 0.3).probabilities
    assert np.allclose(a, b, atol=1e-12)


def test_low_temperature_concentrates_on_argmax(rng):
    s = rng.uniform(-1, 1, 50)
    top = int(np.argmax(s))
    sharp = softmax_distribution(list(enumerate(s)), 0.1).probabilities
    flat = softmax_distribution(list(enumerate(s)), 1.0).probabilities
    assert sharp[top] > flat[top]
    assert int(np.argmax(sharp)) == top


def test_single_entry_takes_every_draw():
    d = QueryDistribution.from_probabilities([1.0], [42])
    assert sample_counts(d, 7, 0) == {42: 7}


def test_sample_counts_within_five_sigma():
    p = np.array([0.5, 0.3, 0.15, 0.05])
    n = 100_000
    got = sample_counts(QueryDistribution.from_probabilities(p), n, 2024)
    for i, pi in enumerate(p):
        assert abs(got.get(i, 0) - n * pi) <= 5 * math.sqrt(n * pi * (1 - pi))


def test_cluster_draw_capped_at_size():
    snap = _vector_snapshot([np.ones(4)], sizes=[2])
    assert draw_cluster_frames({0: 3}, snap, 0) == (0, 1)


def test_intra_cluster_draws_are_uniform():
    snap = _vector_snapshot([np.ones(4)], sizes=[100])
    reps = 10_000
    hits = np.zeros(100)
    ss = np.random.SeedSequence(99)
    for child in ss.spawn(reps):
        frames = draw_cluster_frames({0: 5}, snap, child)
        assert len(set(frames)) == 5
        hits[list(frames)] += 1
    sd = math.sqrt(reps * 0.05 * 0.95)
    assert np.all(np.abs(hits - reps * 0.05) <= 5 * sd)


def test_single_cluster_memory_any_budget():
    snap = _vector_snapshot([np.ones(4)], sizes=[6])
    q = EmbeddingVector.normalized(np.ones(4))
    for n in (1, 3, 6, 32):
        res = retrieve_fixed(q, snap, RetrievalConfig(n_fixed=n, seed=n))
        assert res.counts == {0: n}
        assert len(res.keyframe_ids) == min(n, 6)


def test_very_low_temperature_matches_top1(rng):
    vecs = [rng.normal(size=16) for _ in range(12)]
    snap = _vector_snapshot(vecs)
    q = EmbeddingVector.normalized(rng.normal(size=16))
    top = retrieve_topk(q, snap, 1)
    res = retrieve_fixed(q, snap, RetrievalConfig(temperature=0.01, n_fixed=8, seed=0))
    (only,) = top.selected_index_ids
    assert res.plan_distribution[only] > 0.5
    assert res.counts.get(only, 0) >= 6


def test_red_query_three_cluster_memory(rng):
    groups = [[noisy(c, rng, 2.55) for _ in range(5)] for c in (RED, GREEN, BLUE)]
    snap = build_memory(groups).open_snapshot()
    q = MockEmbedder(256).embed_text("red")
    res = retrieve_fixed(q, snap, RetrievalConfig(temperature=0.05, n_fixed=16, seed=8))
    assert res.counts.get(0, 0) / 16 >= 0.95


def test_peaked_distribution_stop_rule():
    d = QueryDistribution.from_probabilities([0.9, 0.05, 0.05])
    assert min_draws(d, 0.9, 1.0) == 1
    first_hits = 0
    for seed in range(200):
        ss = np.random.SeedSequence(seed)
        counts, draws, _ = adaptive_counts(d, 0.9, 1.0, 32, ss)
        first = int(np.searchsorted(np.cumsum(d.probabilities), np.random.default_rng(ss).random(), "right"))
        if first == 0:
            first_hits += 1
            assert (counts, draws) == ({0: 1}, 1)
        else:
            assert draws > 1 and 0 in counts
    assert 150 < first_hits < 200


def test_beta_two_is_unsatisfiable_and_warns():
    d = QueryDistribution.from_probabilities([0.3, 0.3, 0.2, 0.2])
    assert min_draws(d, 0.9, 2.0) == 6
    for seed in range(20):
        _, draws, _ = adaptive_counts(d, 0.9, 2.0, 20, seed)
        assert draws == 20
    with pytest.warns(UserWarning, match="beta"):
        validate_config({"retrieval": {"beta": 2.0}})


def test_topk_edge_cases_and_sort_oracle(rng):
    vecs = [rng.normal(size=8) for _ in range(50)]
    snap = _vector_snapshot(vecs)
    q = EmbeddingVector.normalized(rng.normal(size=8))
    expected = sorted(range(50), key=lambda i: (-oracles.dot(q.values, snap.records[i].embedding.values), i))
    assert retrieve_topk(q, snap, 1).selected_index_ids == (expected[0],)
    assert set(retrieve_topk(q, snap, 10).selected_index_ids) == set(expected[:10])
    assert set(retrieve_topk(q, snap, 50).selected_index_ids) == set(range(50))
