import math

import numpy as np
import pytest

from edgemem import ClustererConfig
from edgemem.clusterer import cluster_partition, downscale, flatten

from . import oracles
from .conftest import BLUE, GREEN, RED, noisy, partition, restamp, solid


def test_downscale_matches_overlap_oracle(rng):
    for h, w, edge in [(8, 8, 4), (7, 5, 3), (4, 4, 8), (16, 9, 4)]:
        px = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
        assert np.allclose(downscale(px, edge).reshape(-1), oracles.flatten(px, edge), atol=1e-12)


def test_flatten_length_independent_of_frame_size():
    assert flatten(solid(RED, size=32), 8).shape == (8 * 8 * 3,)
    assert flatten(solid(RED, size=5), 8).shape == (8 * 8 * 3,)


def test_default_threshold_scales_with_vector_length():
    cfg = ClustererConfig(downscale_edge=16)
    assert cfg.effective_threshold == pytest.approx(0.08 * math.sqrt(16 * 16 * 3))


def test_identical_frames_single_cluster():
    frames = restamp([solid(GREEN)] * 12)
    (cl,) = cluster_partition(partition(frames), ClustererConfig(downscale_edge=4))
    assert cl.member_frame_ids == tuple(range(12))
    assert cl.index_frame_id == 0


def test_zero_threshold_singletons(rng):
    frames = restamp([noisy(RED, rng, sigma=20) for _ in range(6)])
    cls = cluster_partition(partition(frames), ClustererConfig(distance_threshold=0.0, downscale_edge=4))
    assert [c.member_frame_ids for c in cls] == [(i,) for i in range(6)]


def test_distinct_blobs_split(rng):
    colors = [RED, BLUE, RED, BLUE, GREEN, RED]
    frames = restamp([noisy(c, rng) for c in colors])
    cls = cluster_partition(partition(frames), ClustererConfig(downscale_edge=4), first_cluster_id=10)
    assert [c.cluster_id for c in cls] == [10, 11, 12]
    assert [c.member_frame_ids for c in cls] == [(0, 2, 5), (1, 3), (4,)]


def test_matches_replay_oracle(rng):
    for trial in range(10):
        n = int(rng.integers(1, 60))
        frames = restamp([noisy(tuple(int(v) for v in rng.integers(0, 256, 3)), rng, sigma=25) for _ in range(n)])
        cfg = ClustererConfig(downscale_edge=4, distance_threshold=float(rng.uniform(0.5, 4.0)),
                              centroid_mode="running_mean" if trial % 2 else "first_frame")
        cls = cluster_partition(partition(frames), cfg)
        vecs = [oracles.flatten(f.pixels, 4) for f in frames]
        members, reps = oracles.replay_clusters(vecs, cfg.distance_threshold, cfg.centroid_mode == "running_mean")
        assert [list(c.member_frame_ids) for c in cls] == members
        assert [c.index_frame_id for c in cls] == reps


def test_members_partition_the_partition(rng):
    frames = restamp([noisy((int(rng.integers(256)), 80, 80), rng, sigma=15) for _ in range(40)], start_id=100)
    cls = cluster_partition(partition(frames), ClustererConfig(downscale_edge=4, distance_threshold=1.0))
    ids = sorted(i for c in cls for i in c.member_frame_ids)
    assert ids == [f.frame_id for f in frames]
    for c in cls:
        assert c.index_frame_id in c.member_frame_ids
        assert c.centroid is not None


def test_open_partition_rejected():
    frames = restamp([solid(RED)])
    from edgemem import ScenePartition
    part = ScenePartition(0, tuple(frames), 0.0, 0.0, closed=False)
    with pytest.raises(ValueError, match="open"):
        cluster_partition(part, ClustererConfig())


def test_flatten_closed_forms():
    assert flatten(solid((255, 255, 255), size=6), 2).tolist() == [1.0] * 12
    assert not flatten(solid((0, 0, 0), size=6), 2).any()
    checker = np.zeros((2, 2, 3), np.uint8)
    checker[0, 0] = checker[1, 1] = 255
    assert downscale(checker, 1).reshape(-1).tolist() == [0.5] * 3


def test_black_white_alternation_two_interleaved_clusters():
    frames = restamp([solid((0, 0, 0) if i % 2 == 0 else (255, 255, 255)) for i in range(8)])
    cls = cluster_partition(partition(frames), ClustererConfig(distance_threshold=1.0, downscale_edge=2))
    assert [c.member_frame_ids for c in cls] == [(0, 2, 4, 6), (1, 3, 5, 7)]


def test_infinite_threshold_single_cluster(rng):
    frames = restamp([noisy(tuple(int(v) for v in rng.integers(0, 256, 3)), rng) for _ in range(15)])
    cls = cluster_partition(partition(frames), ClustererConfig(distance_threshold=float("inf"), downscale_edge=4))
    assert len(cls) == 1 and len(cls[0]) == 15


def test_three_blobs_below_quarter_threshold(rng):
    cfg = ClustererConfig(downscale_edge=4)
    # per-element noise of 1/255 gives distances near sqrt(48)/255, far below threshold / 4
    frames = restamp([noisy((RED, GREEN, BLUE)[int(rng.integers(3))], rng, sigma=1.0) for _ in range(30)])
    cls = cluster_partition(partition(frames), cfg)
    vecs = [oracles.flatten(f.pixels, 4) for f in frames]
    members, _ = oracles.replay_clusters(vecs, cfg.effective_threshold)
    assert len(cls) == 3
    assert [list(c.member_frame_ids) for c in cls] == members


def test_clustering_is_deterministic(rng):
    frames = restamp([noisy((int(rng.integers(256)), 50, 90), rng, sigma=30) for _ in range(40)])
    cfg = ClustererConfig(downscale_edge=4, distance_threshold=0.8)
    a = cluster_partition(partition(frames), cfg)
    b = cluster_partition(partition(frames), cfg)
    assert [c.metadata() for c in a] == [c.metadata() for c in b]
