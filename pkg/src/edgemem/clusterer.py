"""Incremental clustering of frames inside one scene partition."""
from __future__ import annotations

from functools import lru_cache
from typing import List

import numpy as np

from .config import ClustererConfig
from .types import Cluster, Frame, ScenePartition

TIE_TOLERANCE = 1e-9


@lru_cache(maxsize=64)
def _area_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) matrix whose rows average the source cells overlapping each target cell."""
    w = np.zeros((dst, src))
    scale = src / dst
    for i in range(dst):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(np.floor(lo)), min(int(np.ceil(hi)), src)):
            w[i, j] = min(hi, j + 1) - max(lo, j)
    w /= w.sum(axis=1, keepdims=True)
    w.flags.writeable = False
    return w


def downscale(pixels: np.ndarray, edge: int) -> np.ndarray:
    """Area-average resize to ``edge x edge``; returns floats in [0, 1]."""
    h, w = pixels.shape[:2]
    img = pixels.astype(np.float64) / 255.0
    rows = _area_weights(h, edge)
    cols = _area_weights(w, edge)
    out = np.tensordot(rows, img, axes=(1, 0))  # (edge, w, 3)
    out = np.tensordot(cols, out, axes=(1, 1))  # (edge_w, edge_h, 3)
    return out.transpose(1, 0, 2)


def flatten(frame: Frame, downscale_edge: int) -> np.ndarray:
    return downscale(frame.pixels, downscale_edge).reshape(-1)


def _first_min(d: np.ndarray) -> int:
    """Index of the first entry within TIE_TOLERANCE of the minimum.

    Distances that are equal in exact arithmetic can differ in the last bit
    depending on summation order, so near-ties resolve to the earliest entry.
    """
    return int(np.flatnonzero(d <= d.min() + TIE_TOLERANCE)[0])


def cluster_partition(
    partition: ScenePartition, config: ClustererConfig, first_cluster_id: int = 0
) -> List[Cluster]:
    """Cluster a closed partition, returning finalized clusters in creation order.

    Each frame joins the nearest existing centroid when that L2 distance is
    within the threshold (near-ties go to the lower cluster id); otherwise it seeds
    a new cluster. Cluster ids are ``first_cluster_id, first_cluster_id + 1, ...``.
    """
    if not partition.closed:
        raise ValueError(f"partition {partition.partition_id} is still open")
    if not partition.frames:
        raise ValueError(f"partition {partition.partition_id} is empty")

    threshold = config.effective_threshold
    running = config.centroid_mode == "running_mean"
    vectors = np.stack([flatten(f, config.downscale_edge) for f in partition.frames])

    sums: List[np.ndarray] = []
    centroids: List[np.ndarray] = []
    members: List[List[int]] = []
    for pos, vec in enumerate(vectors):
        if centroids:
            dists = np.linalg.norm(np.stack(centroids) - vec, axis=1)
            best = _first_min(dists)
            if dists[best] <= threshold:
                members[best].append(pos)
                if running:
                    sums[best] = sums[best] + vec
                    centroids[best] = sums[best] / len(members[best])
                continue
        sums.append(vec.copy())
        centroids.append(vec.copy())
        members.append([pos])

    clusters = []
    for k, (centroid, mem) in enumerate(zip(centroids, members)):
        d = np.linalg.norm(vectors[mem] - centroid, axis=1)
        rep = mem[_first_min(d)]
        frames = [partition.frames[i] for i in mem]
        clusters.append(Cluster(
            cluster_id=first_cluster_id + k,
            partition_id=partition.partition_id,
            member_frame_ids=tuple(f.frame_id for f in frames),
            member_timestamps=tuple(f.timestamp for f in frames),
            centroid=centroid,
            index_frame_id=partition.frames[rep].frame_id,
        ))
    return clusters
