"""Inside one partition: group near-duplicate frames, keep one per group.

Frames alternate between two camera framings of the same scene, plus a brief
flash. The clusterer keeps three index frames out of thirty.
"""
import numpy as np

from edgemem import ClustererConfig, Frame, ScenePartition
from edgemem.clusterer import cluster_partition

rng = np.random.default_rng(0)
wide = np.full((16, 16, 3), (90, 140, 200), np.uint8)
close = wide.copy()
close[4:12, 4:12] = (230, 200, 60)
flash = np.full((16, 16, 3), 250, np.uint8)

frames = []
for i in range(30):
    base = flash if i == 17 else (close if (i // 5) % 2 else wide)
    noisy = np.clip(base + rng.normal(0, 2, base.shape), 0, 255).astype(np.uint8)
    frames.append(Frame(i, float(i), noisy))

part = ScenePartition(0, tuple(frames), 0.0, 29.0)
cfg = ClustererConfig(downscale_edge=8)
print(f"distance threshold on {cfg.vector_length}-long vectors: {cfg.effective_threshold:.3f}")
for cl in cluster_partition(part, cfg):
    members = list(cl.member_frame_ids)
    print(f"cluster {cl.cluster_id}: {len(cl)} frames, index frame {cl.index_frame_id}, members {members}")

# running-mean centroids against first-frame centroids on a slow drift
drift = [Frame(i, float(i), np.full((8, 8, 3), 100 + 3 * i, np.uint8)) for i in range(20)]
part = ScenePartition(1, tuple(drift), 0.0, 19.0)
for mode in ("running_mean", "first_frame"):
    cls = cluster_partition(part, ClustererConfig(downscale_edge=4, distance_threshold=0.5, centroid_mode=mode))
    print(mode, [len(c) for c in cls])
