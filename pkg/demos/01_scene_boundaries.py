"""Scene boundaries on a scripted stream.

Walks a three-scene synthetic stream frame by frame, prints the change score
for every frame and marks where a new partition opens.
"""
import numpy as np

from edgemem import SegmenterConfig, StreamSource
from edgemem.segmenter import (
    SegmenterState,
    extract_channels,
    flush,
    ingest_frame,
    scene_score,
)

scenes = [
    {"duration_s": 5, "base_color": [220, 40, 40], "noise_level": 0.01},
    {"duration_s": 5, "base_color": [40, 180, 60], "noise_level": 0.01},
    {"duration_s": 5, "base_color": [40, 60, 200], "noise_level": 0.01, "drift": 4.0},
]
source = StreamSource.synthetic(scenes, fps=1.0, width=32, height=32, seed=3)
config = SegmenterConfig(scene_threshold=0.05)

# the raw score first: hue, saturation, lightness and edge maps, compared pairwise
prev = None
for frame in source:
    maps = extract_channels(frame)
    if prev is not None:
        phi, feats = scene_score(maps, prev, config.weights)
        mark = "  <- boundary" if phi > config.scene_threshold else ""
        print(f"t={frame.timestamp:4.1f}  phi={phi:.4f}  hue={feats.hue_mean_diff:.4f}{mark}")
    prev = maps

# the same stream through the streaming segmenter
state = SegmenterState()
parts = []
for frame in source:
    done = ingest_frame(state, frame, config)
    if done is not None:
        parts.append(done)
parts.append(flush(state))
for p in parts:
    ids = [f.frame_id for f in p.frames]
    print(f"partition {p.partition_id}: frames {ids[0]}..{ids[-1]}  ({p.start:.0f}s to {p.end:.0f}s)")

# a long static scene is cut by the duration cap instead
long_source = StreamSource.synthetic([{"duration_s": 35, "base_color": [200, 200, 30]}], fps=1.0, width=8, height=8)
state = SegmenterState()
capped = SegmenterConfig(scene_threshold=0.05, max_partition_duration=10.0)
sizes = [len(p.frames) for p in (ingest_frame(state, f, capped) for f in long_source) if p is not None]
sizes.append(len(flush(state).frames))
print("forced partition sizes:", sizes, "total", int(np.sum(sizes)))
