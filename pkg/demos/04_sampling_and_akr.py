"""Top-K against sampling, and when adaptive retrieval stops.

The camera visits a red room twice, so six clusters score almost the same.
Top-K always returns the same frames. Sampling spreads its draws over every
cluster the plan favours and changes with the seed. The adaptive variant stops
once the distinct clusters drawn cover enough of the plan.
"""
import numpy as np

from edgemem import (
    QueryDistribution,
    RetrievalConfig,
    StreamSource,
    retrieve,
    run_ingestion,
    validate_config,
)
from edgemem.embedding import MockEmbedder
from edgemem.retrieval import adaptive_counts

scenes = [{"duration_s": 30, "base_color": c, "noise_level": 0.01}
          for c in ([255, 0, 0], [0, 200, 0], [0, 0, 255], [255, 0, 0])]
source = StreamSource.synthetic(scenes, fps=1.0, width=8, height=8, seed=2)
config = validate_config({"segmenter": {"scene_threshold": 0.05, "max_partition_duration": 10.0},
                          "clusterer": {"downscale_edge": 8}})
_, store = run_ingestion(source, config)
snap = store.open_snapshot()
scene_of = source.scene_index()
q = MockEmbedder(256).embed_text("red")

for strategy in ("topk", "fixed", "akr"):
    sets, clusters, frames = set(), set(), []
    for seed in range(20):
        rc = RetrievalConfig(strategy=strategy, temperature=0.05, n_fixed=4, top_k=4, n_max=16, seed=seed)
        res = retrieve(q, snap, rc)
        sets.add(res.keyframe_ids)
        clusters |= set(res.selected_index_ids)
        frames.append(len(res.keyframe_ids))
        assert {scene_of[f] for f in res.keyframe_ids} <= {0, 3}
    print(f"{strategy:5s} {np.mean(frames):4.1f} frames/query, {len(sets):2d} distinct answers over 20 seeds, "
          f"{len(clusters)} clusters touched")

# the stopping rule on hand-made plans
for name, p in (("peaked", [0.92] + [0.08 / 15] * 15), ("flat", [1 / 16] * 16)):
    dist = QueryDistribution.from_probabilities(p)
    draws = [adaptive_counts(dist, 0.9, 1.0, 32, s)[1] for s in range(500)]
    print(f"{name}: mean draws {np.mean(draws):.1f}, min {min(draws)}, max {max(draws)}")
