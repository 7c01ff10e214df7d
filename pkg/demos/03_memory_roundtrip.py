"""Ingest a stream to disk, reopen it and search it.

Shows the on-disk layout, the sparsification ratio and that a reopened store
answers the same way as the one that wrote it.
"""
import sys
import tempfile
from pathlib import Path

from edgemem import (
          MemoryStore,
          StreamSource,
          run_ingestion,
          similarity_search,
          validate_config,
)
from edgemem.embedding import MockEmbedder

scenes = [{"duration_s": 40, "base_color": c, "noise_level": 0.01}
          for c in ([255, 0, 0], [0, 200, 0], [0, 0, 255], [250, 230, 0])]
source = StreamSource.synthetic(scenes, fps=4.0, width=16, height=16, seed=1)
config = validate_config({"segmenter": {"scene_threshold": 0.05}, "clusterer": {"downscale_edge": 8}})

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()) / "memory"
report, store = run_ingestion(source, config, root)
print(f"{report.frames} frames -> {report.partitions} partitions -> {report.indexed_frames} index frames "
      f"(ratio {report.sparsification_ratio:.0f}:1)")
print("files:", sorted(p.name for p in root.iterdir()), f"+ {len(list((root / 'frames').iterdir()))} pngs")

embedder = MockEmbedder(config.embedding.dimension)
query = embedder.embed_text("blue")
before = similarity_search(query, store.open_snapshot())
store.close()

again = MemoryStore.open(root)
after = similarity_search(query, again.open_snapshot())
print("same scores after reopen:", before == after)
best = max(after, key=lambda t: t[1])
cluster = again.open_snapshot().cluster_of(best[0])
print(f"best index {best[0]} (score {best[1]:.3f}) covers {cluster.start_time:.2f}s to {cluster.end_time:.2f}s")
