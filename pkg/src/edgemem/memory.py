"""Two-layer memory: a raw frame archive grouped by cluster and a flat vector index.

On-disk layout under ``root``::

    manifest.json        version, counts, record and cluster metadata
    vectors.f32          packed little-endian float32, record i at offset i * D * 4
    frames/<id>.png      lossless raw frames

The manifest is the commit point. It is replaced with write-temp-then-rename
after the frames and vector bytes are on disk, so a crash leaves either the
previous manifest (new bytes are an ignored tail) or the new one.
"""
from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .types import Cluster, EmbeddingVector, Frame, IndexedFrame

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
VECTOR_FILE = "vectors.f32"
FRAME_DIR = "frames"

_F32 = np.dtype("<f4")


class StoreError(RuntimeError):
    """The on-disk store is corrupt or its linkage is dangling."""


@dataclass(frozen=True)
class Snapshot:
    """Read-only view of the store as of one committed sequence number."""

    sequence: int
    records: Tuple[IndexedFrame, ...]
    vectors: np.ndarray
    clusters: Mapping[int, Cluster]
    _load_frame: Callable[[int, float], Frame]

    def __post_init__(self):
        object.__setattr__(self, "_positions", {r.index_id: i for i, r in enumerate(self.records)})

    def __len__(self):
        return len(self.records)

    @property
    def index_ids(self) -> Tuple[int, ...]:
        return tuple(r.index_id for r in self.records)

    def record(self, index_id: int) -> IndexedFrame:
        try:
            return self.records[self._positions[index_id]]
        except KeyError:
            raise KeyError(f"unknown index id {index_id}") from None

    def cluster_of(self, index_id: int) -> Cluster:
        cid = self.record(index_id).cluster_id
        try:
            return self.clusters[cid]
        except KeyError:
            raise StoreError(f"index {index_id} links to missing cluster {cid}") from None

    def fetch_cluster_frames(self, cluster_id: int) -> List[Frame]:
        try:
            c = self.clusters[cluster_id]
        except KeyError:
            raise KeyError(f"unknown cluster id {cluster_id}") from None
        return [self._load_frame(fid, ts) for fid, ts in zip(c.member_frame_ids, c.member_timestamps)]

    def load_frame(self, frame_id: int, timestamp: float) -> Frame:
        return self._load_frame(frame_id, timestamp)

    def frame_timestamps(self) -> Dict[int, float]:
        out = {}
        for c in self.clusters.values():
            out.update(zip(c.member_frame_ids, c.member_timestamps))
        return out


def similarity_search(
    query_vec: EmbeddingVector, snapshot: Snapshot, time_range: Optional[Tuple[float, float]] = None
) -> List[Tuple[int, float]]:
    """Exact cosine score for every in-range index record, ordered by index id.

    Stored vectors and queries are unit length, so the score is a dot product
    evaluated in float64. ``time_range`` keeps records whose cluster span
    overlaps ``[start, end]``.
    """
    if len(snapshot) == 0:
        return []
    if query_vec.dimension != snapshot.vectors.shape[1]:
        raise ValueError(f"query dimension {query_vec.dimension} != index dimension {snapshot.vectors.shape[1]}")
    q = query_vec.values.astype(np.float64)
    q = q / np.linalg.norm(q)
    scores = snapshot.vectors.astype(np.float64) @ q
    out = []
    for rec, s in zip(snapshot.records, scores):
        if time_range is not None:
            c = snapshot.clusters[rec.cluster_id]
            if c.end_time < time_range[0] or c.start_time > time_range[1]:
                continue
        out.append((rec.index_id, float(s)))
    out.sort(key=lambda t: t[0])
    return out


def _manifest_bytes(manifest: dict) -> bytes:
    return (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode("utf-8")


class MemoryStore:
    """Single-writer, many-reader hierarchical memory.

    ``root=None`` keeps everything in process memory (used by simulations).
    """

    def __init__(self, root=None, dimension: int = 256):
        self.root = Path(root) if root is not None else None
        self.dimension = dimension
        self._lock = threading.Lock()
        self._records: List[IndexedFrame] = []
        self._ids: Dict[int, int] = {}
        self._clusters: Dict[int, Cluster] = {}
        self._frames: Dict[int, Frame] = {}
        self._vectors = np.zeros((16, dimension), dtype=np.float32)
        self._frame_count = 0
        self._sequence = 0
        if self.root is not None:
            (self.root / FRAME_DIR).mkdir(parents=True, exist_ok=True)
            if not (self.root / MANIFEST_NAME).exists():
                self._write_manifest()
        self._publish()

    # -- opening -------------------------------------------------------
    @classmethod
    def open(cls, root, dimension: Optional[int] = None) -> "MemoryStore":
        """Open an existing store, or create one when ``root`` has no manifest."""
        root = Path(root)
        mpath = root / MANIFEST_NAME
        if not mpath.exists():
            return cls(root, dimension or 256)
        manifest = json.loads(mpath.read_text("utf-8"))
        if manifest.get("version") != MANIFEST_VERSION:
            raise StoreError(f"unsupported manifest version {manifest.get('version')!r}")
        dim = manifest["dimension"]
        if dimension is not None and dimension != dim:
            raise StoreError(f"store dimension is {dim}, caller expects {dimension}")
        n = manifest["index_count"]
        if n != len(manifest["records"]):
            raise StoreError("manifest index_count disagrees with its records")
        need = n * dim * 4
        vpath = root / manifest["vector_file"]
        raw = vpath.read_bytes() if vpath.exists() else b""
        if len(raw) < need:
            raise StoreError(f"vector file holds {len(raw)} bytes, manifest needs {need}")
        vecs = np.frombuffer(raw[:need], dtype=_F32).reshape(n, dim)  # tail beyond n is ignored

        store = cls.__new__(cls)
        store.root = root
        store.dimension = dim
        store._lock = threading.Lock()
        store._clusters = {c["cluster_id"]: Cluster.from_dict(c) for c in manifest["clusters"]}
        store._records = []
        store._ids = {}
        for i, meta in enumerate(manifest["records"]):
            if meta["cluster_id"] not in store._clusters:
                raise StoreError(f"record {meta['index_id']} links to missing cluster {meta['cluster_id']}")
            rec = IndexedFrame(meta["index_id"], meta["frame_id"], meta["cluster_id"], meta["aux_prompt"],
                               EmbeddingVector(vecs[i].copy()), meta.get("timestamp", 0.0))
            store._ids[rec.index_id] = i
            store._records.append(rec)
        store._frames = {}
        store._vectors = np.zeros((max(16, n), dim), dtype=np.float32)
        store._vectors[:n] = vecs
        store._frame_count = manifest["frame_count"]
        store._sequence = manifest.get("sequence", 0)
        store._publish()
        return store

    # -- writing -------------------------------------------------------
    def insert_indexed_frame(self, record: IndexedFrame, cluster: Cluster, raw_frames: Sequence[Frame]) -> int:
        return self.insert_many([(record, cluster, raw_frames)])

    def insert_many(self, items: Iterable[Tuple[IndexedFrame, Cluster, Sequence[Frame]]]) -> int:
        """Atomically insert a batch; returns the new sequence number."""
        items = [(r, c, list(fr)) for r, c, fr in items]
        with self._lock:
            seen_ids, seen_clusters = set(), set()
            for rec, cl, frames in items:
                self._check(rec, cl, frames, seen_ids, seen_clusters)
            if not items:
                return self._sequence
            n0 = len(self._records)
            new_vecs = np.stack([rec.embedding.values for rec, _, _ in items]).astype(_F32)

            if self.root is not None:
                for _, _, frames in items:
                    for f in frames:
                        self._write_png(f)
                with open(self.root / VECTOR_FILE, "r+b" if (self.root / VECTOR_FILE).exists() else "w+b") as fh:
                    fh.seek(n0 * self.dimension * 4)
                    fh.write(new_vecs.tobytes())
                    fh.truncate()
                    fh.flush()
                    os.fsync(fh.fileno())

            # nothing below can fail on bad input, so in-memory state changes together
            if n0 + len(items) > self._vectors.shape[0]:
                grown = np.zeros((max(2 * self._vectors.shape[0], n0 + len(items)), self.dimension), dtype=np.float32)
                grown[:n0] = self._vectors[:n0]
                self._vectors = grown
            self._vectors[n0:n0 + len(items)] = new_vecs
            for k, (rec, cl, frames) in enumerate(items):
                self._ids[rec.index_id] = n0 + k
                self._records.append(rec)
                self._clusters[cl.cluster_id] = cl.without_centroid()
                self._frame_count += len(frames)
                if self.root is None:
                    for f in frames:
                        self._frames[f.frame_id] = f
            self._sequence += 1
            if self.root is not None:
                self._write_manifest()
            self._publish()
            return self._sequence

    def _check(self, rec, cl, frames, seen_ids, seen_clusters):
        if rec.embedding.dimension != self.dimension:
            raise ValueError(f"embedding dimension {rec.embedding.dimension} != store dimension {self.dimension}")
        if rec.index_id in self._ids or rec.index_id in seen_ids:
            raise ValueError(f"duplicate index id {rec.index_id}")
        if not cl.finalized:
            raise ValueError(f"cluster {cl.cluster_id} is not finalized")
        if cl.cluster_id in self._clusters or cl.cluster_id in seen_clusters:
            raise ValueError(f"cluster {cl.cluster_id} already has an index record")
        if rec.cluster_id != cl.cluster_id or rec.frame_id != cl.index_frame_id:
            raise ValueError(f"record {rec.index_id} does not point at cluster {cl.cluster_id}'s index frame")
        if tuple(f.frame_id for f in frames) != cl.member_frame_ids:
            raise ValueError(f"raw frames do not match the members of cluster {cl.cluster_id}")
        seen_ids.add(rec.index_id)
        seen_clusters.add(cl.cluster_id)

    def _write_png(self, frame: Frame) -> None:
        path = self.root / FRAME_DIR / f"{frame.frame_id}.png"
        tmp = path.with_suffix(".png.tmp")
        Image.fromarray(np.asarray(frame.pixels), "RGB").save(tmp, format="PNG")
        os.replace(tmp, path)

    def manifest(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "dimension": self.dimension,
            "index_count": len(self._records),
            "cluster_count": len(self._clusters),
            "frame_count": self._frame_count,
            "sequence": self._sequence,
            "vector_file": VECTOR_FILE,
            "records": [r.metadata() for r in self._records],
            "clusters": [self._clusters[k].metadata() for k in sorted(self._clusters)],
        }

    def _write_manifest(self) -> None:
        path = self.root / MANIFEST_NAME
        tmp = path.with_suffix(".json.tmp")
        with open(tmp, "wb") as fh:
            fh.write(_manifest_bytes(self.manifest()))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    # -- reading -------------------------------------------------------
    def _load_frame(self, frame_id: int, timestamp: float) -> Frame:
        if self.root is None:
            return self._frames[frame_id]
        with Image.open(self.root / FRAME_DIR / f"{frame_id}.png") as im:
            px = np.array(im.convert("RGB"))
        return Frame(frame_id, timestamp, px)

    def _publish(self) -> None:
        n = len(self._records)
        view = self._vectors[:n]
        view.flags.writeable = False
        self._snapshot = Snapshot(
            self._sequence, tuple(self._records), view,
            MappingProxyType(dict(self._clusters)), self._load_frame,
        )

    def open_snapshot(self) -> Snapshot:
        return self._snapshot

    def fetch_cluster_frames(self, cluster_id: int) -> List[Frame]:
        return self._snapshot.fetch_cluster_frames(cluster_id)

    @property
    def index_count(self) -> int:
        return len(self._records)

    @property
    def frame_count(self) -> int:
        return self._frame_count

    def close(self) -> None:
        """Nothing is buffered; kept for symmetry with :meth:`open`."""
