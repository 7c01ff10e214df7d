"""Ingestion and query orchestration.

Ingestion runs four stages connected by bounded queues::

    read + segment -> cluster -> aux models + embed -> memory writer

Each stage is one thread, so output order (and therefore every id and the
resulting manifest) is fixed by frame order. A full queue blocks the stage
upstream of it.
"""
from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

from .clusterer import cluster_partition
from .config import CostModel, PipelineConfig, RetrievalConfig, validate_config
from .embedding import build_aux_prompt, detectors_for, make_embedder, run_aux_models
from .memory import MANIFEST_NAME, MemoryStore, Snapshot
from .reasoner import make_reasoner
from .retrieval import EmptyMemoryError, retrieve
from .segmenter import SegmenterState, flush, ingest_frame
from .sources import StreamSource
from .types import Frame, IndexedFrame, LatencyBreakdown, RetrievalResult

CONFIG_NAME = "pipeline_config.json"

_DONE = object()


class IngestionError(RuntimeError):
    def __init__(self, message: str, frame_id: Optional[int] = None):
        where = f" (frame {frame_id} in flight)" if frame_id is not None else ""
        super().__init__(message + where)
        self.frame_id = frame_id


class _Failure:
    def __init__(self, exc: BaseException, frame_id: Optional[int]):
        self.exc = exc
        self.frame_id = frame_id


@dataclass
class IngestionReport:
    frames: int = 0
    partitions: int = 0
    forced_partitions: int = 0
    clusters: int = 0
    indexed_frames: int = 0
    cluster_members: int = 0
    max_queue_depth: Dict[str, int] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def sparsification_ratio(self) -> float:
        return self.frames / self.indexed_frames if self.indexed_frames else float("inf")

    def to_dict(self, include_timings: bool = True) -> Dict[str, Any]:
        d = {
            "frames": self.frames,
            "partitions": self.partitions,
            "forced_partitions": self.forced_partitions,
            "clusters": self.clusters,
            "indexed_frames": self.indexed_frames,
            "cluster_members": self.cluster_members,
            "sparsification_ratio": self.sparsification_ratio if self.indexed_frames else None,
        }
        if include_timings:
            # both depend on thread scheduling, so they are not reproducible
            d["timings"] = dict(self.timings)
            d["max_queue_depth"] = dict(self.max_queue_depth)
        return d


class _Stage(threading.Thread):
    def __init__(self, name, inbox, outbox, work, stop, report, lock):
        super().__init__(name=name, daemon=True)
        self.inbox, self.outbox, self.work = inbox, outbox, work
        self.stop, self.report, self.lock = stop, report, lock
        self.busy = 0.0

    def emit(self, item):
        while not self.stop.is_set():
            try:
                self.outbox.put(item, timeout=0.05)
            except queue.Full:
                continue
            with self.lock:
                depth = self.report.max_queue_depth
                depth[self.name] = max(depth.get(self.name, 0), self.outbox.qsize())
            return

    def run(self):
        inflight = None
        try:
            for item in self._items():
                if isinstance(item, _Failure):
                    self.emit(item)
                    return
                inflight = item
                t0 = time.perf_counter()
                outputs = list(self.work(item))
                self.busy += time.perf_counter() - t0
                for out in outputs:
                    self.emit(out)
        except BaseException as exc:  # forwarded to the writer, which re-raises
            self.emit(_Failure(exc, _frame_of(inflight)))
            return
        self.emit(_DONE)

    def _items(self):
        if self.inbox is None:
            yield from self.work.source()
            return
        while not self.stop.is_set():
            try:
                item = self.inbox.get(timeout=0.05)
            except queue.Empty:
                continue
            if item is _DONE:
                return
            yield item


def _frame_of(item) -> Optional[int]:
    if isinstance(item, Frame):
        return item.frame_id
    if hasattr(item, "frames") and item.frames:
        return item.frames[0].frame_id
    if isinstance(item, tuple) and item and hasattr(item[0], "frames"):
        return item[0].frames[0].frame_id
    return None


class _Segment:
    def __init__(self, frames: Iterable[Frame], config, report):
        self.frames, self.config, self.report = frames, config, report
        self.state = SegmenterState()

    def source(self):
        for f in self.frames:
            yield f
        yield None  # end-of-stream marker for the final flush

    def __call__(self, frame):
        if frame is None:
            last = flush(self.state)
            return [last] if last is not None else []
        self.report.frames += 1
        part = ingest_frame(self.state, frame, self.config.segmenter)
        return [part] if part is not None else []


def run_ingestion(
    source: Union[StreamSource, Iterable[Frame]],
    config: Optional[PipelineConfig] = None,
    memory: Union[MemoryStore, str, Path, None] = None,
    embedder=None,
) -> Tuple[IngestionReport, MemoryStore]:
    """Stream every frame into the memory; returns the report and the store.

    ``memory`` may be a store, a directory (created if needed, must be empty
    of records) or ``None`` for an in-process store.
    """
    config = validate_config(config) if not isinstance(config, PipelineConfig) else config
    if isinstance(memory, MemoryStore):
        store = memory
    elif memory is None:
        store = MemoryStore(None, config.embedding.dimension)
    else:
        store = MemoryStore.open(memory, config.embedding.dimension)
        (Path(memory) / CONFIG_NAME).write_text(json.dumps(config.to_dict(), indent=1, sort_keys=True) + "\n")
    if store.index_count:
        raise ValueError("memory already holds records; ingest into an empty store")
    embedder = embedder or make_embedder(config.embedding)
    detectors = detectors_for(config.embedding.aux_backend)
    frames = source.frames() if isinstance(source, StreamSource) else iter(source)

    report = IngestionReport()
    stop = threading.Event()
    lock = threading.Lock()
    cap = config.queue_capacity
    q_parts, q_clusters, q_records = queue.Queue(cap), queue.Queue(cap), queue.Queue(cap)
    next_cluster = [0]

    def do_cluster(part):
        report.partitions += 1
        report.forced_partitions += int(part.forced)
        clusters = cluster_partition(part, config.clusterer, next_cluster[0])
        next_cluster[0] += len(clusters)
        return [(part, clusters)]

    def do_embed(item):
        part, clusters = item
        by_id = {f.frame_id: f for f in part.frames}
        batch = []
        for cl in clusters:
            key = by_id[cl.index_frame_id]
            prompt = build_aux_prompt(run_aux_models(key, detectors))
            vec = embedder.embed_image(key, prompt)
            rec = IndexedFrame(cl.cluster_id, key.frame_id, cl.cluster_id, prompt, vec, key.timestamp)
            batch.append((rec, cl, [by_id[i] for i in cl.member_frame_ids]))
        return [batch]

    stages = [
        _Stage("segment", None, q_parts, _Segment(frames, config, report), stop, report, lock),
        _Stage("cluster", q_parts, q_clusters, do_cluster, stop, report, lock),
        _Stage("embed", q_clusters, q_records, do_embed, stop, report, lock),
    ]
    t_start = time.perf_counter()
    for s in stages:
        s.start()
    write_time = 0.0
    try:
        while True:
            item = q_records.get()
            if item is _DONE:
                break
            if isinstance(item, _Failure):
                raise IngestionError(f"ingestion failed: {item.exc!r}", item.frame_id) from item.exc
            t0 = time.perf_counter()
            try:
                store.insert_many(item)
            except Exception as exc:
                raise IngestionError(f"storage failure: {exc!r}", item[0][0].frame_id if item else None) from exc
            write_time += time.perf_counter() - t0
            report.clusters += len(item)
            report.indexed_frames += len(item)
            report.cluster_members += sum(len(c) for _, c, _ in item)
    finally:
        stop.set()
        for s in stages:
            s.join(timeout=5)

    for s in stages:
        report.timings[s.name] = s.busy
    report.timings["write"] = write_time
    report.timings["wall"] = time.perf_counter() - t_start
    if report.cluster_members != report.frames:
        raise IngestionError(f"{report.frames} frames read but {report.cluster_members} clustered")
    return report, store


# -- querying ---------------------------------------------------------------

@dataclass
class QueryRecord:
    query: str
    arrival_s: float
    result: RetrievalResult
    latency: LatencyBreakdown
    answer: Optional[str] = None
    error: Optional[str] = None
    wall_s: float = 0.0

    def to_dict(self, include_timings: bool = True) -> Dict[str, Any]:
        d = {
            "query": self.query,
            "arrival_s": self.arrival_s,
            "result": self.result.to_dict(),
            "latency": self.latency.to_dict(),
            "answer": self.answer,
            "error": self.error,
        }
        if include_timings:
            d["timings"] = {"wall_s": self.wall_s}
        return d


def transmission_seconds(n_frames: int, cost: CostModel) -> float:
    return n_frames * cost.frame_bytes * 8.0 / cost.bandwidth_bps


def query_latency(n_frames: int, cost: CostModel, on_device_s: Optional[float] = None) -> LatencyBreakdown:
    """Analytic cost: query-text embedding on device, keyframe upload, cloud inference."""
    return LatencyBreakdown(
        cost.embed_latency_s if on_device_s is None else on_device_s,
        transmission_seconds(n_frames, cost),
        cost.cloud_base_s + cost.cloud_per_frame_s * n_frames,
    )


def load_memory_config(root) -> Optional[PipelineConfig]:
    p = Path(root) / CONFIG_NAME
    return validate_config(json.loads(p.read_text("utf-8"))) if p.exists() else None


def run_query(
    query: str,
    memory: Union[MemoryStore, Snapshot, str, Path],
    config: Optional[PipelineConfig] = None,
    reasoner=None,
    retrieval: Optional[RetrievalConfig] = None,
    arrival_s: Optional[float] = None,
    time_range: Optional[Tuple[float, float]] = None,
    embedder=None,
) -> QueryRecord:
    """Embed ``query``, select keyframes, price the round trip and ask the reasoner.

    Reasoner failures are recorded on the returned record, not raised.
    """
    t0 = time.perf_counter()
    if isinstance(memory, (str, Path)):
        if not (Path(memory) / MANIFEST_NAME).exists():
            raise EmptyMemoryError(f"memory empty: no store at {memory}")
        config = config or load_memory_config(memory) or PipelineConfig()
        snapshot = MemoryStore.open(memory, config.embedding.dimension).open_snapshot()
    elif isinstance(memory, MemoryStore):
        snapshot = memory.open_snapshot()
    else:
        snapshot = memory
    config = config or PipelineConfig()
    retrieval = retrieval or config.retrieval
    if len(snapshot) == 0:
        raise EmptyMemoryError("memory empty")

    embedder = embedder or make_embedder(config.embedding)
    qvec = embedder.embed_text(query)
    if arrival_s is None:
        arrival_s = max(c.end_time for c in snapshot.clusters.values())
    result = retrieve(qvec, snapshot, retrieval, time_range)
    latency = query_latency(len(result.keyframe_ids), config.simulator)

    stamps = snapshot.frame_timestamps()
    keyframes = [snapshot.load_frame(fid, stamps[fid]) for fid in result.keyframe_ids]
    reasoner = reasoner if reasoner is not None else make_reasoner(config.reasoner)
    answer = error = None
    try:
        answer = reasoner.reason(query, keyframes)
    except Exception as exc:  # non-fatal: retrieval result is still useful
        error = f"{type(exc).__name__}: {exc}"
    return QueryRecord(query, float(arrival_s), result, latency, answer, error, time.perf_counter() - t0)
