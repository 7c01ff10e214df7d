"""Analytic edge/cloud latency simulation.

Strategies are compared on what they ship and where it is computed, not on
wall-clock emulation, so every number is exact arithmetic over a
:class:`~edgemem.config.CostModel`:

* transmission = frames * frame_bytes * 8 / bandwidth
* cloud = cloud_base + cloud_per_frame * frames
* on-device = query-text embedding for the memory-based strategies, 0 for
  strategies that upload raw frames

Ingestion work (segmentation and clustering of every frame, aux models and
embedding of index frames) happens while the stream plays, so it is reported
in its own ``ingestion_s`` column instead of being charged to each query.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .config import CostModel, PipelineConfig, validate_config
from .embedding import make_embedder
from .pipeline import IngestionReport, query_latency, run_ingestion
from .retrieval import retrieve
from .sources import StreamSource
from .types import LatencyBreakdown

STRATEGIES = ("venus_akr", "venus_fixed", "topk", "full_upload", "uniform_sample")
_MEMORY_STRATEGIES = {"venus_akr": "akr", "venus_fixed": "fixed", "topk": "topk"}


@dataclass(frozen=True)
class QuerySpec:
    text: str
    arrival_s: Optional[float] = None
    ground_truth_scene: Optional[int] = None

    @classmethod
    def from_dict(cls, d):
        return cls(d["text"], d.get("arrival_s"), d.get("ground_truth_scene"))


@dataclass(frozen=True)
class Scenario:
    stream: StreamSource
    queries: Sequence[QuerySpec]
    cost_model: CostModel = CostModel()
    config: Dict[str, Any] = field(default_factory=dict)
    budget: int = 32
    repeats: int = 1

    @classmethod
    def from_dict(cls, d) -> "Scenario":
        cost = validate_config({"simulator": d.get("cost_model", {})}).simulator
        return cls(
            StreamSource.from_dict(d["stream"]),
            tuple(QuerySpec.from_dict(q) for q in d.get("queries", ())),
            cost,
            dict(d.get("config", {})),
            int(d.get("budget", 32)),
            int(d.get("repeats", 1)),
        )

    @classmethod
    def from_file(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))


@dataclass
class StrategyRow:
    strategy: str
    queries: int = 0
    frames_sent: float = 0.0
    bytes_sent: float = 0.0
    on_device_s: float = 0.0
    transmission_s: float = 0.0
    cloud_s: float = 0.0
    ingestion_s: float = 0.0
    distinct_clusters: float = 0.0
    hit_rate: Optional[float] = None

    @property
    def latency(self) -> LatencyBreakdown:
        return LatencyBreakdown(self.on_device_s, self.transmission_s, self.cloud_s)

    @property
    def total_s(self) -> float:
        return self.on_device_s + self.transmission_s + self.cloud_s

    def to_dict(self):
        d = dict(self.__dict__)
        d["total_s"] = self.total_s
        return d


@dataclass
class SimulationReport:
    rows: Dict[str, StrategyRow]
    per_query: List[Dict[str, Any]]
    ingestion: IngestionReport
    stream_frames: int

    def to_dict(self, include_timings: bool = False):
        return {
            "stream_frames": self.stream_frames,
            "ingestion": self.ingestion.to_dict(include_timings),
            "strategies": {k: v.to_dict() for k, v in self.rows.items()},
            "per_query": self.per_query,
        }


def ingestion_cost(report: IngestionReport, cost: CostModel) -> float:
    return (report.frames * cost.segment_cluster_latency_s
            + report.indexed_frames * (cost.embed_latency_s + cost.aux_latency_s))


def uniform_indices(n_available: int, budget: int) -> List[int]:
    if n_available <= 0:
        return []
    if budget >= n_available:
        return list(range(n_available))
    return sorted(set(np.linspace(0, n_available - 1, budget).round().astype(int).tolist()))


def _seed(base: int, q: int, r: int) -> int:
    return (base * 1_000_003 + q * 10_007 + r) % 2**64


def simulate_strategies(
    scenario: Scenario,
    cost_model: Optional[CostModel] = None,
    strategies: Sequence[str] = STRATEGIES,
    config: Optional[PipelineConfig] = None,
    ingested=None,
) -> SimulationReport:
    """Run every query under every strategy and average the costs per strategy.

    ``ingested`` may pass a precomputed ``(IngestionReport, MemoryStore)`` so
    several cost models can share one ingestion.
    """
    unknown = [s for s in strategies if s not in STRATEGIES]
    if unknown:
        raise ValueError(f"unknown strategy: {', '.join(unknown)}")
    cost = cost_model or scenario.cost_model
    if config is None:
        config = validate_config(scenario.config)
    config = replace(config, simulator=cost)

    report, store = ingested if ingested is not None else run_ingestion(scenario.stream, config)
    snap = store.open_snapshot()
    stamps = snap.frame_timestamps()
    frame_ids = sorted(stamps, key=lambda f: (stamps[f], f))
    cluster_of_frame = {f: c.cluster_id for c in snap.clusters.values() for f in c.member_frame_ids}
    scene_of = scenario.stream.scene_index() if scenario.stream.kind == "synthetic" else None

    embedder = make_embedder(config.embedding)
    budget = scenario.budget
    ingest_s = ingestion_cost(report, cost)

    rows = {s: StrategyRow(s) for s in strategies}
    hits = {s: 0 for s in strategies}
    per_query = []
    for qi, q in enumerate(scenario.queries):
        arrival = q.arrival_s if q.arrival_s is not None else stamps[frame_ids[-1]]
        visible = [f for f in frame_ids if stamps[f] <= arrival]
        qvec = embedder.embed_text(q.text) if any(s in _MEMORY_STRATEGIES for s in strategies) else None
        for r in range(scenario.repeats):
            seed = _seed(config.retrieval.seed, qi, r)
            for s in strategies:
                if s in _MEMORY_STRATEGIES:
                    rc = replace(config.retrieval, strategy=_MEMORY_STRATEGIES[s], seed=seed,
                                 n_fixed=config.retrieval.n_fixed or budget,
                                 top_k=config.retrieval.top_k or budget)
                    sent = list(retrieve(qvec, snap, rc, (0.0, arrival)).keyframe_ids)
                    lat = query_latency(len(sent), cost)
                elif s == "full_upload":
                    sent = visible
                    lat = query_latency(len(sent), cost, on_device_s=0.0)
                else:
                    sent = [visible[i] for i in uniform_indices(len(visible), budget)]
                    lat = query_latency(len(sent), cost, on_device_s=0.0)
                clusters = {cluster_of_frame[f] for f in sent}
                hit = None
                if scene_of is not None and q.ground_truth_scene is not None:
                    hit = any(scene_of[f] == q.ground_truth_scene for f in sent)
                    hits[s] += int(hit)
                row = rows[s]
                row.queries += 1
                row.frames_sent += len(sent)
                row.bytes_sent += len(sent) * cost.frame_bytes
                row.on_device_s += lat.on_device_s
                row.transmission_s += lat.transmission_s
                row.cloud_s += lat.cloud_s
                row.distinct_clusters += len(clusters)
                per_query.append({
                    "strategy": s, "query": qi, "repeat": r, "frames_sent": len(sent),
                    "bytes_sent": len(sent) * cost.frame_bytes, "latency": lat.to_dict(),
                    "distinct_clusters": len(clusters), "hit": hit,
                })

    for s, row in rows.items():
        n = row.queries
        if n:
            for name in ("frames_sent", "bytes_sent", "on_device_s", "transmission_s", "cloud_s", "distinct_clusters"):
                setattr(row, name, getattr(row, name) / n)
            if scene_of is not None and any(q.ground_truth_scene is not None for q in scenario.queries):
                graded = sum(1 for p in per_query if p["strategy"] == s and p["hit"] is not None)
                row.hit_rate = hits[s] / graded if graded else None
        if s in _MEMORY_STRATEGIES:
            row.ingestion_s = ingest_s
    return SimulationReport(rows, per_query, report, report.frames)


# -- real-time feasibility ----------------------------------------------------

@dataclass(frozen=True)
class FeasibilityRow:
    fps: float
    utilization: float  # seconds of on-device work per second of video
    queue_growth_per_s: float  # frames per second accumulating in the backlog
    sustainable: bool


@dataclass
class FeasibilityReport:
    rows: List[FeasibilityRow]
    per_frame_cost_s: float
    max_sustainable_fps: float
    sparsification_ratio: Optional[float]

    def to_dict(self):
        return {
            "per_frame_cost_s": self.per_frame_cost_s,
            "max_sustainable_fps": self.max_sustainable_fps,
            "sparsification_ratio": self.sparsification_ratio,
            "rows": [r.__dict__ for r in self.rows],
        }


def per_frame_cost(cost: CostModel, sparsification_ratio: Optional[float]) -> float:
    """Average on-device seconds per captured frame.

    Without sparsification every frame goes through the embedder and nothing
    else. With it, every frame is segmented and clustered, and only one in
    ``sparsification_ratio`` frames is run through aux models and the embedder.
    """
    if sparsification_ratio is None:
        return cost.embed_latency_s
    if not sparsification_ratio >= 1:
        raise ValueError("sparsification ratio must be >= 1")
    return cost.segment_cluster_latency_s + (cost.embed_latency_s + cost.aux_latency_s) / sparsification_ratio


def check_realtime_feasibility(
    fps_values: Sequence[float], cost: CostModel, sparsification_ratio: Optional[float] = None
) -> FeasibilityReport:
    c = per_frame_cost(cost, sparsification_ratio)
    rows = []
    for fps in fps_values:
        util = fps * c
        growth = fps - (1.0 / c if c > 0 else math.inf)
        rows.append(FeasibilityRow(float(fps), util, max(growth, 0.0), util <= 1.0 + 1e-12))
    return FeasibilityReport(rows, c, (1.0 / c) if c > 0 else math.inf, sparsification_ratio)


def measure_sparsification(source: StreamSource, config: Optional[PipelineConfig] = None) -> float:
    report, _ = run_ingestion(source, config or PipelineConfig())
    return report.sparsification_ratio
