"""Configuration records and whole-pipeline validation.

A configuration document is a nested mapping with one section per stage::

    [segmenter]
    weights = [1.0, 1.0, 1.0, 1.0]
    scene_threshold = 0.15

    [retrieval]
    temperature = 1.0
    theta = 0.9

TOML and JSON files are both accepted by :func:`load_config`.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    """Raised with every violated invariant, each prefixed by its field path."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class SegmenterConfig:
    weights: Tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    scene_threshold: float = 0.15
    max_partition_duration: float = 30.0
    edge_operator: str = "sobel"


@dataclass(frozen=True)
class ClustererConfig:
    distance_threshold: Optional[float] = None  # None: 0.08 * sqrt(vector length)
    downscale_edge: int = 64
    centroid_mode: str = "running_mean"

    @property
    def vector_length(self) -> int:
        return self.downscale_edge * self.downscale_edge * 3

    @property
    def effective_threshold(self) -> float:
        if self.distance_threshold is None:
            return 0.08 * math.sqrt(self.vector_length)
        return self.distance_threshold


@dataclass(frozen=True)
class EmbedderDescriptor:
    backend: str = "mock"
    dimension: int = 256
    endpoint: Optional[str] = None
    timeout_s: float = 10.0
    retries: int = 2
    max_in_flight: int = 4
    aux_backend: str = "stub"


@dataclass(frozen=True)
class RetrievalConfig:
    temperature: float = 1.0
    theta: float = 0.9
    beta: float = 1.0
    n_max: int = 32
    n_fixed: Optional[int] = None
    seed: int = 0
    strategy: str = "akr"
    top_k: Optional[int] = None


@dataclass(frozen=True)
class CostModel:
    """Analytic edge/cloud cost parameters (seconds, bits, bytes)."""

    bandwidth_bps: float = 100e6
    embed_latency_s: float = 0.05
    aux_latency_s: float = 0.01
    segment_cluster_latency_s: float = 0.001
    cloud_base_s: float = 0.5
    cloud_per_frame_s: float = 0.1
    frame_bytes: float = 100_000.0


@dataclass(frozen=True)
class ReasonerDescriptor:
    backend: str = "stub"
    endpoint: Optional[str] = None
    model: str = "vlm"
    timeout_s: float = 60.0
    retries: int = 2
    api_key: Optional[str] = None


@dataclass(frozen=True)
class PipelineConfig:
    segmenter: SegmenterConfig = SegmenterConfig()
    clusterer: ClustererConfig = ClustererConfig()
    embedding: EmbedderDescriptor = EmbedderDescriptor()
    retrieval: RetrievalConfig = RetrievalConfig()
    simulator: CostModel = CostModel()
    reasoner: ReasonerDescriptor = ReasonerDescriptor()
    queue_capacity: int = 64

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["segmenter"]["weights"] = list(self.segmenter.weights)
        return d

    def with_overrides(self, overrides: Mapping[str, Any]) -> "PipelineConfig":
        """Apply dotted-path overrides (``{"retrieval.seed": 3}``) and revalidate."""
        d = self.to_dict()
        for path, value in overrides.items():
            _set_path(d, path, value)
        return validate_config(d)


_SECTIONS = {
    "segmenter": SegmenterConfig,
    "clusterer": ClustererConfig,
    "embedding": EmbedderDescriptor,
    "retrieval": RetrievalConfig,
    "simulator": CostModel,
    "reasoner": ReasonerDescriptor,
}


def _set_path(d: Dict[str, Any], path: str, value: Any) -> None:
    keys = path.split(".")
    node = d
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _check_segmenter(c: SegmenterConfig, err) -> None:
    w = c.weights
    if not isinstance(w, (list, tuple)) or len(w) != 4 or not all(_is_num(x) for x in w):
        err("segmenter.weights", "must be four finite numbers (hue, saturation, lightness, edge)")
    else:
        if any(x < 0 for x in w):
            err("segmenter.weights", "weights must be non-negative")
        if not any(x > 0 for x in w):
            err("segmenter.weights", "at least one weight must be positive (weight vector sums to zero)")
    if not _is_num(c.scene_threshold) or not 0 < c.scene_threshold <= 1:
        err("segmenter.scene_threshold", "must lie in (0, 1]")
    if not _is_num(c.max_partition_duration) or c.max_partition_duration <= 0:
        err("segmenter.max_partition_duration", "must be positive")
    if c.edge_operator not in ("sobel", "prewitt"):
        err("segmenter.edge_operator", "must be 'sobel' or 'prewitt'")


def _check_clusterer(c: ClustererConfig, err) -> None:
    if c.distance_threshold is not None and (
        not isinstance(c.distance_threshold, (int, float)) or isinstance(c.distance_threshold, bool)
        or math.isnan(c.distance_threshold) or c.distance_threshold < 0
    ):
        err("clusterer.distance_threshold", "must be a non-negative number")
    if not _is_int(c.downscale_edge) or c.downscale_edge < 1:
        err("clusterer.downscale_edge", "must be an integer >= 1")
    if c.centroid_mode not in ("running_mean", "first_frame"):
        err("clusterer.centroid_mode", "must be 'running_mean' or 'first_frame'")


def _check_embedding(c: EmbedderDescriptor, err) -> None:
    if c.backend not in ("mock", "http"):
        err("embedding.backend", "must be 'mock' or 'http'")
    if not _is_int(c.dimension) or c.dimension < 8:
        err("embedding.dimension", "must be an integer >= 8")
    if c.backend == "http" and not c.endpoint:
        err("embedding.endpoint", "required for the http backend")
    if not _is_num(c.timeout_s) or c.timeout_s <= 0:
        err("embedding.timeout_s", "must be positive")
    if not _is_int(c.retries) or c.retries < 0:
        err("embedding.retries", "must be a non-negative integer")
    if not _is_int(c.max_in_flight) or c.max_in_flight < 1:
        err("embedding.max_in_flight", "must be an integer >= 1")
    if c.aux_backend not in ("stub", "none"):
        err("embedding.aux_backend", "must be 'stub' or 'none'")


def _check_retrieval(c: RetrievalConfig, err) -> None:
    if not _is_num(c.temperature) or c.temperature <= 0:
        err("retrieval.temperature", "temperature must be positive")
    if not _is_num(c.theta) or not 0 < c.theta <= 1:
        err("retrieval.theta", "theta must lie in (0, 1]")
    if not _is_num(c.beta) or c.beta <= 0:
        err("retrieval.beta", "beta must be positive")
    if not _is_int(c.n_max) or c.n_max < 1:
        err("retrieval.n_max", "n_max must be an integer >= 1")
    if c.n_fixed is not None and (not _is_int(c.n_fixed) or c.n_fixed < 1):
        err("retrieval.n_fixed", "n_fixed must be a positive integer when set")
    if c.top_k is not None and (not _is_int(c.top_k) or c.top_k < 1):
        err("retrieval.top_k", "top_k must be a positive integer when set")
    if not _is_int(c.seed) or not 0 <= c.seed < 2**64:
        err("retrieval.seed", "seed must be an unsigned 64-bit integer")
    if c.strategy not in ("akr", "fixed", "topk"):
        err("retrieval.strategy", "must be 'akr', 'fixed' or 'topk'")


def _check_cost(c: CostModel, err) -> None:
    for f in fields(c):
        v = getattr(c, f.name)
        if not _is_num(v) or v < 0:
            err(f"simulator.{f.name}", "must be a non-negative finite number")
    if _is_num(c.bandwidth_bps) and c.bandwidth_bps <= 0:
        err("simulator.bandwidth_bps", "bandwidth must be positive")


def _check_reasoner(c: ReasonerDescriptor, err) -> None:
    if c.backend not in ("stub", "http"):
        err("reasoner.backend", "must be 'stub' or 'http'")
    if c.backend == "http" and not c.endpoint:
        err("reasoner.endpoint", "required for the http backend")


_CHECKS = {
    "segmenter": _check_segmenter,
    "clusterer": _check_clusterer,
    "embedding": _check_embedding,
    "retrieval": _check_retrieval,
    "simulator": _check_cost,
    "reasoner": _check_reasoner,
}


def validate_config(raw: Optional[Mapping[str, Any]] = None) -> PipelineConfig:
    """Validate a nested configuration mapping and fill defaults.

    Every violation is collected before raising, so one :class:`ConfigError`
    lists all of them.
    """
    if isinstance(raw, PipelineConfig):
        raw = raw.to_dict()
    raw = dict(raw or {})
    errors: List[str] = []

    def err(path, msg):
        errors.append(f"{path}: {msg}")

    sections = {}
    for name, cls in _SECTIONS.items():
        body = raw.pop(name, None) or {}
        if not isinstance(body, Mapping):
            err(name, "must be a table of settings")
            sections[name] = cls()
            continue
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(body) - known)
        for key in unknown:
            err(f"{name}.{key}", "unknown setting")
        section = cls(**{k: v for k, v in body.items() if k in known})
        if name == "segmenter" and isinstance(section.weights, list):
            section = replace(section, weights=tuple(section.weights))
        _CHECKS[name](section, err)
        sections[name] = section

    queue_capacity = raw.pop("queue_capacity", 64)
    if not _is_int(queue_capacity) or queue_capacity < 1:
        err("queue_capacity", "must be an integer >= 1")
    for key in sorted(raw):
        err(key, "unknown section")

    if errors:
        raise ConfigError(errors)

    if sections["retrieval"].beta != 1:
        warnings.warn(
            "retrieval.beta != 1: the cumulative-probability stop test divides by beta, "
            "so theta * beta > 1 can never be met and every query runs to n_max",
            stacklevel=2,
        )
    return PipelineConfig(queue_capacity=queue_capacity, **sections)


def load_config(path, overrides: Optional[Mapping[str, Any]] = None) -> PipelineConfig:
    """Read a TOML or JSON configuration file, apply dotted overrides, validate."""
    p = Path(path)
    text = p.read_bytes()
    if p.suffix.lower() == ".json":
        raw = json.loads(text)
    else:
        raw = tomllib.loads(text.decode("utf-8"))
    for key, value in (overrides or {}).items():
        _set_path(raw, key, value)
    return validate_config(raw)


def parse_override(item: str) -> Tuple[str, Any]:
    """Parse ``section.key=value``; the value is read as JSON when possible."""
    if "=" not in item:
        raise ValueError(f"override {item!r} is not of the form key=value")
    key, text = item.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    return key.strip(), value
