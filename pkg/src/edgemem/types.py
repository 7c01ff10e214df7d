"""Shared domain records.

Every record here is immutable after construction. Numpy payloads are
flagged read-only so a frame or embedding can be handed to several pipeline
stages without defensive copies.
"""
from __future__ import annotations

import base64
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Frame:
    """A timestamped RGB frame.

    ``pixels`` is a ``(height, width, 3)`` uint8 array, i.e. a row-major RGB
    buffer with 8 bits per channel.
    """

    frame_id: int
    timestamp: float
    pixels: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"frame {self.frame_id}: pixels must have shape (H, W, 3), got {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise ValueError(f"frame {self.frame_id}: zero-area frame")
        if not math.isfinite(self.timestamp) or self.timestamp < 0:
            raise ValueError(f"frame {self.frame_id}: bad timestamp {self.timestamp!r}")
        if px is self.pixels and px.flags.writeable:
            px = px.copy()
        object.__setattr__(self, "pixels", _readonly(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.frame_id == other.frame_id
            and self.timestamp == other.timestamp
            and np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "frame_id": self.frame_id,
            "timestamp": self.timestamp,
            "width": self.width,
            "height": self.height,
            "pixels": base64.b64encode(self.pixels.tobytes()).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Frame":
        raw = np.frombuffer(base64.b64decode(d["pixels"]), dtype=np.uint8)
        if raw.size != d["width"] * d["height"] * 3:
            raise ValueError("pixel buffer length does not match width * height * 3")
        return cls(d["frame_id"], float(d["timestamp"]), raw.reshape(d["height"], d["width"], 3).copy())


@dataclass(frozen=True)
class ChannelFeatures:
    """Per-channel mean absolute differences against the previous frame."""

    hue_mean_diff: float
    sat_mean_diff: float
    light_mean_diff: float
    edge_mean_diff: float

    def __post_init__(self):
        for name in ("hue_mean_diff", "sat_mean_diff", "light_mean_diff", "edge_mean_diff"):
            v = getattr(self, name)
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.hue_mean_diff, self.sat_mean_diff, self.light_mean_diff, self.edge_mean_diff])

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ScenePartition:
    partition_id: int
    frames: Tuple[Frame, ...]
    start: float
    end: float
    closed: bool = True
    forced: bool = False  # closed by the duration cap rather than a boundary

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        ids = [f.frame_id for f in self.frames]
        if any(b != a + 1 for a, b in zip(ids, ids[1:])):
            raise ValueError(f"partition {self.partition_id}: frame ids are not contiguous")

    @property
    def frame_ids(self) -> Tuple[int, ...]:
        return tuple(f.frame_id for f in self.frames)

    def __len__(self):
        return len(self.frames)

    def __eq__(self, other):
        if not isinstance(other, ScenePartition):
            return NotImplemented
        return (
            self.partition_id == other.partition_id
            and self.frames == other.frames
            and (self.start, self.end, self.closed, self.forced) == (other.start, other.end, other.closed, other.forced)
        )

    __hash__ = None

    def to_dict(self):
        return {
            "partition_id": self.partition_id,
            "frames": [f.to_dict() for f in self.frames],
            "start": self.start,
            "end": self.end,
            "closed": self.closed,
            "forced": self.forced,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["partition_id"], tuple(Frame.from_dict(f) for f in d["frames"]),
            d["start"], d["end"], d["closed"], d.get("forced", False),
        )


@dataclass(frozen=True, eq=False)
class Cluster:
    """A group of visually similar frames inside one partition.

    ``centroid`` is only kept in memory; persisted cluster metadata carries
    ``None`` in its place.
    """

    cluster_id: int
    partition_id: int
    member_frame_ids: Tuple[int, ...]
    member_timestamps: Tuple[float, ...]
    centroid: Optional[np.ndarray] = None
    index_frame_id: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "member_frame_ids", tuple(int(i) for i in self.member_frame_ids))
        object.__setattr__(self, "member_timestamps", tuple(float(t) for t in self.member_timestamps))
        ids = self.member_frame_ids
        if not ids:
            raise ValueError(f"cluster {self.cluster_id}: no members")
        if len(ids) != len(self.member_timestamps):
            raise ValueError(f"cluster {self.cluster_id}: member ids and timestamps differ in length")
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError(f"cluster {self.cluster_id}: members not sorted by frame_id")
        if self.index_frame_id is not None and self.index_frame_id not in ids:
            raise ValueError(f"cluster {self.cluster_id}: index frame {self.index_frame_id} is not a member")
        if self.centroid is not None:
            object.__setattr__(self, "centroid", _readonly(np.array(self.centroid, dtype=np.float64)))

    @property
    def finalized(self) -> bool:
        return self.index_frame_id is not None

    @property
    def start_time(self) -> float:
        return self.member_timestamps[0]

    @property
    def end_time(self) -> float:
        return self.member_timestamps[-1]

    def __len__(self):
        return len(self.member_frame_ids)

    def __eq__(self, other):
        if not isinstance(other, Cluster):
            return NotImplemented
        same_centroid = (self.centroid is None and other.centroid is None) or (
            self.centroid is not None and other.centroid is not None
            and np.array_equal(self.centroid, other.centroid)
        )
        return same_centroid and self.metadata() == other.metadata()

    __hash__ = None

    def metadata(self) -> Dict[str, Any]:
        return {
            "cluster_id": self.cluster_id,
            "partition_id": self.partition_id,
            "member_frame_ids": list(self.member_frame_ids),
            "member_timestamps": list(self.member_timestamps),
            "index_frame_id": self.index_frame_id,
        }

    def without_centroid(self) -> "Cluster":
        return Cluster(self.cluster_id, self.partition_id, self.member_frame_ids,
                       self.member_timestamps, None, self.index_frame_id)

    def to_dict(self):
        d = self.metadata()
        d["centroid"] = None if self.centroid is None else self.centroid.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["cluster_id"], d["partition_id"], tuple(d["member_frame_ids"]),
            tuple(d["member_timestamps"]), d.get("centroid"), d.get("index_frame_id"),
        )


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """A float32 embedding. Construct through :meth:`normalized` for unit length."""

    values: np.ndarray
    norm: float = field(default=float("nan"))

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float32).reshape(-1)
        if v.size == 0:
            raise ValueError("embedding has no components")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding has non-finite components")
        object.__setattr__(self, "values", _readonly(v))
        if math.isnan(self.norm):
            object.__setattr__(self, "norm", float(np.linalg.norm(v.astype(np.float64))))

    @classmethod
    def normalized(cls, raw) -> "EmbeddingVector":
        x = np.asarray(raw, dtype=np.float64).reshape(-1)
        n = float(np.linalg.norm(x))
        if n == 0.0 or not math.isfinite(n):
            raise ValueError("cannot normalize a zero or non-finite vector")
        return cls(x / n)

    @property
    def dimension(self) -> int:
        return self.values.size

    def is_unit(self, tol: float = 1e-6) -> bool:
        return abs(self.norm - 1.0) <= tol

    def dot(self, other: "EmbeddingVector") -> float:
        return float(np.dot(self.values.astype(np.float64), other.values.astype(np.float64)))

    def __eq__(self, other):
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return self.values.tobytes() == other.values.tobytes()

    __hash__ = None

    def to_dict(self):
        # float32 -> float64 -> repr is lossless, so JSON keeps the bits
        return {"values": [float(x) for x in self.values], "norm": self.norm}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["values"], dtype=np.float32), d["norm"])


@dataclass(frozen=True)
class IndexedFrame:
    index_id: int
    frame_id: int
    cluster_id: int
    aux_prompt: str
    embedding: EmbeddingVector
    timestamp: float = 0.0

    def metadata(self) -> Dict[str, Any]:
        return {
            "index_id": self.index_id,
            "frame_id": self.frame_id,
            "cluster_id": self.cluster_id,
            "aux_prompt": self.aux_prompt,
            "timestamp": self.timestamp,
        }

    def to_dict(self):
        d = self.metadata()
        d["embedding"] = self.embedding.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["index_id"], d["frame_id"], d["cluster_id"], d["aux_prompt"],
                   EmbeddingVector.from_dict(d["embedding"]), d.get("timestamp", 0.0))


@dataclass(frozen=True)
class RetrievalResult:
    strategy: str
    selected_index_ids: Tuple[int, ...]
    counts: Mapping[int, int]
    keyframe_ids: Tuple[int, ...]
    cumulative_probability: float
    plan_distribution: Mapping[int, float]
    n_draws: int
    n_min: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "selected_index_ids", tuple(sorted(self.selected_index_ids)))
        object.__setattr__(self, "counts", dict(sorted(self.counts.items())))
        object.__setattr__(self, "keyframe_ids", tuple(self.keyframe_ids))
        object.__setattr__(self, "plan_distribution", dict(self.plan_distribution))
        if sum(self.counts.values()) != self.n_draws:
            raise ValueError("draw counts do not sum to the number of draws")
        if len(set(self.keyframe_ids)) != len(self.keyframe_ids):
            raise ValueError("duplicate keyframes")
        recomputed = math.fsum(self.plan_distribution[i] for i in self.selected_index_ids)
        if abs(recomputed - self.cumulative_probability) > 1e-9:
            raise ValueError("cumulative probability disagrees with the plan distribution")

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "selected_index_ids": list(self.selected_index_ids),
            "counts": {str(k): v for k, v in self.counts.items()},
            "keyframe_ids": list(self.keyframe_ids),
            "cumulative_probability": self.cumulative_probability,
            "plan_distribution": {str(k): v for k, v in self.plan_distribution.items()},
            "n_draws": self.n_draws,
            "n_min": self.n_min,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["strategy"], tuple(d["selected_index_ids"]),
            {int(k): v for k, v in d["counts"].items()}, tuple(d["keyframe_ids"]),
            d["cumulative_probability"], {int(k): v for k, v in d["plan_distribution"].items()},
            d["n_draws"], d.get("n_min"),
        )


@dataclass(frozen=True)
class LatencyBreakdown:
    on_device_s: float
    transmission_s: float
    cloud_s: float

    def __post_init__(self):
        for name in ("on_device_s", "transmission_s", "cloud_s"):
            v = getattr(self, name)
            if not v >= 0:
                raise ValueError(f"{name} must be non-negative, got {v!r}")

    @property
    def total_s(self) -> float:
        return self.on_device_s + self.transmission_s + self.cloud_s

    def to_dict(self):
        return {
            "on_device_s": self.on_device_s,
            "transmission_s": self.transmission_s,
            "cloud_s": self.cloud_s,
            "total_s": self.total_s,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["on_device_s"], d["transmission_s"], d["cloud_s"])
