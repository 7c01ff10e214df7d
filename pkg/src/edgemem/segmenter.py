"""Streaming scene segmentation.

Consecutive frames are compared on four per-pixel maps (hue, saturation,
lightness, edge magnitude). The weighted mean of the per-channel mean
absolute differences is the scene score; a score above the threshold opens a
new partition, and a partition that reaches the duration cap is flushed even
when no boundary fires.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import SegmenterConfig
from .types import ChannelFeatures, Frame, ScenePartition

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_PREWITT_X = np.array([[-1, 0, 1], [-1, 0, 1], [-1, 0, 1]], dtype=np.float64)

# Largest gradient magnitude either kernel can produce on a [0, 1] image:
# the maximum over directions u of sum_k |k . u|.
EDGE_MAX_RESPONSE = {"sobel": 4.0 * np.sqrt(5.0), "prewitt": 2.0 * np.sqrt(10.0)}


@dataclass(frozen=True)
class ChannelMaps:
    hue: np.ndarray
    saturation: np.ndarray
    lightness: np.ndarray
    edge: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.hue.shape


def rgb_to_hsl(pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized RGB -> HSL, every output in [0, 1]. Achromatic pixels get hue 0."""
    rgb = pixels.astype(np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    light = (mx + mn) / 2.0

    chroma = delta > 0
    denom = 1.0 - np.abs(2.0 * light - 1.0)
    sat = np.zeros_like(light)
    np.divide(delta, denom, out=sat, where=chroma & (denom > 0))
    np.clip(sat, 0.0, 1.0, out=sat)

    safe = np.where(chroma, delta, 1.0)
    hue = np.zeros_like(light)
    rmax = chroma & (mx == r)
    gmax = chroma & (mx == g) & ~rmax
    bmax = chroma & ~rmax & ~gmax
    hue[rmax] = ((g - b)[rmax] / safe[rmax]) % 6.0
    hue[gmax] = (b - r)[gmax] / safe[gmax] + 2.0
    hue[bmax] = (r - g)[bmax] / safe[bmax] + 4.0
    hue = (hue / 6.0) % 1.0
    return hue, sat, light


def edge_magnitude(light: np.ndarray, operator: str = "sobel") -> np.ndarray:
    """3x3 gradient magnitude of the lightness map, scaled into [0, 1].

    Borders use edge replication, so a uniform frame has zero response
    everywhere.
    """
    kx = _SOBEL_X if operator == "sobel" else _PREWITT_X
    p = np.pad(light, 1, mode="edge")
    h, w = light.shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    # pair opposite taps first so flat regions cancel exactly
    for i in range(3):
        k = kx[i, 2]
        gx += k * (p[i:i + h, 2:2 + w] - p[i:i + h, 0:w])
        gy += k * (p[2:2 + h, i:i + w] - p[0:h, i:i + w])
    mag = np.hypot(gx, gy) / EDGE_MAX_RESPONSE[operator]
    return np.clip(mag, 0.0, 1.0)


def extract_channels(frame: Frame, operator: str = "sobel") -> ChannelMaps:
    if frame.width == 0 or frame.height == 0:
        raise ValueError("zero-area frame")
    hue, sat, light = rgb_to_hsl(frame.pixels)
    return ChannelMaps(hue, sat, light, edge_magnitude(light, operator))


def channel_differences(curr: ChannelMaps, prev: ChannelMaps) -> ChannelFeatures:
    if curr.shape != prev.shape:
        raise ValueError(f"frame dimensions differ: {curr.shape} vs {prev.shape}")
    dh = np.abs(curr.hue - prev.hue)
    dh = np.minimum(dh, 1.0 - dh)  # hue is circular
    return ChannelFeatures(
        float(dh.mean()),
        float(np.abs(curr.saturation - prev.saturation).mean()),
        float(np.abs(curr.lightness - prev.lightness).mean()),
        float(np.abs(curr.edge - prev.edge).mean()),
    )


def scene_score(curr: ChannelMaps, prev: ChannelMaps, weights: Sequence[float]) -> Tuple[float, ChannelFeatures]:
    """Weighted, weight-normalized sum of per-channel mean absolute differences."""
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if w.shape != (4,) or np.any(w < 0) or total <= 0:
        raise ValueError("weights must be four non-negative numbers with a positive sum")
    feats = channel_differences(curr, prev)
    phi = float(np.dot(w, feats.as_array()) / total)
    return min(max(phi, 0.0), 1.0), feats


@dataclass
class SegmenterState:
    """Mutable state of one segmenter; feed it with :func:`ingest_frame`."""

    previous_channels: Optional[ChannelMaps] = None
    open_frames: List[Frame] = field(default_factory=list)
    last_boundary_timestamp: float = 0.0
    last_frame_id: Optional[int] = None
    last_timestamp: Optional[float] = None
    next_partition_id: int = 0
    last_score: Optional[float] = None

    def _close(self, frames: List[Frame], forced: bool) -> ScenePartition:
        part = ScenePartition(self.next_partition_id, tuple(frames), frames[0].timestamp,
                              frames[-1].timestamp, True, forced)
        self.next_partition_id += 1
        return part


def ingest_frame(state: SegmenterState, frame: Frame, config: SegmenterConfig) -> Optional[ScenePartition]:
    """Push one frame; return the partition it closed, if any.

    A boundary frame starts the new partition. The duration cap is checked
    before the frame is appended: once ``timestamp - start`` reaches
    ``max_partition_duration`` the open partition is flushed and this frame
    starts the next one, so a capped partition spans strictly less than the
    cap (10 frames per partition for a 10 s cap at 1 FPS).
    """
    if state.last_frame_id is not None and frame.frame_id <= state.last_frame_id:
        raise ValueError(f"frame {frame.frame_id} arrived after frame {state.last_frame_id}")
    if state.last_timestamp is not None and frame.timestamp < state.last_timestamp:
        raise ValueError(f"frame {frame.frame_id} has a decreasing timestamp")
    if state.open_frames and frame.frame_id != state.open_frames[-1].frame_id + 1:
        raise ValueError(f"frame {frame.frame_id} leaves a gap after {state.open_frames[-1].frame_id}")

    channels = extract_channels(frame, config.edge_operator)
    closed = None
    if state.previous_channels is not None and state.open_frames:
        phi, _ = scene_score(channels, state.previous_channels, config.weights)
        state.last_score = phi
        if phi > config.scene_threshold:
            closed = state._close(state.open_frames, forced=False)
            state.open_frames = []
            state.last_boundary_timestamp = frame.timestamp
        elif frame.timestamp - state.open_frames[0].timestamp >= config.max_partition_duration:
            closed = state._close(state.open_frames, forced=True)
            state.open_frames = []
            state.last_boundary_timestamp = frame.timestamp
    state.open_frames.append(frame)
    state.previous_channels = channels
    state.last_frame_id = frame.frame_id
    state.last_timestamp = frame.timestamp
    return closed


def flush(state: SegmenterState) -> Optional[ScenePartition]:
    """Close whatever is open at end of stream. Safe to call repeatedly."""
    if not state.open_frames:
        return None
    part = state._close(state.open_frames, forced=False)
    state.open_frames = []
    return part


def segment_stream(frames, config: SegmenterConfig) -> List[ScenePartition]:
    state = SegmenterState()
    out = []
    for f in frames:
        p = ingest_frame(state, f, config)
        if p is not None:
            out.append(p)
    last = flush(state)
    if last is not None:
        out.append(last)
    return out
