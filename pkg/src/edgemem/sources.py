"""Frame sources: synthetic scene scripts and image directories."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .types import Frame

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class SceneSpec:
    """One scripted scene.

    ``noise_level`` is the std of additive Gaussian pixel noise as a fraction
    of 255; ``drift`` is a per-second change of the base color in 8-bit units.
    """

    duration_s: float
    base_color: Tuple[int, int, int]
    noise_level: float = 0.0
    drift: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @classmethod
    def from_dict(cls, d) -> "SceneSpec":
        drift = d.get("drift", 0.0)
        if isinstance(drift, (int, float)):
            drift = (float(drift),) * 3
        return cls(float(d["duration_s"]), tuple(int(c) for c in d["base_color"]),
                   float(d.get("noise_level", 0.0)), tuple(float(x) for x in drift))

    def to_dict(self):
        return {"duration_s": self.duration_s, "base_color": list(self.base_color),
                "noise_level": self.noise_level, "drift": list(self.drift)}


@dataclass(frozen=True)
class StreamSource:
    kind: str = "synthetic"  # "synthetic" | "image_directory"
    fps: float = 1.0
    scenes: Tuple[SceneSpec, ...] = ()
    path: Optional[str] = None
    width: int = 16
    height: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scenes", tuple(self.scenes))
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        if self.kind == "synthetic":
            if not self.scenes:
                raise ValueError("a synthetic script needs at least one scene")
            if any(s.duration_s <= 0 for s in self.scenes):
                raise ValueError("scene durations must be positive")
            if self.width < 1 or self.height < 1:
                raise ValueError("frame size must be positive")
        elif self.kind == "image_directory":
            if not self.path:
                raise ValueError("an image_directory source needs a path")
        else:
            raise ValueError(f"unknown source kind {self.kind!r}")

    @classmethod
    def synthetic(cls, scenes: Sequence, fps: float = 1.0, width: int = 16, height: int = 16, seed: int = 0):
        specs = tuple(s if isinstance(s, SceneSpec) else SceneSpec.from_dict(s) for s in scenes)
        return cls("synthetic", fps, specs, None, width, height, seed)

    @classmethod
    def image_directory(cls, path, fps: float = 1.0):
        return cls("image_directory", fps, (), str(path))

    @classmethod
    def from_dict(cls, d) -> "StreamSource":
        d = dict(d)
        kind = d.pop("kind", "synthetic")
        scenes = tuple(SceneSpec.from_dict(s) for s in d.pop("scenes", ()))
        return cls(kind=kind, scenes=scenes, **d)

    @classmethod
    def from_file(cls, path) -> "StreamSource":
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))

    def to_dict(self):
        d = {"kind": self.kind, "fps": self.fps}
        if self.kind == "synthetic":
            d.update(scenes=[s.to_dict() for s in self.scenes], width=self.width,
                     height=self.height, seed=self.seed)
        else:
            d["path"] = self.path
        return d

    # -- synthetic helpers -------------------------------------------------
    def scene_frame_counts(self) -> List[int]:
        return [max(1, int(round(s.duration_s * self.fps))) for s in self.scenes]

    def scene_index(self) -> List[int]:
        """Ground-truth scene number of every synthetic frame, indexed by frame id."""
        out = []
        for k, n in enumerate(self.scene_frame_counts()):
            out.extend([k] * n)
        return out

    def __len__(self):
        if self.kind == "synthetic":
            return sum(self.scene_frame_counts())
        return len(_list_images(self.path))

    def frames(self) -> Iterator[Frame]:
        if self.kind == "synthetic":
            return self._synthetic_frames()
        return self._directory_frames()

    def __iter__(self):
        return self.frames()

    def _synthetic_frames(self) -> Iterator[Frame]:
        rng = np.random.default_rng(self.seed)
        fid = 0
        shape = (self.height, self.width, 3)
        for spec, n in zip(self.scenes, self.scene_frame_counts()):
            base = np.array(spec.base_color, dtype=np.float64)
            drift = np.array(spec.drift, dtype=np.float64)
            for k in range(n):
                color = base + drift * (k / self.fps)
                px = np.broadcast_to(color, shape)
                if spec.noise_level > 0:
                    px = px + rng.normal(0.0, spec.noise_level * 255.0, size=shape)
                yield Frame(fid, fid / self.fps, np.clip(np.rint(px), 0, 255).astype(np.uint8))
                fid += 1

    def _directory_frames(self) -> Iterator[Frame]:
        for fid, (path, ts) in enumerate(_timestamps(_list_images(self.path), self.fps)):
            with Image.open(path) as im:
                px = np.array(im.convert("RGB"))
            yield Frame(fid, ts, px)


def _natural_key(path: Path):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", path.name)]


def _list_images(path) -> List[Path]:
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"image directory {root} does not exist")
    return sorted((p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES), key=_natural_key)


def _timestamps(paths: List[Path], fps: float):
    """Numeric stems are timestamps in seconds; otherwise frames are spaced at ``1/fps``."""
    stamps = []
    for i, p in enumerate(paths):
        try:
            stamps.append(float(p.stem))
        except ValueError:
            stamps = None
            break
    if stamps is None or any(b < a for a, b in zip(stamps, stamps[1:])):
        stamps = [i / fps for i in range(len(paths))]
    return list(zip(paths, stamps))
