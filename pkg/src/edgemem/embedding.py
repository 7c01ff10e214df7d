"""Image/text embedders and lightweight auxiliary detectors.

``MockEmbedder`` is a deterministic, histogram-based stand-in for a learned
multimodal encoder. Its only job is to give tests a controllable shared
space: the reserved color words map onto the image embedding of the
matching solid color, so a text query such as ``"red"`` has ground truth.

``HttpEmbedder`` speaks a small JSON protocol (``POST <endpoint>/embed``) so a
real encoder service can be substituted without touching callers.
"""
from __future__ import annotations

import base64
import hashlib
import io
import logging
import re
import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import httpx
import numpy as np
from PIL import Image

from .config import EmbedderDescriptor
from .types import EmbeddingVector, Frame

log = logging.getLogger(__name__)

MOCK_SEED = 0x5EED_CAFE
PROMPT_WEIGHT = 0.25
AUX_MIN_CONFIDENCE = 0.5

RESERVED_COLORS: Dict[str, tuple] = {
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "black": (0, 0, 0),
    "white": (255, 255, 255),
}

# Palette for the stub detector's dominant-color label.
PALETTE: Dict[str, tuple] = {
    **RESERVED_COLORS,
    "yellow": (255, 255, 0),
    "cyan": (0, 255, 255),
    "magenta": (255, 0, 255),
    "gray": (128, 128, 128),
}

_STOPWORDS = frozenset(
    "objects text a an the of in on at to is are was were what which where when who how "
    "did does do show me find scene scenes frame frames video there".split()
)


class EmbeddingError(RuntimeError):
    def __init__(self, message: str, attempts: int = 1):
        super().__init__(f"{message} (after {attempts} attempt{'s' if attempts != 1 else ''})")
        self.attempts = attempts


@dataclass(frozen=True)
class AuxDetection:
    kind: str  # "ocr_text" | "object_label"
    value: str
    confidence: float

    def __post_init__(self):
        if self.kind not in ("ocr_text", "object_label"):
            raise ValueError(f"unknown detection kind {self.kind!r}")
        if not self.value:
            raise ValueError("detection value must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def build_aux_prompt(detections: Iterable[AuxDetection]) -> str:
    """Render detections as ``"objects: <sorted labels>; text: <ocr in order>"``.

    Detections under 0.5 confidence are dropped; if nothing survives the
    prompt is empty.
    """
    kept = [d for d in detections if d.confidence >= AUX_MIN_CONFIDENCE]
    if not kept:
        return ""
    labels = sorted({d.value for d in kept if d.kind == "object_label"})
    ocr = [d.value for d in kept if d.kind == "ocr_text"]
    prompt = f"objects: {', '.join(labels)}; text:"
    if ocr:
        prompt += " " + ", ".join(ocr)
    return prompt


def dominant_color(frame: Frame) -> AuxDetection:
    names = sorted(PALETTE)
    palette = np.array([PALETTE[n] for n in names], dtype=np.float64)
    px = frame.pixels.reshape(-1, 3).astype(np.float64)
    d2 = ((px[:, None, :] - palette[None, :, :]) ** 2).sum(axis=2)
    counts = np.bincount(np.argmin(d2, axis=1), minlength=len(names))
    best = int(np.argmax(counts))  # names are sorted, so ties go lexicographically first
    return AuxDetection("object_label", names[best], float(counts[best] / px.shape[0]))


Detector = Callable[[Frame], Iterable[AuxDetection]]


def run_aux_models(frame: Frame, detectors: Optional[Sequence[Detector]] = None) -> List[AuxDetection]:
    """Run each detector on ``frame``; ``None`` means the dominant-color stub."""
    if detectors is None:
        return [dominant_color(frame)]
    out: List[AuxDetection] = []
    for det in detectors:
        out.extend(det(frame))
    return out


def detectors_for(aux_backend: str):
    return None if aux_backend == "stub" else ()


def tokenize(text: str) -> List[str]:
    return [t for t in re.findall(r"[a-z0-9]+", text.lower()) if t not in _STOPWORDS]


def image_features(pixels: np.ndarray) -> np.ndarray:
    """64-bin RGB histogram (4 levels per channel) plus per-channel mean and std."""
    px = pixels.reshape(-1, 3)
    q = px // 64
    bins = q[:, 0].astype(np.int64) * 16 + q[:, 1] * 4 + q[:, 2]
    hist = np.bincount(bins, minlength=64) / px.shape[0]
    rgb = px.astype(np.float64) / 255.0
    return np.concatenate([hist, 0.5 * rgb.mean(axis=0), 0.5 * rgb.std(axis=0)])


class MockEmbedder:
    """Seedless deterministic embedder over a fixed random projection."""

    n_features = 70

    def __init__(self, dimension: int = 256):
        if dimension < 8:
            raise ValueError("dimension must be >= 8")
        self.dimension = dimension
        rng = np.random.default_rng([MOCK_SEED, dimension])
        self._projection = rng.standard_normal((dimension, self.n_features)) / np.sqrt(dimension)
        self._color_dirs = {
            name: self._image_direction(np.full((1, 1, 3), rgb, dtype=np.uint8))
            for name, rgb in RESERVED_COLORS.items()
        }
        self._token_cache: Dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _image_direction(self, pixels: np.ndarray) -> np.ndarray:
        v = self._projection @ image_features(pixels)
        return v / np.linalg.norm(v)

    def _token_vector(self, token: str) -> np.ndarray:
        if token in self._color_dirs:
            return self._color_dirs[token]
        with self._lock:
            vec = self._token_cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng([MOCK_SEED, self.dimension, int.from_bytes(digest, "little")])
            vec = rng.standard_normal(self.dimension)
            vec /= np.linalg.norm(vec)
            with self._lock:
                self._token_cache[token] = vec
        return vec

    def _text_direction(self, text: str) -> Optional[np.ndarray]:
        toks = tokenize(text)
        if not toks:
            return None
        v = np.sum([self._token_vector(t) for t in toks], axis=0)
        n = np.linalg.norm(v)
        return v / n if n > 0 else None

    def embed_image(self, frame: Frame, aux_prompt: str = "") -> EmbeddingVector:
        v = self._image_direction(frame.pixels)
        t = self._text_direction(aux_prompt) if aux_prompt else None
        if t is not None:
            v = v + PROMPT_WEIGHT * t
        return EmbeddingVector.normalized(v)

    def embed_text(self, query: str) -> EmbeddingVector:
        if not query or not query.strip():
            raise ValueError("empty query")
        t = self._text_direction(query)
        if t is None:
            # every token was a stopword; fall back to hashing the raw string
            t = self._token_vector(query.strip().lower())
        return EmbeddingVector.normalized(t)


def encode_png(frame: Frame) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(frame.pixels), "RGB").save(buf, format="PNG")
    return buf.getvalue()


class HttpEmbedder:
    """Client for ``POST <endpoint>/embed``.

    Request: ``{"modality": "image"|"text", "data": <base64 PNG | text>, "aux_prompt": str}``.
    Response: ``{"vector": [floats]}`` of length ``dimension``.
    """

    def __init__(self, desc: EmbedderDescriptor, client: Optional[httpx.Client] = None):
        if not desc.endpoint:
            raise ValueError("http embedder needs an endpoint")
        self.desc = desc
        self.dimension = desc.dimension
        self._client = client or httpx.Client(timeout=desc.timeout_s)
        self._slots = threading.BoundedSemaphore(desc.max_in_flight)

    def _post(self, body: dict) -> EmbeddingVector:
        url = self.desc.endpoint.rstrip("/") + "/embed"
        attempts = self.desc.retries + 1
        last = "no attempt made"
        for attempt in range(1, attempts + 1):
            try:
                with self._slots:
                    resp = self._client.post(url, json=body, timeout=self.desc.timeout_s)
            except httpx.HTTPError as exc:
                last = f"transport error: {exc!r}"
                log.warning("embed request failed (attempt %d/%d): %s", attempt, attempts, last)
                continue
            if resp.status_code != 200:
                last = f"HTTP {resp.status_code}"
                if resp.status_code >= 500:
                    continue
                raise EmbeddingError(f"embedding service returned {last}", attempt)
            try:
                vec = np.asarray(resp.json()["vector"], dtype=np.float64)
            except (ValueError, KeyError, TypeError) as exc:
                raise EmbeddingError(f"malformed response: {exc!r}", attempt) from exc
            if vec.shape != (self.dimension,):
                raise EmbeddingError(
                    f"dimension mismatch: expected {self.dimension}, got {vec.size}", attempt)
            return EmbeddingVector.normalized(vec)
        raise EmbeddingError(last, attempts)

    def embed_image(self, frame: Frame, aux_prompt: str = "") -> EmbeddingVector:
        data = base64.b64encode(encode_png(frame)).decode("ascii")
        return self._post({"modality": "image", "data": data, "aux_prompt": aux_prompt})

    def embed_text(self, query: str) -> EmbeddingVector:
        if not query or not query.strip():
            raise ValueError("empty query")
        return self._post({"modality": "text", "data": query, "aux_prompt": ""})


@lru_cache(maxsize=8)
def _mock(dimension: int) -> MockEmbedder:
    return MockEmbedder(dimension)


def make_embedder(desc: EmbedderDescriptor, client: Optional[httpx.Client] = None):
    if desc.backend == "mock":
        return _mock(desc.dimension)
    if desc.backend == "http":
        return HttpEmbedder(desc, client)
    raise ValueError(f"unknown embedding backend {desc.backend!r}")


def embed_image(frame: Frame, aux_prompt: str, desc: EmbedderDescriptor) -> EmbeddingVector:
    return make_embedder(desc).embed_image(frame, aux_prompt)


def embed_text(query: str, desc: EmbedderDescriptor) -> EmbeddingVector:
    return make_embedder(desc).embed_text(query)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    return a.dot(b) / (a.norm * b.norm)
