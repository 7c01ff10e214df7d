"""Cloud reasoner backends.

The stub answers with a digest of exactly what it was sent, which lets tests
check frame order and payload. The HTTP backend posts an OpenAI-compatible
chat completion with the keyframes attached as base64 PNG image parts.
"""
from __future__ import annotations

import base64
import hashlib
import logging
from typing import List, Optional, Sequence

import httpx

from .config import ReasonerDescriptor
from .embedding import encode_png
from .types import Frame

log = logging.getLogger(__name__)


class ReasonerError(RuntimeError):
    pass


def payload_digest(query: str, frames: Sequence[Frame]) -> str:
    h = hashlib.sha256(query.encode("utf-8"))
    for f in frames:
        h.update(f"|{f.frame_id}:{f.timestamp!r}:{f.width}x{f.height}|".encode("ascii"))
        h.update(f.pixels.tobytes())
    return h.hexdigest()


class StubReasoner:
    """Deterministic reasoner; ``calls`` keeps every ``(query, frames)`` payload."""

    def __init__(self):
        self.calls: List[tuple] = []

    def reason(self, query: str, frames: Sequence[Frame]) -> str:
        if not frames:
            raise ValueError("no keyframes to reason over")
        frames = list(frames)
        self.calls.append((query, frames))
        return f"answered with {len(frames)} frames, digest {payload_digest(query, frames)[:16]}"


def chat_request(query: str, frames: Sequence[Frame], model: str) -> dict:
    parts = [{"type": "text", "text": query}]
    for f in frames:
        b64 = base64.b64encode(encode_png(f)).decode("ascii")
        parts.append({"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}})
    return {"model": model, "messages": [{"role": "user", "content": parts}]}


class HttpReasoner:
    def __init__(self, desc: ReasonerDescriptor, client: Optional[httpx.Client] = None):
        if not desc.endpoint:
            raise ValueError("http reasoner needs an endpoint")
        self.desc = desc
        self._client = client or httpx.Client(timeout=desc.timeout_s)

    def reason(self, query: str, frames: Sequence[Frame]) -> str:
        if not frames:
            raise ValueError("no keyframes to reason over")
        url = self.desc.endpoint.rstrip("/") + "/v1/chat/completions"
        body = chat_request(query, frames, self.desc.model)
        headers = {"Authorization": f"Bearer {self.desc.api_key}"} if self.desc.api_key else {}
        last = "no attempt made"
        attempts = self.desc.retries + 1
        for attempt in range(1, attempts + 1):
            try:
                resp = self._client.post(url, json=body, headers=headers, timeout=self.desc.timeout_s)
            except httpx.HTTPError as exc:
                last = f"transport error: {exc!r}"
                log.warning("chat request failed (attempt %d/%d): %s", attempt, attempts, last)
                continue
            if resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise ReasonerError(f"reasoner returned HTTP {resp.status_code}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ReasonerError(f"malformed chat response: {exc!r}") from exc
        raise ReasonerError(f"{last} after {attempts} attempts")


def make_reasoner(desc: ReasonerDescriptor, client: Optional[httpx.Client] = None):
    if desc.backend == "stub":
        return StubReasoner()
    return HttpReasoner(desc, client)


def reason(query: str, keyframes: Sequence[Frame], descriptor: ReasonerDescriptor,
           client: Optional[httpx.Client] = None) -> str:
    return make_reasoner(descriptor, client).reason(query, keyframes)
