import numpy as np
import pytest

from edgemem import (
    ClustererConfig,
    Frame,
    MemoryStore,
    ScenePartition,
    StreamSource,
    validate_config,
)
from edgemem.clusterer import cluster_partition
from edgemem.embedding import MockEmbedder, build_aux_prompt, run_aux_models
from edgemem.types import IndexedFrame

RED, GREEN, BLUE = (255, 0, 0), (0, 255, 0), (0, 0, 255)
BLACK, WHITE = (0, 0, 0), (255, 255, 255)


def solid(color, size=8, frame_id=0, timestamp=0.0):
    return Frame(frame_id, timestamp, np.full((size, size, 3), color, dtype=np.uint8))


def noisy(color, rng, sigma=2.55, size=8, frame_id=0, timestamp=0.0):
    px = np.clip(np.rint(np.array(color, float) + rng.normal(0, sigma, (size, size, 3))), 0, 255)
    return Frame(frame_id, timestamp, px.astype(np.uint8))


def restamp(frames, start_id=0, fps=1.0):
    return [Frame(start_id + i, (start_id + i) / fps, f.pixels) for i, f in enumerate(frames)]


def partition(frames, pid=0):
    return ScenePartition(pid, tuple(frames), frames[0].timestamp, frames[-1].timestamp, True)


def build_memory(groups, store=None, dimension=256, fps=1.0, size=8):
    """Insert one cluster per entry of ``groups`` (a list of frame lists, each one cluster).

    Frames are renumbered consecutively; index frame is the first member.
    """
    emb = MockEmbedder(dimension)
    store = store or MemoryStore(None, dimension)
    fid = 0
    for cid, frames in enumerate(groups):
        frames = restamp(frames, fid, fps)
        fid += len(frames)
        part = partition(frames, cid)
        cl = cluster_partition(part, ClustererConfig(distance_threshold=float("inf"), downscale_edge=4), cid)[0]
        key = next(f for f in frames if f.frame_id == cl.index_frame_id)
        prompt = build_aux_prompt(run_aux_models(key))
        rec = IndexedFrame(cid, key.frame_id, cid, prompt, emb.embed_image(key, prompt), key.timestamp)
        store.insert_indexed_frame(rec, cl, frames)
    return store


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def embedder():
    return MockEmbedder(256)


THREE_SCENES = [
    {"duration_s": 20, "base_color": list(RED), "noise_level": 0.01},
    {"duration_s": 20, "base_color": list(GREEN), "noise_level": 0.01},
    {"duration_s": 20, "base_color": list(BLUE), "noise_level": 0.01},
]


@pytest.fixture
def three_scene_source():
    return StreamSource.synthetic(THREE_SCENES, fps=1.0, width=8, height=8, seed=7)


@pytest.fixture
def small_config():
    return validate_config({
        "segmenter": {"scene_threshold": 0.05, "max_partition_duration": 30.0},
        "clusterer": {"downscale_edge": 8},
    })


# -- acceptance reporting ------------------------------------------------------

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
