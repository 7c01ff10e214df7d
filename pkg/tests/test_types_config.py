import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgemem import (
    ChannelFeatures,
    Cluster,
    ConfigError,
    EmbeddingVector,
    Frame,
    IndexedFrame,
    LatencyBreakdown,
    PipelineConfig,
    RetrievalResult,
    ScenePartition,
    load_config,
    validate_config,
)
from edgemem.config import parse_override


def test_defaults_accepted():
    cfg = validate_config({"retrieval": {"temperature": 1.0, "theta": 0.9, "beta": 1, "n_max": 32}})
    assert cfg.retrieval.n_fixed is None
    assert cfg.segmenter.weights == (1.0, 1.0, 1.0, 1.0)
    assert cfg.embedding.dimension == 256
    assert cfg.simulator.bandwidth_bps == 100e6


def test_zero_temperature_rejected():
    with pytest.raises(ConfigError, match="temperature must be positive"):
        validate_config({"retrieval": {"temperature": 0}})


def test_zero_weights_rejected():
    with pytest.raises(ConfigError) as exc:
        validate_config({"segmenter": {"weights": [0, 0, 0, 0]}})
    assert any(e.startswith("segmenter.weights") for e in exc.value.errors)


def test_all_errors_reported_at_once():
    with pytest.raises(ConfigError) as exc:
        validate_config({
            "retrieval": {"temperature": -1, "theta": 1.5, "n_max": 0},
            "clusterer": {"downscale_edge": 0, "colour": 1},
            "bogus": {},
        })
    paths = {e.split(":")[0] for e in exc.value.errors}
    assert {"retrieval.temperature", "retrieval.theta", "retrieval.n_max",
            "clusterer.downscale_edge", "clusterer.colour", "bogus"} <= paths


def test_beta_warning():
    with pytest.warns(UserWarning, match="beta"):
        validate_config({"retrieval": {"beta": 2.0}})


def test_load_toml_with_override(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[retrieval]\ntemperature = 0.5\nseed = 3\n[segmenter]\nweights = [1, 0, 1, 0]\n')
    cfg = load_config(p, {"retrieval.seed": 9})
    assert cfg.retrieval.temperature == 0.5
    assert cfg.retrieval.seed == 9
    assert cfg.segmenter.weights == (1, 0, 1, 0)


def test_config_roundtrip_through_json():
    cfg = validate_config({"retrieval": {"n_fixed": 16}})
    again = validate_config(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_parse_override():
    assert parse_override("retrieval.seed=4") == ("retrieval.seed", 4)
    assert parse_override("embedding.backend=mock") == ("embedding.backend", "mock")


@settings(max_examples=200, deadline=None)
@given(tau=st.floats(-2, 2), theta=st.floats(-0.5, 1.5), beta=st.floats(-1, 3), n_max=st.integers(-3, 64))
def test_retrieval_validator_accepts_exactly_legal(tau, theta, beta, n_max):
    legal = tau > 0 and 0 < theta <= 1 and beta > 0 and n_max >= 1
    raw = {"retrieval": {"temperature": tau, "theta": theta, "beta": beta, "n_max": n_max}}
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if legal:
            validate_config(raw)
        else:
            with pytest.raises(ConfigError):
                validate_config(raw)


def test_frame_invariants():
    with pytest.raises(ValueError):
        Frame(0, 0.0, np.zeros((0, 4, 3), np.uint8))
    with pytest.raises(ValueError):
        Frame(0, 0.0, np.zeros((4, 4), np.uint8))
    f = Frame(1, 0.5, np.zeros((2, 3, 3), np.uint8))
    assert f.pixels.size == f.width * f.height * 3
    assert not f.pixels.flags.writeable


def test_frame_does_not_alias_caller_buffer():
    buf = np.zeros((2, 2, 3), np.uint8)
    f = Frame(0, 0.0, buf)
    buf[:] = 9
    assert f.pixels.max() == 0


def test_partition_requires_contiguous_ids():
    a = Frame(0, 0.0, np.zeros((1, 1, 3), np.uint8))
    c = Frame(2, 2.0, np.zeros((1, 1, 3), np.uint8))
    with pytest.raises(ValueError, match="contiguous"):
        ScenePartition(0, (a, c), 0.0, 2.0)


def test_cluster_invariants():
    with pytest.raises(ValueError):
        Cluster(0, 0, (), ())
    with pytest.raises(ValueError):
        Cluster(0, 0, (2, 1), (0.0, 1.0))
    with pytest.raises(ValueError):
        Cluster(0, 0, (1, 2), (0.0, 1.0), index_frame_id=5)


def test_channel_features_range():
    with pytest.raises(ValueError):
        ChannelFeatures(0.1, 1.2, 0.0, 0.0)
    with pytest.raises(ValueError):
        ChannelFeatures(math.nan, 0.0, 0.0, 0.0)


def test_latency_sum():
    lb = LatencyBreakdown(0.1, 0.128, 3.3)
    assert abs(lb.total_s - (0.1 + 0.128 + 3.3)) <= 1e-9
    with pytest.raises(ValueError):
        LatencyBreakdown(-1, 0, 0)


def test_embedding_normalized():
    v = EmbeddingVector.normalized([3.0, 4.0] + [0.0] * 6)
    assert v.is_unit()
    assert v.values.dtype == np.float32


def _roundtrip(obj):
    return type(obj).from_dict(json.loads(json.dumps(obj.to_dict())))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False, width=32), min_size=8, max_size=64))
def test_embedding_roundtrip_bit_exact(xs):
    v = EmbeddingVector(np.array(xs, np.float32))
    assert _roundtrip(v).values.tobytes() == v.values.tobytes()


def test_serialization_roundtrip_all_types(rng):
    frames = tuple(Frame(i, i * 0.5, rng.integers(0, 256, (3, 5, 3), dtype=np.uint8)) for i in range(3))
    part = ScenePartition(4, frames, 0.0, 1.0, True, False)
    cl = Cluster(2, 4, (0, 1, 2), (0.0, 0.5, 1.0), rng.random(6), 1)
    emb = EmbeddingVector.normalized(rng.normal(size=16))
    rec = IndexedFrame(0, 1, 2, "objects: red; text:", emb, 0.5)
    res = RetrievalResult("akr", (0,), {0: 2}, (1,), 0.75, {0: 0.75, 1: 0.25}, 2, 1.0)
    for obj in (frames[0], part, cl, emb, rec, res, ChannelFeatures(0.1, 0.2, 0.3, 0.4),
                LatencyBreakdown(0.1, 0.2, 0.3)):
        assert _roundtrip(obj) == obj


def test_retrieval_result_checks_cumulative():
    with pytest.raises(ValueError, match="cumulative"):
        RetrievalResult("akr", (0,), {0: 1}, (5,), 0.5, {0: 0.75, 1: 0.25}, 1)
    with pytest.raises(ValueError, match="sum"):
        RetrievalResult("akr", (0,), {0: 1}, (5,), 0.75, {0: 0.75, 1: 0.25}, 3)
    with pytest.raises(ValueError, match="duplicate"):
        RetrievalResult("akr", (0,), {0: 2}, (5, 5), 0.75, {0: 0.75, 1: 0.25}, 2)


def test_with_overrides_revalidates():
    cfg = PipelineConfig().with_overrides({"retrieval.seed": 5})
    assert cfg.retrieval.seed == 5
    with pytest.raises(ConfigError):
        PipelineConfig().with_overrides({"retrieval.temperature": 0})
