"""Query-time keyframe selection.

Index scores become a temperature softmax. Sampling from it (instead of
taking the Top-K) keeps some probability on less similar scenes, which buys
temporal and contextual diversity. Each sampled index then contributes
uniformly drawn frames from its own cluster.

The adaptive variant draws one sample at a time and stops once the distinct
indices drawn so far hold enough probability mass::

    sum(p[j] for j in selected) / beta >= theta   and   draws >= n_min
    n_min = beta * ceil(theta / max(p))

with ``n_max`` as a hard ceiling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .config import RetrievalConfig
from .memory import Snapshot, similarity_search
from .types import EmbeddingVector, RetrievalResult

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]

# Guards ceil() and >= comparisons against representation error, e.g.
# 0.9 / 0.1 == 9.000000000000002 in binary floating point.
_EPS = 1e-9


class EmptyMemoryError(LookupError):
    pass


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class QueryDistribution:
    index_ids: Tuple[int, ...]
    scores: np.ndarray
    probabilities: np.ndarray
    temperature: float

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.ndim != 1 or p.size == 0 or p.size != len(self.index_ids):
            raise ValueError("probabilities must be a non-empty vector matching index_ids")
        if np.any(p <= 0) or abs(math.fsum(p) - 1.0) > 1e-9:
            raise ValueError("probabilities must be positive and sum to 1")
        object.__setattr__(self, "index_ids", tuple(self.index_ids))
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))

    @classmethod
    def from_probabilities(cls, probs: Sequence[float],
                           index_ids: Optional[Sequence[int]] = None) -> "QueryDistribution":
        """Wrap a hand-made distribution (scores are set to log p, temperature 1)."""
        p = np.asarray(probs, dtype=np.float64)
        ids = tuple(range(p.size)) if index_ids is None else tuple(index_ids)
        return cls(ids, np.log(p), p, 1.0)

    def as_dict(self) -> Dict[int, float]:
        return {i: float(p) for i, p in zip(self.index_ids, self.probabilities)}

    @property
    def max_probability(self) -> float:
        return float(self.probabilities.max())


def softmax_distribution(scores: Sequence[Tuple[int, float]], temperature: float) -> QueryDistribution:
    if not scores:
        raise ValueError("empty score list")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    ids = tuple(i for i, _ in scores)
    s = np.array([v for _, v in scores], dtype=np.float64)
    z = s / temperature
    e = np.exp(z - z.max())
    # keep every entry strictly positive even when exp underflows
    e = np.maximum(e, np.finfo(np.float64).tiny)
    return QueryDistribution(ids, s, e / e.sum(), float(temperature))


def _draw(cdf: np.ndarray, u) -> np.ndarray:
    return np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)


def _cdf(dist: QueryDistribution) -> np.ndarray:
    cdf = np.cumsum(dist.probabilities)
    cdf[-1] = 1.0
    return cdf


def sample_counts(dist: QueryDistribution, n_draws: int, rng_seed: SeedLike = None) -> Dict[int, int]:
    """``n_draws`` independent categorical draws; returns counts of the ids drawn."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    rng = _rng(rng_seed)
    picks = _draw(_cdf(dist), rng.random(n_draws))
    counts = np.bincount(picks, minlength=len(dist.index_ids))
    return {dist.index_ids[i]: int(c) for i, c in enumerate(counts) if c}


def min_draws(dist: QueryDistribution, theta: float, beta: float) -> float:
    return beta * math.ceil(theta / dist.max_probability - _EPS)


def adaptive_counts(
    dist: QueryDistribution, theta: float, beta: float, n_max: int, rng_seed: SeedLike = None
) -> Tuple[Dict[int, int], int, float]:
    """Progressive sampling; returns ``(counts, draws, n_min)``."""
    rng = _rng(rng_seed)
    cdf = _cdf(dist)
    p = dist.probabilities
    n_min = min_draws(dist, theta, beta)
    counts: Dict[int, int] = {}
    mass = 0.0
    draws = 0
    while draws < n_max:
        k = int(_draw(cdf, rng.random()))
        draws += 1
        if k not in counts:
            counts[k] = 0
            mass += p[k]
        counts[k] += 1
        if draws >= n_min - _EPS and mass / beta >= theta - _EPS:
            break
    return {dist.index_ids[k]: c for k, c in sorted(counts.items())}, draws, n_min


def draw_cluster_frames(counts: Mapping[int, int], snapshot: Snapshot, rng_seed: SeedLike = None) -> Tuple[int, ...]:
    """Draw ``min(n, |cluster|)`` distinct members per selected index.

    Returns frame ids in chronological order (timestamp, then frame id).
    """
    rng = _rng(rng_seed)
    picked: Dict[int, float] = {}
    for index_id in sorted(counts):
        n = counts[index_id]
        if n <= 0:
            continue
        cl = snapshot.cluster_of(index_id)
        k = min(n, len(cl))
        for pos in sorted(rng.choice(len(cl), size=k, replace=False).tolist()):
            picked[cl.member_frame_ids[pos]] = cl.member_timestamps[pos]
    return tuple(sorted(picked, key=lambda f: (picked[f], f)))


def _scores(query_vec, snapshot, time_range):
    scores = similarity_search(query_vec, snapshot, time_range)
    if not scores:
        raise EmptyMemoryError("memory empty")
    return scores


def _result(strategy, dist, counts, keyframes, draws, n_min=None) -> RetrievalResult:
    plan = dist.as_dict()
    selected = tuple(sorted(counts))
    return RetrievalResult(
        strategy=strategy,
        selected_index_ids=selected,
        counts=counts,
        keyframe_ids=keyframes,
        cumulative_probability=math.fsum(plan[i] for i in selected),
        plan_distribution=plan,
        n_draws=draws,
        n_min=n_min,
    )


def _streams(seed: int):
    sample_ss, frame_ss = np.random.SeedSequence(seed).spawn(2)
    return sample_ss, frame_ss


def retrieve_fixed(query_vec: EmbeddingVector, snapshot: Snapshot, config: RetrievalConfig,
                   time_range: Optional[Tuple[float, float]] = None) -> RetrievalResult:
    """Sampling-based retrieval with a fixed budget of ``config.n_fixed`` draws."""
    if config.n_fixed is None:
        raise ValueError("retrieve_fixed needs config.n_fixed")
    dist = softmax_distribution(_scores(query_vec, snapshot, time_range), config.temperature)
    sample_ss, frame_ss = _streams(config.seed)
    counts = sample_counts(dist, config.n_fixed, sample_ss)
    frames = draw_cluster_frames(counts, snapshot, frame_ss)
    return _result("fixed", dist, counts, frames, config.n_fixed)


def retrieve_adaptive(query_vec: EmbeddingVector, snapshot: Snapshot, config: RetrievalConfig,
                      time_range: Optional[Tuple[float, float]] = None) -> RetrievalResult:
    """Adaptive keyframe retrieval (progressive sampling, see module docstring)."""
    dist = softmax_distribution(_scores(query_vec, snapshot, time_range), config.temperature)
    sample_ss, frame_ss = _streams(config.seed)
    counts, draws, n_min = adaptive_counts(dist, config.theta, config.beta, config.n_max, sample_ss)
    frames = draw_cluster_frames(counts, snapshot, frame_ss)
    return _result("akr", dist, counts, frames, draws, n_min)


def retrieve_topk(query_vec: EmbeddingVector, snapshot: Snapshot, k: int,
                  config: Optional[RetrievalConfig] = None,
                  time_range: Optional[Tuple[float, float]] = None) -> RetrievalResult:
    """Greedy baseline: the ``k`` best-scoring index frames, one frame each."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = _scores(query_vec, snapshot, time_range)
    dist = softmax_distribution(scores, (config or RetrievalConfig()).temperature)
    ranked = sorted(scores, key=lambda t: (-t[1], t[0]))[:k]
    counts = {i: 1 for i, _ in ranked}
    records = sorted((snapshot.record(i) for i in counts), key=lambda r: (r.timestamp, r.frame_id))
    return _result("topk", dist, counts, tuple(r.frame_id for r in records), len(counts))


def retrieve(query_vec: EmbeddingVector, snapshot: Snapshot, config: RetrievalConfig,
             time_range: Optional[Tuple[float, float]] = None) -> RetrievalResult:
    """Dispatch on ``config.strategy``."""
    if config.strategy == "fixed":
        if config.n_fixed is None:
            config = replace(config, n_fixed=config.n_max)
        return retrieve_fixed(query_vec, snapshot, config, time_range)
    if config.strategy == "topk":
        return retrieve_topk(query_vec, snapshot, config.top_k or config.n_fixed or config.n_max, config, time_range)
    return retrieve_adaptive(query_vec, snapshot, config, time_range)
