"""Edge-side video memory and keyframe retrieval for cloud VLM question answering."""
from .config import (
    ClustererConfig,
    ConfigError,
    CostModel,
    EmbedderDescriptor,
    PipelineConfig,
    ReasonerDescriptor,
    RetrievalConfig,
    SegmenterConfig,
    load_config,
    validate_config,
)
from .memory import MemoryStore, Snapshot, similarity_search
from .pipeline import IngestionReport, QueryRecord, run_ingestion, run_query
from .retrieval import (
    QueryDistribution,
    draw_cluster_frames,
    retrieve,
    retrieve_adaptive,
    retrieve_fixed,
    retrieve_topk,
    sample_counts,
    softmax_distribution,
)
from .simulator import Scenario, check_realtime_feasibility, simulate_strategies
from .sources import SceneSpec, StreamSource
from .types import (
    ChannelFeatures,
    Cluster,
    EmbeddingVector,
    Frame,
    IndexedFrame,
    LatencyBreakdown,
    RetrievalResult,
    ScenePartition,
)

__version__ = "0.1.0"
