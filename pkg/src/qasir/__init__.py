"""Query-attentive super-image retrieval for partially relevant video search.

Compose video frames into super images, score them against text queries
with query-attentive aggregation, optionally fine-tune a small head over
frozen embeddings, combine cheap and expensive models in a two-stage
pipeline, and account for every GFLOP along the way.
"""

from .errors import (
    ConfigError,
    DegenerateInputError,
    FormatError,
    InvalidInputError,
    QasirError,
)
from .super_image import (
    FillOrder,
    GridSpec,
    SuperImage,
    SuperImageSequence,
    plan_sifar_grid,
    sample_uniform,
    tile_sequential,
    untile,
)
from .store import (
    EmbeddingStore,
    EncoderProfile,
    QueryEmbedding,
    VideoEmbedding,
    ingest,
    l2_normalize,
    write_qemb,
)
from .scoring import (
    AttentionResult,
    PoolScorer,
    aggregate,
    attend,
    attention_weights,
    rank_all,
    rank_corpus,
    score_pooled,
    score_zero_shot,
    softmax_weights,
)
from .finetune import (
    AdapterParams,
    FinetunedScorer,
    LossConfig,
    ModelParams,
    TemporalParams,
    TrainConfig,
    adapter_forward,
    full_forward,
    load_checkpoint,
    positional_encoding,
    save_checkpoint,
    symmetric_loss,
    temporal_forward,
    train,
)
from .hybrid import HybridConfig, ModelHandle, hybrid_cost, hybrid_retrieve, screen
from .cost_model import (
    DATASET_STATS,
    PROFILES,
    PipelineCost,
    grid_cost_ratio,
    video_text_gflops,
)
from .metrics import EvalReport, MomentAnnotation, mv_group, recall_at_k, report
from .synth import SynthConfig, generate

__version__ = "0.1.0"
