"""Text-video retrieval over precomputed frame embeddings.

Builds a video embedding per query by pooling per-frame vectors — mean
pooling, top-k cosine selection, or a trainable text-conditioned attention
head — and ranks with cosine similarity. Includes contrastive training of
the head, retrieval metrics, robustness experiments, binary embedding and
checkpoint formats, and a CLI.
"""

from .corpus import (
    AugmentationSpec,
    RetrievalCorpus,
    inject_transitions,
    load_checkpoint,
    load_corpus,
    read_embeddings,
    save_checkpoint,
    subsample_frames,
    write_embeddings,
)
from .errors import (
    CorruptionError,
    DataError,
    FormatError,
    FramepoolError,
    NumericError,
    ParameterError,
    ShapeError,
    StateError,
)
from .estimator import AttentionPoolRetriever
from .gradcheck import run_grad_check
from .numerics import GradTape, LayerNormParams
from .objective import LogitScale, cosine_sim, symmetric_ce_loss
from .pooling import (
    AttentionPoolHead,
    AttentionTrace,
    attention_pool_fwd,
    init_identity,
    mean_pool,
    top_k_pool,
)
from .retrieval import (
    AttentionPoolMethod,
    MeanPoolMethod,
    RankingReport,
    TopKPoolMethod,
    TwoStageConfig,
    evaluate,
    evaluate_two_stage,
    optimal_k_histogram,
    rank_t2v,
    rank_v2t,
    two_stage_rank,
)
from .synthetic import make_planted_corpus
from .trainer import TrainConfig, cosine_lr, train

__version__ = "0.1.0"
