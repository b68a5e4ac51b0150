"""Multi-grained video-text similarity: contrasts, attention aggregation, InfoNCE training."""

__version__ = "0.1.0"

from .aggregation import (
    DEFAULT_TAU,
    METHODS,
    AggregatedScores,
    AggregationConfig,
    aggregate_bundle,
    attn_agg_matrix,
    attn_agg_vector,
    baseline_agg_matrix,
)
from .contrast import SimilarityBundle, contrast_batch, contrast_pair
from .encoder import (
    TemporalEncoderParams,
    TextFeatures,
    VideoFeatures,
    encode_video,
    encode_video_backward,
    init_params,
)
from .errors import (
    CacheMismatchError,
    FormatError,
    NumericError,
    ParameterError,
    ShapeError,
    TrainingError,
    UnsupportedVersionError,
    XGrainError,
)
from .evaluation import RetrievalMetrics, evaluate, evaluate_both, metrics_from_ranks, ranks
from .numerics import make_rng, matmul, reduce, softmax_stable
from .objective import (
    ContrastToggles,
    LossReport,
    Model,
    TrainingBatch,
    info_nce,
    loss_backward,
    pair_similarity,
    score_matrix,
)
from .store import Corpus, PairList, TokenSequence, l2_normalize_rows, read_corpus, read_pairs, write_corpus
from .synthetic import SynthConfig, generate, oracle_score
from .training import train_toy
