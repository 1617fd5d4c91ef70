"""reidlab: data engine, evaluation harness, and retrieval service for
chat-style person re-identification."""

__version__ = "0.1.0"

from .corpus import (  # noqa: F401
    AttributeProfile,
    CorpusIndex,
    ImageRecord,
    filter_by_quality,
    mark_occlusions,
    parse_manifest,
    resize_policy,
    serialize_manifest,
)
from .synthgen import (  # noqa: F401
    InstructionSample,
    MixPlan,
    SamplingBounds,
    build_mix,
    sample_gallery_size,
    sample_match_count,
)
from .evalkit import (  # noqa: F401
    EvalReport,
    PrefilterConfig,
    RankingConfig,
    SimilarityList,
    build_split,
    compute_ap,
    compute_cmc,
    prefilter,
    rank_best_choice,
    rank_pairwise,
    run_eval,
)
