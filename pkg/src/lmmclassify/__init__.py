"""Training-free image classification through a large multimodal model.

An LMM describes the image in free text; a text-embedding backend scores
that description against every candidate class label and the best cosine
match wins. A second, optional LMM stage maps the free-text answer onto the
class vocabulary before matching. Everything is replayable from recorded
exchange fixtures, so experiments run offline and deterministically.
"""

from .embedding import (
    EmbeddingBackend,
    EmbeddingVector,
    Prediction,
    ReferenceHashBackend,
    classify_by_similarity,
    cosine,
    embed_text,
    make_backend,
    reference_hash_embed,
    register_backend,
)
from .errors import (
    AuthenticationError,
    CacheCorruptionError,
    ConfigError,
    DegenerateEmbeddingError,
    DimensionMismatchError,
    EmbeddingError,
    EmptyTextError,
    FixtureMissError,
    LmmClassifyError,
    ManifestError,
    ProviderError,
    RetriesExhaustedError,
    SafetyRefusalError,
)
from .evalharness import (
    AggregateReport,
    EvalReport,
    ManifestRecord,
    aggregate,
    evaluate,
    harmonic_mean,
    load_manifest,
    write_report,
)
from .gateway import (
    CacheStore,
    GenerationParams,
    LmmExchange,
    LmmGateway,
    LmmRequest,
    ProviderConfig,
    cache_key,
)
from .labels import (
    ClassLabel,
    ClassLabelSet,
    PromptTemplate,
    apply_template,
    canonicalize,
    load_class_list,
)
from .pipeline import (
    PipelineConfig,
    StageTrace,
    build_stage1_prompt,
    build_stage2_prompt,
    classify_image,
    lmm_only_classify,
    slac_classify,
    tlac_classify,
)
from .ratelimit import TokenBucket

__version__ = "0.1.0"

__all__ = [
    "AggregateReport",
    "AuthenticationError",
    "CacheCorruptionError",
    "CacheStore",
    "ClassLabel",
    "ClassLabelSet",
    "ConfigError",
    "DegenerateEmbeddingError",
    "DimensionMismatchError",
    "EmbeddingBackend",
    "EmbeddingError",
    "EmbeddingVector",
    "EmptyTextError",
    "EvalReport",
    "FixtureMissError",
    "GenerationParams",
    "LmmClassifyError",
    "LmmExchange",
    "LmmGateway",
    "LmmRequest",
    "ManifestError",
    "ManifestRecord",
    "PipelineConfig",
    "Prediction",
    "PromptTemplate",
    "ProviderConfig",
    "ProviderError",
    "ReferenceHashBackend",
    "RetriesExhaustedError",
    "SafetyRefusalError",
    "StageTrace",
    "TokenBucket",
    "aggregate",
    "apply_template",
    "build_stage1_prompt",
    "build_stage2_prompt",
    "cache_key",
    "canonicalize",
    "classify_by_similarity",
    "classify_image",
    "cosine",
    "embed_text",
    "evaluate",
    "harmonic_mean",
    "lmm_only_classify",
    "load_class_list",
    "load_manifest",
    "make_backend",
    "reference_hash_embed",
    "register_backend",
    "slac_classify",
    "tlac_classify",
    "write_report",
]
