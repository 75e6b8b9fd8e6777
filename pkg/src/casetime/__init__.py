"""casetime: case-report screening, LLM timeline annotation, and temporal scoring."""

from .annotations import (
    Annotation,
    Finding,
    PromptVariant,
    parse_annotation_table,
    serialize_annotation,
)
from .align import (
    AlignmentResult,
    DistanceSpec,
    HashingEmbedder,
    HttpEmbedder,
    MatchedPair,
    best_match,
    cosine_distance,
    fallback_embed,
    levenshtein,
    normalized_levenshtein,
)
from .metrics import (
    DiscrepancySeries,
    MetricConfig,
    adjusted_match_rate,
    aultc,
    concordance,
    event_match_rate,
    iqr_filter,
    log_time_cdf,
    median_abs_error,
)

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "Finding",
    "PromptVariant",
    "parse_annotation_table",
    "serialize_annotation",
    "AlignmentResult",
    "DistanceSpec",
    "HashingEmbedder",
    "HttpEmbedder",
    "MatchedPair",
    "best_match",
    "cosine_distance",
    "fallback_embed",
    "levenshtein",
    "normalized_levenshtein",
    "DiscrepancySeries",
    "MetricConfig",
    "adjusted_match_rate",
    "aultc",
    "concordance",
    "event_match_rate",
    "iqr_filter",
    "log_time_cdf",
    "median_abs_error",
    "__version__",
]
