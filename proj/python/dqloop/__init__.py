"""Data-quality exception detection, ranking and explanation."""

from ._core import (
    Bundle,
    Config,
    Dataset,
    Features,
    InvalidArgument,
    counterfactuals,
    dcg,
    default_config_text,
    evaluate,
    exception_types,
    explain,
    generate,
    load_bundle,
    ndcg,
    prepare_features,
    rank_score,
    score_month,
    train,
)

__all__ = [
    "Bundle",
    "Config",
    "Dataset",
    "Features",
    "InvalidArgument",
    "counterfactuals",
    "dcg",
    "default_config_text",
    "evaluate",
    "exception_types",
    "explain",
    "generate",
    "load_bundle",
    "ndcg",
    "prepare_features",
    "rank_score",
    "score_month",
    "train",
]
