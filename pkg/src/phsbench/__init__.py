"""Health-surveillance text benchmark toolkit.

Text normalization, MLM/NSP continued pretraining, CLS-head fine-tuning
under a one-cycle schedule, stratified benchmarking and comparison tables.
"""

from .corpus import (
    DatasetDescriptor,
    LabeledExample,
    SplitPlan,
    ingest,
    load_registry,
    lookup,
    official_split,
    stratified_kfold,
)
from .evalkit import EvalReport, FoldResult, aggregate, build_comparison_table, confusion, delta_mp, f1_scores
from .finetune import ClassifierHead, FineTuneConfig, OneCycleSchedule, build_classifier, finetune, lr_at, predict
from .normalizer import NormalizationConfig, NormalizedPost, RawPost, normalize, normalize_corpus
from .pretrain import PretrainConfig, apply_mlm_mask, build_nsp_pairs, run_pretraining
from .tokenizer import WordPieceTokenizer, build_vocab

__version__ = "0.1.0"

__all__ = [
    "ClassifierHead",
    "DatasetDescriptor",
    "EvalReport",
    "FineTuneConfig",
    "FoldResult",
    "LabeledExample",
    "NormalizationConfig",
    "NormalizedPost",
    "OneCycleSchedule",
    "PretrainConfig",
    "RawPost",
    "SplitPlan",
    "WordPieceTokenizer",
    "aggregate",
    "apply_mlm_mask",
    "build_classifier",
    "build_comparison_table",
    "build_nsp_pairs",
    "build_vocab",
    "confusion",
    "delta_mp",
    "f1_scores",
    "finetune",
    "ingest",
    "load_registry",
    "lookup",
    "lr_at",
    "normalize",
    "normalize_corpus",
    "official_split",
    "predict",
    "run_pretraining",
    "stratified_kfold",
]
