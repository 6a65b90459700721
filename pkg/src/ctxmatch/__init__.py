"""Context-aware short-text matching with retrieved, selected external contexts."""

from .corpus import CleaningRules, Context, PairDataset, SentencePair
from .decision import EvalReport, MatchPrediction, result_select
from .encoder import EncoderConfig
from .matcher import FusionConfig, TrainConfig
from .pipeline import ABLATIONS, RunConfig, run_ablation, run_pipeline
from .retrieval import RetrievalParams
from .selector import SelectorConfig

__all__ = [
    "ABLATIONS", "CleaningRules", "Context", "EncoderConfig", "EvalReport", "FusionConfig", "MatchPrediction",
    "PairDataset", "RetrievalParams", "RunConfig", "SelectorConfig", "SentencePair", "TrainConfig",
    "result_select", "run_ablation", "run_pipeline",
]
