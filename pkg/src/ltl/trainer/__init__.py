"""Pair classification, REINFORCE, training, search, and the synthetic corpus."""

from .data import LABELS, Example, gen_synthetic, load_jsonl, save_jsonl
from .model import VARIANTS, EMABaseline, NLIModel, PairClassifier, VariantMismatch, classify_pair, pair_features, reinforce_loss
from .loop import ExperimentConfig, RunResult, evaluate, hyper_search, load_model, summarize, train

__all__ = [
    "LABELS",
    "VARIANTS",
    "EMABaseline",
    "Example",
    "ExperimentConfig",
    "NLIModel",
    "PairClassifier",
    "RunResult",
    "VariantMismatch",
    "classify_pair",
    "evaluate",
    "gen_synthetic",
    "hyper_search",
    "load_jsonl",
    "load_model",
    "pair_features",
    "reinforce_loss",
    "save_jsonl",
    "summarize",
    "train",
]
