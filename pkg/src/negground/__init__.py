"""Negation-aware grounding toolkit."""
from .adapter import LoraAdapter, LoraLinear, attention_by_class, placement
from .metrics import (Box, Detection, EvalReport, QuerySet, average_precision, class_ignored_nms,
                      evaluate, fpr, iou, mcq_select, nms_ap)
from .negtome import BoostConfig, MergedSequence, NegToMeMerger, amplification_check, mean_pool, merge
from .textparse import ParsedCaption, PhraseChunker, chunk, detect_cues, parse, tag, tokenize

__version__ = "0.1.0"

__all__ = [
    "LoraAdapter", "LoraLinear", "attention_by_class", "placement",
    "Box", "Detection", "EvalReport", "QuerySet", "average_precision", "class_ignored_nms",
    "evaluate", "fpr", "iou", "mcq_select", "nms_ap",
    "BoostConfig", "MergedSequence", "NegToMeMerger", "amplification_check", "mean_pool", "merge",
    "ParsedCaption", "PhraseChunker", "chunk", "detect_cues", "parse", "tag", "tokenize",
]
