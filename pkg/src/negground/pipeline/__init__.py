"""Negation dataset construction with pluggable generator and VQA clients."""
from .builder import SPLITS, BuildConfig, BuildResult, DatasetRecord, build_dataset, check_record
from .clients import HttpClient, MockClient, RecordingClient, request_key
from .generation import (AlignmentVerdict, AttributeExtraction, CaptionPair, align, generate_pair,
                         parse_answer, verify_pair)
from .posthoc import posthoc_coordinate_prompt, posthoc_crop_verify
from .regions import ImageAnnotation, OverlaySpec, RegionAnnotation, render_overlay, select_regions
from .stats import CorpusStats, corpus_stats

__all__ = [
    "SPLITS", "BuildConfig", "BuildResult", "DatasetRecord", "build_dataset", "check_record",
    "HttpClient", "MockClient", "RecordingClient", "request_key",
    "AlignmentVerdict", "AttributeExtraction", "CaptionPair", "align", "generate_pair",
    "parse_answer", "verify_pair", "posthoc_coordinate_prompt", "posthoc_crop_verify",
    "ImageAnnotation", "OverlaySpec", "RegionAnnotation", "render_overlay", "select_regions",
    "CorpusStats", "corpus_stats",
]
