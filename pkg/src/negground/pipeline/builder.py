"""End-to-end negation dataset construction.

For each image: pick up to two target regions, compute the overlay, run the
caption prompt with retries, align both captions with the VQA client and
keep the record only when the alignment is accepted. Images are processed
concurrently; records come out in image-id order.
"""
from __future__ import annotations

import json
import logging
import zlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..exceptions import NoEligibleRegions, RetryExhausted, UnparsableAnswer
from ..metrics import id_sort_key
from .generation import (DEFAULT_RETRY_LIMIT, AlignmentVerdict, AttributeExtraction, CaptionPair,
                         align, generate_pair, is_accepted, verify_pair)
from .regions import (DEFAULT_MAX_AREA_RATIO, DEFAULT_MAX_INSTANCES, ImageAnnotation,
                      RegionAnnotation, render_overlay, select_regions)

log = logging.getLogger(__name__)

# Size targets per split, kept as metadata only.
SPLITS = {
    "S": {"images": 8_000, "captions": 30_600},
    "M": {"images": 16_000, "captions": 60_400},
    "L": {"images": 24_000, "captions": 91_100},
}


@dataclass(frozen=True)
class BuildConfig:
    seed: int = 0
    retry_limit: int = DEFAULT_RETRY_LIMIT
    max_area_ratio: float = DEFAULT_MAX_AREA_RATIO
    max_instances: int = DEFAULT_MAX_INSTANCES
    parallelism: int = 8
    split: Optional[str] = None
    generator_model: str = "gpt-4o"
    vqa_model: str = "vqa"

    def __post_init__(self):
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")
        if not 0 < self.max_area_ratio <= 1:
            raise ValueError("max_area_ratio must be in (0, 1]")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"split must be one of {sorted(SPLITS)}")


@dataclass(frozen=True)
class DatasetRecord:
    region: RegionAnnotation
    attributes: AttributeExtraction
    pair: CaptionPair
    verdict: AlignmentVerdict
    retry_count: int
    split: Optional[str] = None
    overlay: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "image_id": self.region.image_id,
            "region": self.region.to_dict(),
            "attributes": self.attributes.to_dict(),
            "captions": self.pair.to_dict(),
            "verdict": self.verdict.to_dict(),
            "retry_count": self.retry_count,
            "split": self.split,
            "overlay": self.overlay,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)


def check_record(rec: dict) -> list:
    """Offline re-validation of a serialized record; returns problems found."""
    problems = []
    caps, attrs, verdict = rec["captions"], rec["attributes"], rec["verdict"]
    pair = CaptionPair(caps["c_pos"], caps["c_neg"])
    check = verify_pair(pair, AttributeExtraction(tuple(attrs["present"]), tuple(attrs["absent"])))
    problems.extend(check.reasons)
    if not is_accepted(verdict["pos_match"], verdict["neg_match"]) or not verdict["accepted"]:
        problems.append("alignment verdict not accepted")
    if caps.get("pos_attribute") not in attrs["absent"]:
        problems.append("pos_attribute not among absent attributes")
    if caps.get("neg_attribute") not in attrs["present"]:
        problems.append("neg_attribute not among present attributes")
    return problems


@dataclass
class BuildResult:
    records: list
    summary: Counter = field(default_factory=Counter)

    def write_jsonl(self, fh) -> None:
        for rec in self.records:
            fh.write(rec.to_json() + "\n")


def _image_rng(seed, image_id):
    return np.random.default_rng([seed, zlib.crc32(str(image_id).encode("utf-8"))])


def _process_image(image: ImageAnnotation, generator, vqa, cfg: BuildConfig):
    events = Counter()
    records = []
    try:
        regions = select_regions(image, _image_rng(cfg.seed, image.image_id),
                                 cfg.max_area_ratio, cfg.max_instances)
    except NoEligibleRegions as exc:
        log.info("skipping image %r: %s", image.image_id, exc)
        events["images_rejected"] += 1
        return records, events
    events["images_used"] += 1
    for region in regions:
        siblings = [r.box for r in image.regions
                    if r.phrase_type == region.phrase_type and r is not region]
        overlay = render_overlay(image.image_size, region.box, siblings)
        events["regions"] += 1
        try:
            gen = generate_pair(generator, image.image_ref, overlay, region.phrase, region.phrase_type,
                                cfg.retry_limit, cfg.generator_model)
        except RetryExhausted as exc:
            log.info("image %r region %r: %s", image.image_id, region.phrase, exc)
            events["retry_exhausted"] += 1
            continue
        try:
            verdict = align(vqa, image.image_ref, overlay, gen.pair, region.phrase_type, cfg.vqa_model)
        except UnparsableAnswer as exc:
            log.info("image %r region %r: %s", image.image_id, region.phrase, exc)
            events["unparsable_alignment"] += 1
            continue
        if not verdict.accepted:
            events["alignment_rejected"] += 1
            continue
        events["accepted"] += 1
        records.append(DatasetRecord(region, gen.attributes, gen.pair, verdict, gen.retries,
                                     cfg.split, overlay.to_dict()))
    return records, events


def build_dataset(images, generator, vqa, config: BuildConfig = BuildConfig()) -> BuildResult:
    """Build records for ``images`` (iterable of :class:`ImageAnnotation` or dicts)."""
    images = [im if isinstance(im, ImageAnnotation) else ImageAnnotation.from_dict(im) for im in images]
    images.sort(key=lambda im: id_sort_key(im.image_id))
    if config.split is not None:
        images = images[:SPLITS[config.split]["images"]]
    result = BuildResult([])
    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        for records, events in pool.map(lambda im: _process_image(im, generator, vqa, config), images):
            result.records.extend(records)
            result.summary.update(events)
    result.summary["images"] = len(images)
    return result
