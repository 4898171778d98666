"""Region selection and visual-prompt geometry.

Core code only computes where the red target box and the sibling letters
go (:class:`OverlaySpec`); drawing pixels is left to a renderer so the
pipeline can run on annotations alone.
"""
from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import BoxOutOfBounds, ImageRejected, NoEligibleRegions
from ..metrics import Box

DEFAULT_MAX_AREA_RATIO = 0.85
DEFAULT_MAX_INSTANCES = 5
LABEL_SIZE = (14, 16)  # width, height in px


@dataclass(frozen=True)
class RegionAnnotation:
    image_id: object
    image_size: tuple
    box: Box
    phrase: str
    phrase_type: str

    def __post_init__(self):
        if not self.phrase or not self.phrase.strip():
            raise ValueError("region phrase must be non-empty")
        _check_inside(self.box, self.image_size)

    def to_dict(self) -> dict:
        return {"box": self.box.as_list(), "phrase": self.phrase, "phrase_type": self.phrase_type,
                "image_size": list(self.image_size)}


@dataclass(frozen=True)
class ImageAnnotation:
    image_id: object
    width: int
    height: int
    regions: tuple
    image_ref: str = ""

    @property
    def image_size(self) -> tuple:
        return (self.width, self.height)

    @classmethod
    def from_dict(cls, obj) -> "ImageAnnotation":
        size = (int(obj["width"]), int(obj["height"]))
        regions = tuple(
            RegionAnnotation(obj["image_id"], size, Box.of(r["box"]), r["phrase"], r["phrase_type"])
            for r in obj.get("regions", [])
        )
        return cls(obj["image_id"], size[0], size[1], regions, obj.get("image", str(obj["image_id"])))


def _check_inside(box: Box, size) -> None:
    w, h = size
    if box.x1 < 0 or box.y1 < 0 or box.x2 > w or box.y2 > h:
        raise BoxOutOfBounds(f"box {box.as_list()} lies outside a {w}x{h} image")


def select_regions(image: ImageAnnotation, rng=None, max_area_ratio=DEFAULT_MAX_AREA_RATIO,
                   max_instances=DEFAULT_MAX_INSTANCES, k=2) -> list:
    """Sample up to ``k`` distinct target regions uniformly from one image.

    The whole image is rejected when any phrase type has more than
    ``max_instances`` boxes; boxes covering more than ``max_area_ratio`` of
    the image are never chosen.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if not image.regions:
        raise NoEligibleRegions(f"image {image.image_id!r} has no annotated boxes")
    counts = Counter(r.phrase_type for r in image.regions)
    crowded = sorted(t for t, c in counts.items() if c > max_instances)
    if crowded:
        raise ImageRejected(f"image {image.image_id!r}: more than {max_instances} boxes of type {crowded[0]!r}")
    img_area = image.width * image.height
    eligible = [r for r in image.regions if r.box.area <= max_area_ratio * img_area]
    if not eligible:
        raise NoEligibleRegions(f"image {image.image_id!r}: every box covers too much of the image")
    picks = rng.choice(len(eligible), size=min(k, len(eligible)), replace=False)
    return [eligible[i] for i in picks]


@dataclass(frozen=True)
class Label:
    letter: str
    anchor: tuple
    inside: bool
    box: Box

    def to_dict(self) -> dict:
        return {"letter": self.letter, "anchor": list(self.anchor), "inside": self.inside,
                "box": self.box.as_list()}


@dataclass(frozen=True)
class OverlaySpec:
    image_size: tuple
    target_box: Box
    labels: tuple = ()
    line_width: int = 3
    color: str = "red"
    label_size: tuple = field(default=LABEL_SIZE)

    @property
    def letters(self) -> tuple:
        return tuple(lab.letter for lab in self.labels)

    def to_dict(self) -> dict:
        return {"image_size": list(self.image_size), "target_box": self.target_box.as_list(),
                "color": self.color, "line_width": self.line_width,
                "labels": [lab.to_dict() for lab in self.labels]}


def render_overlay(image_size, target_box, siblings=(), line_width=3, label_size=LABEL_SIZE) -> OverlaySpec:
    """Place the unlabeled red target box and lettered sibling boxes.

    Siblings are lettered A, B, ... in reading order (top-to-bottom, then
    left-to-right). A letter sits just above the box's top-left corner, or
    just inside it when there is no room above.
    """
    target_box = Box.of(target_box)
    siblings = [Box.of(b) for b in siblings]
    _check_inside(target_box, image_size)
    for b in siblings:
        _check_inside(b, image_size)
    if len(siblings) > 26:
        raise ValueError("at most 26 sibling boxes can be lettered")
    w, _ = image_size
    lw, lh = label_size
    labels = []
    ordered = sorted(range(len(siblings)), key=lambda i: (siblings[i].y1, siblings[i].x1, i))
    for letter, i in zip(string.ascii_uppercase, ordered):
        b = siblings[i]
        x = min(b.x1, max(0.0, w - lw))
        if b.y1 - lh >= 0:
            labels.append(Label(letter, (x, b.y1 - lh), False, b))
        else:
            labels.append(Label(letter, (x, b.y1), True, b))
    return OverlaySpec(tuple(image_size), target_box, tuple(labels), line_width, label_size=tuple(label_size))


class PillowRenderer:
    """Draw an :class:`OverlaySpec` onto an image with Pillow (optional extra)."""

    def __init__(self, label_color="white", label_fill="black"):
        self.label_color = label_color
        self.label_fill = label_fill

    def render(self, image, overlay: OverlaySpec):
        from PIL import Image, ImageDraw

        img = Image.open(image) if not hasattr(image, "convert") else image
        img = img.convert("RGB")
        draw = ImageDraw.Draw(img)
        draw.rectangle(overlay.target_box.as_list(), outline=overlay.color, width=overlay.line_width)
        lw, lh = overlay.label_size
        for lab in overlay.labels:
            draw.rectangle(lab.box.as_list(), outline=self.label_fill, width=1)
            x, y = lab.anchor
            draw.rectangle([x, y, x + lw, y + lh], fill=self.label_fill)
            draw.text((x + 3, y + 2), lab.letter, fill=self.label_color)
        return img
