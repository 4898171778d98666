"""Two-stage VQA filters applied after a detector.

``crop_verify`` asks one yes/no question per top-k box (k calls);
``coordinate_prompt`` sends every top-k box in a single call.
"""
from __future__ import annotations

import json

from ..exceptions import UnparsableAnswer
from . import prompts


def _top_k(dets, k):
    ranked = sorted(dets, key=lambda d: -d.score)
    return ranked if k is None else ranked[:k]


def _yes_no(text: str) -> bool:
    value = text.strip()
    try:
        obj = json.loads(value)
        if isinstance(obj, dict) and len(obj) == 1:
            value = str(next(iter(obj.values())))
        elif isinstance(obj, (str, bool)):
            value = str(obj)
    except json.JSONDecodeError:
        pass
    word = value.strip().strip("\"'").rstrip(".!").strip().lower()
    if word in ("yes", "true"):
        return True
    if word in ("no", "false"):
        return False
    raise UnparsableAnswer(f"expected yes/no, got {text!r}")


def posthoc_crop_verify(dets, query, client, k, model="vqa") -> list:
    """Keep the top-``k`` boxes whose crop the client confirms."""
    if k < 1:
        raise ValueError("k must be >= 1")
    kept = []
    for det in _top_k(dets, k):
        request = {
            "task": "crop_verify", "model": model, "image": det.image_id,
            "crop": det.box.as_list(), "query": query,
            "messages": [{"role": "user", "content": prompts.crop_verify_prompt(query)}],
        }
        if _yes_no(client.complete(request)):
            kept.append(det)
    return kept


def _flag_list(text: str, n: int) -> set:
    try:
        obj = json.loads(text.strip())
    except json.JSONDecodeError:
        raise UnparsableAnswer(f"coordinate reply is not JSON: {text!r}") from None
    if isinstance(obj, dict):
        obj = obj.get("inconsistent")
    if not isinstance(obj, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in obj):
        raise UnparsableAnswer(f"expected a list of box indices, got {text!r}")
    bad = [i for i in obj if not 0 <= i < n]
    if bad:
        raise UnparsableAnswer(f"reply flags unknown box indices {bad}")
    return set(obj)


def posthoc_coordinate_prompt(dets, query, client, k=None, model="vqa") -> list:
    """Drop the boxes the client flags as inconsistent; exactly one call."""
    cands = _top_k(dets, k)
    boxes = [d.box.as_list() for d in cands]
    request = {
        "task": "coordinate", "model": model,
        "image": cands[0].image_id if cands else None,
        "boxes": boxes, "query": query,
        "messages": [{"role": "user", "content": prompts.coordinate_prompt(query, boxes)}],
    }
    flagged = _flag_list(client.complete(request), len(cands))
    return [d for i, d in enumerate(cands) if i not in flagged]
