"""Caption-pair generation, local verification and VQA alignment."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import NamedTuple, Optional

import jsonschema

from ..exceptions import RetryExhausted, SchemaError, UnparsableAnswer
from ..textparse import parse, tokenize
from . import prompts
from .regions import OverlaySpec

log = logging.getLogger(__name__)

DEFAULT_RETRY_LIMIT = 3
MIN_ATTRIBUTES = 3
TARGET, NONE = "target", "none"

RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["present_attributes", "absent_attributes", "negative_caption", "positive_caption"],
    "properties": {
        "present_attributes": {"type": "array", "items": {"type": "string", "minLength": 1}},
        "absent_attributes": {"type": "array", "items": {"type": "string", "minLength": 1}},
        "negative_caption": {"type": "string", "minLength": 1},
        "positive_caption": {"type": "string", "minLength": 1},
        "verification": {"type": ["object", "string"]},
    },
}


@dataclass(frozen=True)
class AttributeExtraction:
    present: tuple
    absent: tuple

    def to_dict(self):
        return {"present": list(self.present), "absent": list(self.absent)}


@dataclass(frozen=True)
class CaptionPair:
    c_pos: str
    c_neg: str
    pos_attribute: Optional[str] = None
    neg_attribute: Optional[str] = None
    cues: tuple = ()

    def to_dict(self):
        return {"c_pos": self.c_pos, "c_neg": self.c_neg, "pos_attribute": self.pos_attribute,
                "neg_attribute": self.neg_attribute, "cues": list(self.cues)}


@dataclass(frozen=True)
class Failure:
    caption: str   # "c_pos" or "c_neg"
    code: str      # missing-cue | unknown-attribute | wrong-attribute | multi-sentence

    def __str__(self):
        return f"{self.caption}: {self.code}"


@dataclass(frozen=True)
class Verification:
    passed: bool
    failures: tuple = ()
    pos_attribute: Optional[str] = None
    neg_attribute: Optional[str] = None

    @property
    def reasons(self) -> list:
        return [str(f) for f in self.failures]

    def __bool__(self):
        return self.passed


class GeneratedPair(NamedTuple):
    attributes: AttributeExtraction
    pair: CaptionPair
    retries: int
    rationale: object = None


# ----------------------------------------------------------- verification

def _norm_tokens(text: str) -> list:
    words = []
    for tok in tokenize(text):
        w = tok.surface
        if not any(ch.isalnum() for ch in w):
            continue
        if len(w) > 3 and w.endswith("s") and not w.endswith("ss"):
            w = w[:-1]
        words.append(w)
    return words


def mentions(caption: str, attribute: str) -> bool:
    """Whether ``attribute`` occurs in ``caption`` after light normalization.

    Both are lowercased and tokenized, plural ``-s`` is dropped, and the
    attribute must appear as a contiguous run of whole tokens.
    """
    try:
        cap, att = _norm_tokens(caption), _norm_tokens(attribute)
    except ValueError:
        return False
    if not att:
        return False
    k = len(att)
    return any(cap[i:i + k] == att for i in range(len(cap) - k + 1))


def _first_mention(caption, attributes):
    # longest attribute first so "red hoodie" wins over "hoodie"
    for a in sorted(attributes, key=lambda s: (-len(_norm_tokens(s)), attributes.index(s))):
        if mentions(caption, a):
            return a
    return None


def _sentence_count(text: str) -> int:
    return len([s for s in re.split(r"[.!?]+", text) if s.strip()])


def verify_pair(pair: CaptionPair, attrs: AttributeExtraction) -> Verification:
    """Local checks on a generated pair.

    ``c_neg`` must contain a negation cue and mention a present attribute;
    ``c_pos`` must contain a cue and mention an absent attribute; each
    caption must be a single sentence.
    """
    failures = []
    found = {}
    for name, caption, own, other in (("c_neg", pair.c_neg, attrs.present, attrs.absent),
                                      ("c_pos", pair.c_pos, attrs.absent, attrs.present)):
        if not caption or not caption.strip():
            failures.append(Failure(name, "missing-cue"))
            continue
        if parse(caption).cue_count == 0:
            failures.append(Failure(name, "missing-cue"))
        hit = _first_mention(caption, list(own))
        if hit is None:
            code = "wrong-attribute" if _first_mention(caption, list(other)) else "unknown-attribute"
            failures.append(Failure(name, code))
        found[name] = hit
        if _sentence_count(caption) > 1:
            failures.append(Failure(name, "multi-sentence"))
    return Verification(not failures, tuple(failures), found.get("c_pos"), found.get("c_neg"))


# -------------------------------------------------------------- generation

def parse_response(text: str) -> dict:
    """Decode a generator reply (bare JSON or a fenced code block)."""
    body = text.strip()
    fence = re.search(r"```(?:json)?\s*(.*?)```", body, re.DOTALL)
    if fence:
        body = fence.group(1).strip()
    try:
        obj = json.loads(body)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"response is not JSON: {exc.msg}") from None
    try:
        jsonschema.validate(obj, RESPONSE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"response violates schema: {exc.message}") from None
    return obj


def caption_request(image_ref, overlay: OverlaySpec, phrase, phrase_type, attempt, model, retry_reasons=()):
    return {
        "task": "generate",
        "model": model,
        "image": image_ref,
        "overlay": overlay.to_dict() if overlay is not None else None,
        "attempt": attempt,
        "messages": [{"role": "user", "content": prompts.caption_prompt(phrase, phrase_type, retry_reasons)}],
    }


def generate_pair(client, image_ref, overlay: OverlaySpec, phrase, phrase_type,
                  retry_limit=DEFAULT_RETRY_LIMIT, model="gpt-4o") -> GeneratedPair:
    """Run the three-step caption prompt until a pair passes local checks.

    At most ``1 + retry_limit`` client calls are made. Transport failures
    (:class:`ClientError`) propagate immediately; schema and verification
    failures trigger a retry, and the last reasons are fed back into the
    next prompt.
    """
    reasons = []
    for attempt in range(retry_limit + 1):
        request = caption_request(image_ref, overlay, phrase, phrase_type, attempt, model, reasons)
        text = client.complete(request)
        try:
            obj = parse_response(text)
        except SchemaError as exc:
            reasons = [f"schema: {exc}"]
            log.debug("attempt %d for %r rejected: %s", attempt, phrase, exc)
            continue
        attrs = AttributeExtraction(tuple(obj["present_attributes"]), tuple(obj["absent_attributes"]))
        pair = CaptionPair(obj["positive_caption"].strip(), obj["negative_caption"].strip())
        check = verify_pair(pair, attrs)
        reasons = check.reasons
        if len(attrs.present) < MIN_ATTRIBUTES or len(attrs.absent) < MIN_ATTRIBUTES:
            reasons.append(f"need at least {MIN_ATTRIBUTES} present and absent attributes")
        if reasons:
            log.debug("attempt %d for %r rejected: %s", attempt, phrase, reasons)
            continue
        cues = tuple(t.surface for c in (pair.c_neg, pair.c_pos) for t in parse(c).tokens if t.is_cue)
        pair = CaptionPair(pair.c_pos, pair.c_neg, check.pos_attribute, check.neg_attribute, cues)
        return GeneratedPair(attrs, pair, attempt, obj.get("verification"))
    raise RetryExhausted(f"no valid pair for {phrase!r} after {retry_limit} retries",
                         attempts=retry_limit + 1, reasons=reasons)


# --------------------------------------------------------------- alignment

@dataclass(frozen=True)
class AlignmentVerdict:
    pos_match: str
    neg_match: str

    @property
    def accepted(self) -> bool:
        return is_accepted(self.pos_match, self.neg_match)

    def to_dict(self):
        return {"pos_match": self.pos_match, "neg_match": self.neg_match, "accepted": self.accepted}


def is_accepted(pos_match, neg_match) -> bool:
    """C_pos must land on the target; C_neg on nothing or on another box."""
    return pos_match == TARGET and neg_match != TARGET


def parse_answer(text: str, letters=None) -> str:
    """Map a VQA reply onto ``"target"``, ``"none"`` or one label letter.

    Accepts a bare token or JSON such as ``{"answer": "B"}``. Anything else,
    including several letters or a letter not drawn on the image, raises
    :class:`UnparsableAnswer`.
    """
    raw = text
    value = text.strip()
    try:
        obj = json.loads(value)
    except (json.JSONDecodeError, TypeError):
        obj = value
    if isinstance(obj, dict):
        vals = [obj[k] for k in ("answer", "match", "label", "box") if k in obj]
        obj = vals[0] if len(vals) == 1 else None
    if isinstance(obj, list):
        obj = obj[0] if len(obj) == 1 else None
    if not isinstance(obj, str):
        raise UnparsableAnswer(f"cannot read an answer from {raw!r}")
    token = obj.strip().strip("\"'`").rstrip(".").strip()
    low = token.lower()
    if low in (TARGET, NONE):
        return low
    if len(token) == 1 and token.upper() in "ABCDEFGHIJKLMNOPQRSTUVWXYZ":
        letter = token.upper()
        if letters is not None and letter not in letters:
            raise UnparsableAnswer(f"answer {letter!r} names a box that is not on the image")
        return letter
    raise UnparsableAnswer(f"answer {raw!r} is outside the vocabulary {{A..Z, target, none}}")


def align_request(image_ref, overlay: OverlaySpec, caption, role, phrase_type, model):
    return {
        "task": "align",
        "model": model,
        "image": image_ref,
        "overlay": overlay.to_dict(),
        "role": role,
        "caption": caption,
        "messages": [{"role": "user", "content": prompts.align_prompt(caption, phrase_type, overlay.letters)}],
    }


def align(client, image_ref, overlay: OverlaySpec, pair: CaptionPair, phrase_type="", model="vqa") -> AlignmentVerdict:
    """Ask which box each caption describes; exactly two client calls."""
    answers = {}
    for role, caption in (("pos", pair.c_pos), ("neg", pair.c_neg)):
        reply = client.complete(align_request(image_ref, overlay, caption, role, phrase_type, model))
        answers[role] = parse_answer(reply, overlay.letters)
    return AlignmentVerdict(answers["pos"], answers["neg"])
