"""Prompt templates sent to the generator and VQA clients."""

CAPTION_PROMPT = """\
You are looking at an image in which one region is outlined with a red box.
The subject inside the red box is "{phrase}" (type: {phrase_type}).
Describe only what is inside the red box and work through three steps.

Step 1 - attributes.
  present_attributes: at least three attributes or items clearly visible in the box
  (colors, clothing, held objects, actions, relations).
  absent_attributes: at least three attributes or items that would be plausible for
  this subject but are clearly not present in the box.

Step 2 - captions. Each caption is one short, natural sentence that uses a
negation such as "no", "not", "never", "without", an "un-" word, or "n't".
  negative_caption: wrongly states that one of the present_attributes is missing.
  positive_caption: correctly states that one of the absent_attributes is missing.

Step 3 - verification. Check that both captions contain a negation, that the
negative caption uses a present attribute and contradicts the box, and that the
positive caption uses an absent attribute and is true of the box. If a check
fails, rewrite the captions before answering.

Reply with JSON only:
{{"present_attributes": [...], "absent_attributes": [...],
  "negative_caption": "...", "positive_caption": "...",
  "verification": {{"negative": "...", "positive": "..."}}}}"""

RETRY_NOTE = "\nYour previous answer was rejected ({reasons}). Produce a new pair that fixes this."

ALIGN_PROMPT = """\
The image shows one unlabeled box outlined in red and {n_labels} other boxes of
type "{phrase_type}" marked with letters ({letters}).
Caption: "{caption}"
Which box does the caption describe? Answer with exactly one token:
a single letter, "target" for the unlabeled red box, or "none"."""

CROP_VERIFY_PROMPT = """\
This image is a crop around a detected object.
Does the crop match the description "{query}"? Answer "yes" or "no"."""

COORDINATE_PROMPT = """\
Description: "{query}"
Candidate boxes as [x1, y1, x2, y2] in pixels:
{boxes}
Which boxes are inconsistent with the description? Reply with JSON
{{"inconsistent": [box indices]}}; use an empty list when all boxes fit."""


def caption_prompt(phrase, phrase_type, retry_reasons=()):
    text = CAPTION_PROMPT.format(phrase=phrase, phrase_type=phrase_type)
    if retry_reasons:
        text += RETRY_NOTE.format(reasons="; ".join(retry_reasons))
    return text


def align_prompt(caption, phrase_type, letters):
    return ALIGN_PROMPT.format(caption=caption, phrase_type=phrase_type, n_labels=len(letters),
                               letters=", ".join(letters) if letters else "none")


def crop_verify_prompt(query):
    return CROP_VERIFY_PROMPT.format(query=query)


def coordinate_prompt(query, boxes):
    lines = "\n".join(f"{i}: [{', '.join(f'{v:g}' for v in b)}]" for i, b in enumerate(boxes))
    return COORDINATE_PROMPT.format(query=query, boxes=lines)
