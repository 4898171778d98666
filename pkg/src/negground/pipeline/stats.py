"""Corpus statistics: negation-word frequency, cue histogram, word classes."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from ..exceptions import EmptyCaption, EmptyCorpus
from ..textparse import UN_PREFIX, parse


@dataclass(frozen=True)
class CorpusStats:
    n_captions: int
    total_tokens: int
    cue_tokens: int
    cue_histogram: dict
    class_distribution: dict

    @property
    def negation_frequency(self) -> float:
        """Cue tokens per 100 word tokens (``n't`` and un- words included)."""
        return 100.0 * self.cue_tokens / self.total_tokens if self.total_tokens else 0.0

    def to_dict(self) -> dict:
        return {
            "n_captions": self.n_captions,
            "total_tokens": self.total_tokens,
            "cue_tokens": self.cue_tokens,
            "negation_frequency": round(self.negation_frequency, 4),
            "cue_histogram": dict(sorted(self.cue_histogram.items())),
            "class_distribution": dict(sorted(self.class_distribution.items())),
        }


def _captions(corpus):
    for item in corpus:
        if isinstance(item, str):
            yield item
        elif isinstance(item, dict):
            caps = item.get("captions", item)
            for key in ("c_neg", "c_pos", "caption", "text"):
                if isinstance(caps.get(key), str):
                    yield caps[key]
        else:  # DatasetRecord-like
            yield item.pair.c_neg
            yield item.pair.c_pos


def corpus_stats(corpus) -> CorpusStats:
    """Count cue tokens against all word tokens; punctuation is not counted.

    ``corpus`` may mix raw caption strings, dataset records and their dict
    form. Un-prefixed words are pooled under ``"un-"`` in the histogram.
    """
    n = total = cues = 0
    hist, classes = Counter(), Counter()
    for caption in _captions(corpus):
        try:
            parsed = parse(caption)
        except EmptyCaption:
            continue
        n += 1
        for tok in parsed.tokens:
            if not any(ch.isalnum() for ch in tok.surface):
                continue
            total += 1
            classes[tok.tag] += 1
            if tok.is_cue:
                cues += 1
                hist["un-" if tok.cue_kind == UN_PREFIX else tok.surface] += 1
    if n == 0:
        raise EmptyCorpus("corpus has no non-empty captions")
    return CorpusStats(n, total, cues, dict(hist), dict(classes))
