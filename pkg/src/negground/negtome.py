"""Phrase-level text token merging with a negation-aware boost.

Each phrase of a :class:`~negground.textparse.ParsedCaption` is collapsed to
a single vector: a softmax-weighted average of its sub-token embeddings
whose logits are ``log(gamma_j)``, with ``gamma_j = beta`` for negation cues
inside a negated phrase and ``1`` elsewhere. That softmax is exactly the
normalized weighting ``gamma_j / sum(gamma)``, and with ``beta == 1`` it is a
plain mean.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_embeddings, check_positive, check_vector
from .exceptions import BoundPreconditionError, EmptySequence, NoCue, ZeroAlignment
from .textparse import Lexicon, ParsedCaption, parse

DEFAULT_BETA = 2.0


@dataclass(frozen=True)
class BoostConfig:
    beta: float = DEFAULT_BETA
    cue_lexicon_override: Optional[str] = None

    def __post_init__(self):
        check_positive(self.beta, "beta")

    @property
    def strict_boost(self) -> bool:
        return self.beta > 1


@dataclass(frozen=True)
class MergedSequence:
    rows: np.ndarray
    spans: tuple
    weights: tuple

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def to_dict(self) -> dict:
        return {
            "rows": self.rows.tolist(),
            "spans": [list(s) for s in self.spans],
            "weights": [w.tolist() for w in self.weights],
        }


@dataclass(frozen=True)
class AmplificationReport:
    s_single: float
    s_merge: float
    bound_factor: float
    n: int
    m: int
    beta: float

    @property
    def ratio(self) -> float:
        return self.s_merge / self.s_single

    @property
    def holds(self) -> bool:
        return self.ratio >= self.bound_factor - 1e-9


def boost_logits(parsed: ParsedCaption, beta: float) -> list:
    """Per-phrase arrays of ``log(gamma_j)``."""
    log_beta = np.log(beta)
    out = []
    for phrase in parsed.phrases:
        logits = np.zeros(len(phrase.token_indices))
        if phrase.is_negated:
            for k, i in enumerate(phrase.token_indices):
                if parsed.tokens[i].is_cue:
                    logits[k] = log_beta
        out.append(logits)
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


def merge(parsed: ParsedCaption, emb, cfg: BoostConfig = BoostConfig()) -> MergedSequence:
    """Collapse each phrase to one boosted, weighted-average embedding."""
    beta = check_positive(cfg.beta, "beta")
    emb = check_embeddings(emb, n_rows=parsed.n)
    src = emb.astype(np.float64, copy=False)

    rows = np.empty((parsed.m, src.shape[1]), dtype=np.float64)
    weights = []
    for r, (phrase, logits) in enumerate(zip(parsed.phrases, boost_logits(parsed, beta))):
        w = _softmax(logits)
        rows[r] = w @ src[list(phrase.token_indices)]
        weights.append(w)
    return MergedSequence(rows.astype(emb.dtype, copy=False),
                          tuple(p.token_indices for p in parsed.phrases), tuple(weights))


def mean_pool(seq) -> np.ndarray:
    """Arithmetic mean of the rows of a merged sequence or embedding matrix."""
    rows = seq.rows if isinstance(seq, MergedSequence) else np.asarray(seq, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise EmptySequence("cannot pool an empty sequence")
    return rows.astype(np.float64).mean(axis=0)


def amplification_check(parsed: ParsedCaption, emb, cfg: BoostConfig, probe) -> AmplificationReport:
    """Compare the cue's share of a linear probe before and after merging.

    ``s_single`` is the cue's contribution under plain mean pooling over all
    ``n`` tokens; ``s_merge`` is the negated phrase's contribution after
    merging into ``m`` rows. The guaranteed lower bound on their ratio,
    ``beta/(beta+1) * n/m``, needs the negated phrase to be one cue plus one
    content token and the content token to have a non-negative probe score.
    """
    emb = check_embeddings(emb, n_rows=parsed.n).astype(np.float64)
    probe = check_vector(probe, emb.shape[1], name="probe")
    negated = [(r, p) for r, p in enumerate(parsed.phrases) if p.is_negated]
    if not negated:
        raise NoCue("caption has no negated phrase")
    if len(negated) > 1:
        raise BoundPreconditionError(f"expected exactly one negated phrase, found {len(negated)}")
    row, phrase = negated[0]
    cues = [i for i in phrase.token_indices if parsed.tokens[i].is_cue]
    if len(phrase.token_indices) != 2 or len(cues) != 1:
        raise BoundPreconditionError("negated phrase must be exactly one cue and one content token")

    align = float(probe @ emb[cues[0]])
    if align <= 0:
        raise ZeroAlignment(f"<probe, cue> = {align} must be positive")

    merged = merge(parsed, emb, cfg)
    n, m, beta = parsed.n, parsed.m, float(cfg.beta)
    return AmplificationReport(
        s_single=align / n,
        s_merge=float(probe @ merged.rows[row]) / m,
        bound_factor=(beta / (beta + 1.0)) * (n / m),
        n=n, m=m, beta=beta,
    )


class NegToMeMerger(BaseEstimator, TransformerMixin):
    """Transformer applying :func:`merge` to ``(caption, embeddings)`` pairs.

    ``X`` is an iterable of pairs whose first element is either a raw caption
    string or an already parsed :class:`ParsedCaption`. ``transform`` returns
    one :class:`MergedSequence` per pair.
    """

    def __init__(self, beta=DEFAULT_BETA, cue_lexicon=None):
        self.beta = beta
        self.cue_lexicon = cue_lexicon

    def fit(self, X=None, y=None):
        check_positive(self.beta, "beta")
        self.lexicon_ = Lexicon.load(cues=self.cue_lexicon)
        return self

    def transform(self, X):
        if not hasattr(self, "lexicon_"):
            self.fit()
        cfg = BoostConfig(self.beta, self.cue_lexicon)
        out = []
        for caption, emb in X:
            parsed = caption if isinstance(caption, ParsedCaption) else parse(caption, self.lexicon_)
            out.append(merge(parsed, emb, cfg))
        return out
