"""Caption tokenization, word-class tagging, negation cue detection and
finite-state phrase chunking.

The chunker binds every negation cue to the content it modifies so that a
caption such as ``"cat not lying"`` becomes the phrases ``{cat}`` and
``{not, lying}``. Everything here is a pure function of the caption and the
lexicons, so outputs are stable enough for golden tests.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import EmptyCaption

NOUN, VERB, ADJ, DET, ADP, NEG, OTHER = "NOUN", "VERB", "ADJ", "DET", "ADP", "NEG", "OTHER"
WORD_CLASSES = (NOUN, VERB, ADJ, DET, ADP, NEG, OTHER)
CONTENT_CLASSES = frozenset({NOUN, VERB, ADJ})

WORD_CUE, CONTRACTION, UN_PREFIX = "word-cue", "contraction", "un-prefix"

_APOSTROPHES = str.maketrans({"’": "'", "‘": "'", "ʼ": "'"})
# "isn't" -> "is" + "n't"; other clitics ("'s") split off as their own token.
_TOKEN_RE = re.compile(r"[^\W_]+?(?=n't\b)|n't\b|[^\W_]+|'[^\W_]+|[^\w\s]|_")
_SPLIT_WORDS = {"cannot": ("can", "not")}


@dataclass(frozen=True)
class Token:
    surface: str
    index: int
    tag: str = OTHER
    cue_kind: Optional[str] = None

    @property
    def is_cue(self) -> bool:
        return self.cue_kind is not None


@dataclass(frozen=True)
class Phrase:
    token_indices: tuple
    is_negated: bool
    head_index: int
    kind: str = "single"

    def __len__(self):
        return len(self.token_indices)


@dataclass(frozen=True)
class ParsedCaption:
    raw: str
    tokens: tuple
    phrases: tuple
    cue_count: int = 0

    @property
    def n(self) -> int:
        return len(self.tokens)

    @property
    def m(self) -> int:
        return len(self.phrases)

    def negated_phrases(self):
        return [p for p in self.phrases if p.is_negated]

    def to_dict(self) -> dict:
        return {
            "raw": self.raw,
            "tokens": [{"surface": t.surface, "tag": t.tag, "cue_kind": t.cue_kind} for t in self.tokens],
            "phrases": [{"indices": list(p.token_indices), "is_negated": p.is_negated} for p in self.phrases],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ParsedCaption":
        tokens = tuple(
            Token(t["surface"], i, t.get("tag", OTHER), t.get("cue_kind"))
            for i, t in enumerate(obj["tokens"])
        )
        phrases = []
        for p in obj["phrases"]:
            idx = tuple(int(i) for i in p["indices"])
            phrases.append(Phrase(idx, bool(p["is_negated"]), _head_of(idx, tokens)))
        return cls(obj["raw"], tokens, tuple(phrases), sum(t.is_cue for t in tokens))


# ---------------------------------------------------------------- lexicons

def read_lexicon(source) -> frozenset:
    """Read a one-term-per-line lexicon file; ``#`` starts a comment."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    terms = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            terms.add(line)
    return frozenset(terms)


@lru_cache(maxsize=None)
def _bundled(name: str) -> frozenset:
    with resources.files("negground").joinpath("data", name).open("r", encoding="utf-8") as fh:
        return read_lexicon(fh)


@dataclass(frozen=True)
class Lexicon:
    """All word lists used by the tagger and cue detector."""

    cues: frozenset = field(default_factory=lambda: _bundled("cues.txt"))
    un_exclusions: frozenset = field(default_factory=lambda: _bundled("un_exclusions.txt"))
    un_stems: frozenset = field(default_factory=lambda: _bundled("un_stems.txt"))
    det: frozenset = field(default_factory=lambda: _bundled("det.txt"))
    adp: frozenset = field(default_factory=lambda: _bundled("adp.txt"))
    other: frozenset = field(default_factory=lambda: _bundled("other.txt"))
    verb: frozenset = field(default_factory=lambda: _bundled("verb.txt"))
    adj: frozenset = field(default_factory=lambda: _bundled("adj.txt"))
    noun: frozenset = field(default_factory=lambda: _bundled("noun.txt"))

    @classmethod
    def load(cls, cues=None, un_exclusions=None, un_stems=None) -> "Lexicon":
        """Bundled lexicons, optionally overriding the cue-related files by path."""
        kwargs = {}
        if cues is not None:
            kwargs["cues"] = read_lexicon(cues)
        if un_exclusions is not None:
            kwargs["un_exclusions"] = read_lexicon(un_exclusions)
        if un_stems is not None:
            kwargs["un_stems"] = read_lexicon(un_stems)
        return cls(**kwargs)

    def is_excluded(self, word: str) -> bool:
        if word in self.un_exclusions:
            return True
        return any(e.endswith("*") and word.startswith(e[:-1]) for e in self.un_exclusions)


@lru_cache(maxsize=1)
def default_lexicon() -> Lexicon:
    return Lexicon()


# -------------------------------------------------------------- operations

def tokenize(caption: str) -> list:
    """Lowercase and split a caption; punctuation and ``n't`` become tokens."""
    if caption is None or not caption.strip():
        raise EmptyCaption("caption is blank")
    text = caption.strip().lower().translate(_APOSTROPHES)
    surfaces = []
    for piece in _TOKEN_RE.findall(text):
        surfaces.extend(_SPLIT_WORDS.get(piece, (piece,)))
    return [Token(s, i) for i, s in enumerate(surfaces)]


def is_un_prefix_cue(word: str, lexicon: Lexicon = None) -> bool:
    lexicon = lexicon or default_lexicon()
    if not word.startswith("un") or lexicon.is_excluded(word):
        return False
    stem = word[2:]
    if len(stem) < 3:
        return False
    return stem in lexicon.un_stems or stem.endswith(("ed", "ing", "able"))


def detect_cues(tokens: Sequence[Token], lexicon: Lexicon = None) -> list:
    """Return tokens with ``cue_kind`` set on every negation cue.

    Word cues are tagged NEG; un-prefixed words keep their content tag and
    only carry ``cue_kind="un-prefix"``.
    """
    lexicon = lexicon or default_lexicon()
    out = []
    for tok in tokens:
        s = tok.surface
        if s in lexicon.cues:
            kind = CONTRACTION if s == "n't" else WORD_CUE
            out.append(replace(tok, tag=NEG, cue_kind=kind))
        elif is_un_prefix_cue(s, lexicon):
            out.append(replace(tok, cue_kind=UN_PREFIX))
        else:
            out.append(replace(tok, cue_kind=None))
    return out


def _word_class(word: str, lexicon: Lexicon) -> str:
    if word in lexicon.cues:
        return NEG
    if not any(ch.isalnum() for ch in word):
        return OTHER
    if word.isdigit():
        return DET
    if word.startswith("'"):
        return OTHER
    for lex, cls in ((lexicon.det, DET), (lexicon.adp, ADP), (lexicon.other, OTHER),
                     (lexicon.noun, NOUN), (lexicon.adj, ADJ), (lexicon.verb, VERB)):
        if word in lex:
            return cls
    if is_un_prefix_cue(word, lexicon):
        # negated participles / adjectives ("unpeeled", "unlit") modify nouns
        return ADJ
    if len(word) > 3 and word.endswith(("ing", "ed")):
        return VERB
    if len(word) > 4 and word.endswith(("ful", "less", "ous", "ive", "able", "ible", "ish")):
        return ADJ
    return NOUN


def tag(tokens: Sequence[Token], lexicon: Lexicon = None) -> list:
    """Fill word-class tags from the closed-class lexicons and suffix rules."""
    lexicon = lexicon or default_lexicon()
    return [replace(t, tag=_word_class(t.surface, lexicon)) for t in tokens]


# One letter per word class so the chunk grammar can run as a regex over tags.
_TAG_LETTER = {NOUN: "N", VERB: "V", ADJ: "J", DET: "D", ADP: "A", NEG: "G", OTHER: "O"}
_CHUNK_RE = re.compile(
    r"(?P<negp>G[DAJ]*(?:N+|V|J))"
    r"|(?P<np>D?J*N+)"
    r"|(?P<vp>V+)"
)


def _head_of(indices: Sequence[int], tokens: Sequence[Token]) -> int:
    for wanted in (NOUN, VERB, ADJ):
        for i in reversed(indices):
            if tokens[i].tag == wanted:
                return i
    return indices[-1]


def chunk(tokens: Sequence[Token], raw: str = "") -> ParsedCaption:
    """Group tagged tokens into contiguous phrases, leftmost-longest.

    Grammar: NegP := NEG (DET|ADP|ADJ)* (NOUN+|VERB|ADJ); NP := DET? ADJ* NOUN+;
    VP := VERB+. Anything left over becomes a singleton phrase.
    """
    tokens = tuple(tokens)
    letters = "".join(_TAG_LETTER.get(t.tag, "O") for t in tokens)
    phrases = []
    pos = 0
    while pos < len(tokens):
        m = _CHUNK_RE.match(letters, pos)
        end = m.end() if m else pos + 1
        kind = m.lastgroup if m else "single"
        idx = tuple(range(pos, end))
        phrases.append(Phrase(idx, any(tokens[i].is_cue for i in idx), _head_of(idx, tokens), kind))
        pos = end
    return ParsedCaption(raw, tokens, tuple(phrases), sum(t.is_cue for t in tokens))


def parse(caption: str, lexicon: Lexicon = None) -> ParsedCaption:
    """tokenize -> tag -> detect_cues -> chunk."""
    lexicon = lexicon or default_lexicon()
    tokens = detect_cues(tag(tokenize(caption), lexicon), lexicon)
    return chunk(tokens, raw=caption)


class PhraseChunker(BaseEstimator, TransformerMixin):
    """Transformer turning raw captions into :class:`ParsedCaption` objects.

    Parameters
    ----------
    cue_lexicon, un_exclusions, un_stems : path-like, optional
        Override files for the bundled cue lexicons.
    """

    def __init__(self, cue_lexicon=None, un_exclusions=None, un_stems=None):
        self.cue_lexicon = cue_lexicon
        self.un_exclusions = un_exclusions
        self.un_stems = un_stems

    def fit(self, X=None, y=None):
        self.lexicon_ = Lexicon.load(self.cue_lexicon, self.un_exclusions, self.un_stems)
        return self

    def transform(self, X: Iterable[str]) -> list:
        lexicon = getattr(self, "lexicon_", None) or Lexicon.load(
            self.cue_lexicon, self.un_exclusions, self.un_stems)
        return [parse(c, lexicon) for c in X]
