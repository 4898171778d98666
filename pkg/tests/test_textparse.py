import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from negground.exceptions import EmptyCaption
from negground.textparse import (ADJ, ADP, CONTENT_CLASSES, DET, NEG, NOUN, OTHER, VERB, Lexicon,
                                 ParsedCaption, PhraseChunker, Token, chunk, detect_cues, parse,
                                 tag, tokenize)

LETTER = {"N": NOUN, "V": VERB, "J": ADJ, "D": DET, "A": ADP, "G": NEG, "O": OTHER}


def surfaces(caption):
    return [t.surface for t in tokenize(caption)]


def groups(parsed):
    return [[parsed.tokens[i].surface for i in p.token_indices] for p in parsed.phrases]


# ---------------------------------------------------------------- examples

def test_tokenize_lowercases_and_finds_cue():
    p = parse("A man without a hat")
    assert surfaces("A man without a hat") == ["a", "man", "without", "a", "hat"]
    assert [t.index for t in p.tokens if t.is_cue] == [2]


def test_contraction_split():
    toks = detect_cues(tag(tokenize("isn't")))
    assert [t.surface for t in toks] == ["is", "n't"]
    assert toks[1].cue_kind == "contraction"
    assert toks[0].cue_kind is None


@pytest.mark.parametrize("blank", ["", "   ", "\t\n"])
def test_blank_caption(blank):
    with pytest.raises(EmptyCaption):
        tokenize(blank)


def test_double_negation_cues():
    toks = detect_cues(tag(tokenize("banana that is not unpeeled")))
    cues = [(t.surface, t.cue_kind) for t in toks if t.is_cue]
    assert cues == [("not", "word-cue"), ("unpeeled", "un-prefix")]


def test_exclusion_list_blocks_union():
    assert not any(t.is_cue for t in detect_cues(tag(tokenize("a red union"))))


def test_single_explicit_cue():
    toks = detect_cues(tag(tokenize("no dog")))
    assert [t.index for t in toks if t.is_cue] == [0]


@pytest.mark.parametrize("words, tags", [
    ("cat not lying", [NOUN, NEG, VERB]),
    ("without", [NEG]),
    ("skateboard", [NOUN]),
])
def test_tag_examples(words, tags):
    assert [t.tag for t in tag(tokenize(words))] == tags


def test_chunk_cat_not_lying():
    p = parse("cat not lying")
    assert groups(p) == [["cat"], ["not", "lying"]]
    assert [ph.is_negated for ph in p.phrases] == [False, True]


def test_chunk_man_without_hat():
    assert groups(parse("a man without a hat")) == [["a", "man"], ["without", "a", "hat"]]


def test_single_token():
    p = parse("dog")
    assert groups(p) == [["dog"]] and p.m == p.n == 1


def test_cannot_and_curly_apostrophe():
    assert surfaces("He cannot swim") == ["he", "can", "not", "swim"]
    assert surfaces("It isn’t red") == ["it", "is", "n't", "red"]


def test_un_prefix_word_binds_into_np():
    p = parse("an unpeeled banana")
    assert groups(p) == [["an", "unpeeled", "banana"]]
    assert p.phrases[0].is_negated and p.cue_count == 1


@pytest.mark.parametrize("word", ["under", "understand", "unique", "unit", "uniform", "universe"])
def test_un_exclusions(word):
    assert not detect_cues(tag(tokenize(word)))[0].is_cue


def test_custom_cue_lexicon(tmp_path):
    path = tmp_path / "cues.txt"
    path.write_text("# only one cue\nlacking\n", encoding="utf-8")
    lex = Lexicon.load(cues=path)
    p = parse("a dog lacking a collar", lex)
    assert [t.surface for t in p.tokens if t.is_cue] == ["lacking"]
    assert not any(t.is_cue for t in parse("no dog", lex).tokens)


def test_roundtrip_dict():
    p = parse("A woman isn't holding an umbrella.")
    assert ParsedCaption.from_dict(p.to_dict()).to_dict() == p.to_dict()


def test_phrase_chunker_estimator():
    est = PhraseChunker()
    out = est.fit_transform(["cat not lying", "dog"])
    assert [x.m for x in out] == [2, 1]
    assert est.get_params() == {"cue_lexicon": None, "un_exclusions": None, "un_stems": None}


# ------------------------------------------- exhaustive reference chunker

def _is_np(seq):
    i = 1 if seq[:1] == "D" else 0
    while i < len(seq) and seq[i] == "J":
        i += 1
    rest = seq[i:]
    return len(rest) > 0 and set(rest) == {"N"}


def _is_negp(seq):
    if seq[:1] != "G":
        return False
    body = seq[1:]
    for k in range(len(body)):
        mid, tail = body[:k], body[k:]
        if set(mid) <= set("DAJ") and (set(tail) == {"N"} or tail in ("V", "J")):
            return True
    return False


def _is_vp(seq):
    return len(seq) > 0 and set(seq) == {"V"}


def reference_chunks(letters):
    """Leftmost-longest segmentation by trying every span explicitly."""
    out, i = [], 0
    while i < len(letters):
        best = i + 1
        for j in range(len(letters), i, -1):
            span = letters[i:j]
            if _is_negp(span) or _is_np(span) or _is_vp(span):
                best = j
                break
        out.append(tuple(range(i, best)))
        i = best
    return out


def _tokens(letters):
    return [Token(f"w{i}", i, LETTER[c], "word-cue" if c == "G" else None) for i, c in enumerate(letters)]


def test_chunker_matches_exhaustive_reference():
    for n in range(1, 7):
        for combo in itertools.product("NVJDAGO", repeat=n):
            letters = "".join(combo)
            got = [p.token_indices for p in chunk(_tokens(letters)).phrases]
            assert got == reference_chunks(letters), letters


# -------------------------------------------------------------- properties

WORDS = ["a", "the", "man", "dog", "red", "hat", "without", "not", "no", "never", "is", "n't",
         "lying", "on", "with", "unpeeled", "unlit", "union", "running", "two", ",", ".", "and",
         "isn't", "wooden", "table", "none", "nor"]

captions = st.lists(st.sampled_from(WORDS), min_size=1, max_size=12).map(" ".join)


@settings(max_examples=300, deadline=None)
@given(captions)
def test_phrases_partition_tokens(caption):
    p = parse(caption)
    flat = [i for ph in p.phrases for i in ph.token_indices]
    assert flat == list(range(p.n))
    assert 1 <= p.m <= p.n
    for ph in p.phrases:
        assert list(ph.token_indices) == list(range(ph.token_indices[0], ph.token_indices[-1] + 1))
        assert ph.is_negated == any(p.tokens[i].is_cue for i in ph.token_indices)


@settings(max_examples=300, deadline=None)
@given(captions)
def test_cue_binds_to_following_content(caption):
    p = parse(caption)
    owner = {i: ph for ph in p.phrases for i in ph.token_indices}
    for t in p.tokens:
        if t.tag == NEG and t.index + 1 < p.n and p.tokens[t.index + 1].tag in CONTENT_CLASSES:
            members = owner[t.index].token_indices
            assert any(p.tokens[i].tag in CONTENT_CLASSES for i in members)


@settings(max_examples=100, deadline=None)
@given(captions)
def test_parse_deterministic(caption):
    assert parse(caption).to_dict() == parse(caption).to_dict()
