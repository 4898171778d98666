import json
from collections import Counter
from itertools import combinations

import numpy as np
import pytest

from fakes import FakeWorld
from negground import formats
from negground.exceptions import (BoxOutOfBounds, ClientError, EmptyCorpus, ImageRejected,
                                  NoEligibleRegions, RetryExhausted, SchemaError, UnparsableAnswer)
from negground.metrics import Box, Detection
from negground.pipeline import builder
from negground.pipeline.builder import BuildConfig, build_dataset, check_record
from negground.pipeline.clients import CountingClient, MockClient, RecordingClient, request_key
from negground.pipeline.generation import (AlignmentVerdict, AttributeExtraction, CaptionPair,
                                           align, generate_pair, mentions, parse_answer,
                                           parse_response, verify_pair)
from negground.pipeline.posthoc import posthoc_coordinate_prompt, posthoc_crop_verify
from negground.pipeline.regions import ImageAnnotation, render_overlay, select_regions
from negground.pipeline.stats import corpus_stats
from oracles import count_tokens


def image(boxes, types=None, size=(100, 100), image_id="im"):
    types = types or ["thing"] * len(boxes)
    return ImageAnnotation.from_dict({
        "image_id": image_id, "width": size[0], "height": size[1],
        "regions": [{"box": b, "phrase": f"{t} {i}", "phrase_type": t}
                    for i, (b, t) in enumerate(zip(boxes, types))]})


class Scripted:
    """Client returning canned replies in order."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []

    def complete(self, request):
        self.requests.append(request)
        return self.replies[min(len(self.requests), len(self.replies)) - 1]


GOOD = json.dumps({
    "present_attributes": ["hat", "red shirt", "backpack"],
    "absent_attributes": ["umbrella", "glasses", "scarf"],
    "negative_caption": "A man without a hat.",
    "positive_caption": "A man with no umbrella.",
    "verification": {"negative": "hat visible", "positive": "no umbrella"},
})
NO_CUE = json.loads(GOOD) | {"negative_caption": "A man with a hat.", "positive_caption": "A man and an umbrella."}
OVERLAY = render_overlay((100, 100), [10, 10, 50, 50])


# -------------------------------------------------------------- regions

def test_six_instances_rejected():
    im = image([[i * 15, 0, i * 15 + 10, 10] for i in range(6)], ["person"] * 6)
    with pytest.raises(ImageRejected):
        select_regions(im, 0)


def test_five_instances_allowed():
    im = image([[i * 15, 0, i * 15 + 10, 10] for i in range(5)], ["person"] * 5)
    assert len(select_regions(im, 0)) == 2


def test_single_eligible_box():
    im = image([[0, 0, 100, 100], [10, 10, 20, 20]])
    picked = select_regions(im, 0)
    assert [r.box.as_list() for r in picked] == [[10, 10, 20, 20]]


def test_no_eligible_regions():
    with pytest.raises(NoEligibleRegions):
        select_regions(image([[0, 0, 100, 100]]), 0)
    with pytest.raises(NoEligibleRegions):
        select_regions(image([]), 0)


def test_selection_uniform_over_eligible():
    boxes = [[i * 12, 0, i * 12 + 10, 10] for i in range(5)] + [[0, 0, 95, 95]]
    im = image(boxes, ["a", "b", "a", "b", "c", "d"])
    rng = np.random.default_rng(2024)
    n = 10_000
    single, pairs = Counter(), Counter()
    for _ in range(n):
        picked = [r.phrase for r in select_regions(im, rng)]
        assert len(set(picked)) == 2
        single.update(picked)
        pairs[frozenset(picked)] += 1
    assert "d 5" not in single
    # each eligible box is in the pair with probability 2/5
    p = 2 / 5
    sigma = np.sqrt(n * p * (1 - p))
    for phrase in ("a 0", "b 1", "a 2", "b 3", "c 4"):
        assert abs(single[phrase] - n * p) <= 3 * sigma
    # all 10 unordered pairs equally likely; chi-square, 9 dof, 0.1% critical value
    expected = n / len(list(combinations(range(5), 2)))
    chi2 = sum((pairs[k] - expected) ** 2 / expected for k in pairs)
    assert len(pairs) == 10 and chi2 < 27.877


def test_overlay_corner_label_inside():
    ov = render_overlay((200, 200), [50, 50, 100, 100], [[0, 0, 30, 30]])
    (lab,) = ov.labels
    assert lab.letter == "A" and lab.inside and lab.anchor == (0.0, 0.0)


def test_overlay_no_siblings():
    assert render_overlay((200, 200), [50, 50, 100, 100]).labels == ()


def test_overlay_reading_order():
    sibs = [[120, 80, 150, 120], [10, 80, 40, 120], [60, 20, 90, 60]]
    ov = render_overlay((200, 200), [100, 150, 130, 190], sibs)
    assert ov.letters == ("A", "B", "C")
    order = sorted(range(3), key=lambda i: (sibs[i][1], sibs[i][0]))
    assert [lab.box.as_list() for lab in ov.labels] == [[float(v) for v in sibs[i]] for i in order]
    assert all(not lab.inside for lab in ov.labels)


def test_overlay_out_of_bounds():
    with pytest.raises(BoxOutOfBounds):
        render_overlay((100, 100), [50, 50, 120, 90])


# ------------------------------------------------------------ generation

def test_generate_golden():
    client = Scripted([GOOD])
    gen = generate_pair(client, "im", OVERLAY, "man", "person")
    assert len(gen.attributes.present) == 3 and len(gen.attributes.absent) == 3
    assert gen.pair.neg_attribute == "hat" and gen.pair.pos_attribute == "umbrella"
    assert gen.retries == 0 and gen.pair.cues == ("without", "no")


def test_missing_cue_triggers_retry():
    client = Scripted([json.dumps(NO_CUE), GOOD])
    gen = generate_pair(client, "im", OVERLAY, "man", "person")
    assert gen.retries == 1 and len(client.requests) == 2
    assert [r["attempt"] for r in client.requests] == [0, 1]
    assert "missing-cue" in client.requests[1]["messages"][0]["content"]


def test_schema_failures_exhaust_retries():
    client = CountingClient(Scripted(["not json"]))
    with pytest.raises(RetryExhausted) as info:
        generate_pair(client, "im", OVERLAY, "man", "person", retry_limit=3)
    assert client.calls("generate") == 4
    assert info.value.attempts == 4


def test_too_few_attributes_retries():
    few = json.loads(GOOD) | {"absent_attributes": ["umbrella", "glasses"]}
    client = Scripted([json.dumps(few), GOOD])
    assert generate_pair(client, "im", OVERLAY, "man", "person").retries == 1


def test_client_error_propagates():
    class Down:
        def complete(self, request):
            raise ClientError("connection refused")

    with pytest.raises(ClientError):
        generate_pair(Down(), "im", OVERLAY, "man", "person")


def test_parse_response_fenced_and_invalid():
    assert parse_response(f"```json\n{GOOD}\n```")["negative_caption"] == "A man without a hat."
    with pytest.raises(SchemaError):
        parse_response('{"present_attributes": []}')


# ---------------------------------------------------------- verification

ATTRS = AttributeExtraction(("hat", "red shirt", "backpack"), ("umbrella", "glasses", "scarf"))


def test_verify_man_without_hat_passes():
    v = verify_pair(CaptionPair("A man with no umbrella", "A man without a hat"), ATTRS)
    assert v.passed and v.neg_attribute == "hat"


def test_verify_missing_cue():
    v = verify_pair(CaptionPair("A man holding an umbrella", "A man without a hat"), ATTRS)
    assert not v.passed and v.reasons == ["c_pos: missing-cue"]


def test_verify_unknown_attribute():
    v = verify_pair(CaptionPair("A man without a bicycle", "A man without a hat"), ATTRS)
    assert v.reasons == ["c_pos: unknown-attribute"]


def test_verify_wrong_attribute():
    v = verify_pair(CaptionPair("A man without a hat", "A man without a hat"), ATTRS)
    assert v.reasons == ["c_pos: wrong-attribute"]


def test_mentions_normalization():
    assert mentions("Two men without HATS", "hat")
    assert mentions("no red shirts here", "red shirt")
    assert not mentions("a chat room", "hat")


# ------------------------------------------------------------- alignment

PAIR = CaptionPair("A man with no umbrella", "A man without a hat")


@pytest.mark.parametrize("replies, accepted", [
    (["target", "none"], True),
    (["B", "none"], False),
    (["target", "target"], False),
    (['{"answer": "target"}', "A"], True),
])
def test_align_verdicts(replies, accepted):
    ov = render_overlay((100, 100), [10, 10, 50, 50], [[60, 60, 80, 80], [60, 20, 80, 40]])
    client = Scripted(replies)
    verdict = align(client, "im", ov, PAIR)
    assert verdict.accepted is accepted and len(client.requests) == 2
    assert [r["role"] for r in client.requests] == ["pos", "neg"]


@pytest.mark.parametrize("text", ["maybe", "A and B", "Z", '{"answer": "target", "box": "A"}'])
def test_unparsable_answers(text):
    with pytest.raises(UnparsableAnswer):
        parse_answer(text, letters=("A", "B"))


def test_verdict_invariant_table():
    for pos in ("target", "none", "A"):
        for neg in ("target", "none", "A"):
            assert AlignmentVerdict(pos, neg).accepted == (pos == "target" and neg != "target")


# ------------------------------------------------------------- posthoc

DETS = [Detection(Box.of([i * 10, 0, i * 10 + 8, 8]), s, "q", "im")
        for i, s in enumerate([0.9, 0.3, 0.7, 0.5, 0.1])]


def test_crop_verify_call_counts():
    client = CountingClient(Scripted(["yes"]))
    kept = posthoc_crop_verify(DETS, "a dog without a leash", client, 3)
    assert client.calls() == 3
    assert [d.score for d in kept] == [0.9, 0.7, 0.5]


def test_crop_verify_all_no():
    assert posthoc_crop_verify(DETS, "q", Scripted(["no"]), 5) == []


def test_coordinate_single_call():
    client = CountingClient(Scripted(['{"inconsistent": []}']))
    assert len(posthoc_coordinate_prompt(DETS, "q", client, 4)) == 4
    assert client.calls() == 1
    assert posthoc_coordinate_prompt(DETS, "q", Scripted(["[0, 1, 2, 3, 4]"])) == []
    with pytest.raises(UnparsableAnswer):
        posthoc_coordinate_prompt(DETS, "q", Scripted(['{"inconsistent": [7]}']))


# --------------------------------------------------------------- clients

def test_mock_client_missing_fixture(tmp_path):
    with pytest.raises(ClientError):
        MockClient(tmp_path).complete({"task": "generate"})


def test_recording_then_replay(tmp_path):
    rec = RecordingClient(FakeWorld(), tmp_path)
    req = {"task": "crop_verify", "crop": [0, 0, 4, 4], "image": "x"}
    answer = rec.complete(req)
    rec.save()
    mock = MockClient(tmp_path)
    assert mock.complete(req) == answer
    assert mock.call_log[0].key == request_key(req)


# --------------------------------------------------------------- builder

def test_build_with_fake_world(fixtures):
    images = formats.read_jsonl(fixtures / "annotations.jsonl")
    world = CountingClient(FakeWorld())
    result = build_dataset(images, world, world, BuildConfig(seed=13, parallelism=4))
    assert result.summary["images_rejected"] == 2
    assert result.records and all(not check_record(r.to_dict()) for r in result.records)
    ids = [r.region.image_id for r in result.records]
    assert ids == sorted(ids)
    assert "img-02" not in ids


def test_build_parallelism_does_not_change_output(fixtures):
    images = formats.read_jsonl(fixtures / "annotations.jsonl")
    outs = []
    for par in (1, 8):
        res = build_dataset(images, FakeWorld(), FakeWorld(), BuildConfig(seed=5, parallelism=par))
        outs.append([r.to_json() for r in res.records])
    assert outs[0] == outs[1]


def test_split_truncates(fixtures, monkeypatch):
    monkeypatch.setitem(builder.SPLITS, "S", {"images": 3, "captions": 6})
    images = formats.read_jsonl(fixtures / "annotations.jsonl")
    res = build_dataset(images, FakeWorld(), FakeWorld(), BuildConfig(seed=1, split="S"))
    assert res.summary["images"] == 3
    assert all(r.split == "S" for r in res.records)


def test_check_record_flags_tampering(fixtures):
    rec = json.loads((fixtures / "corpora" / "built_records.jsonl").read_text().splitlines()[0])
    assert check_record(rec) == []
    rec["verdict"]["neg_match"] = "target"
    rec["captions"]["c_neg"] = "A man with a hat."
    assert len(check_record(rec)) >= 2


# ----------------------------------------------------------------- stats

def test_stats_definition():
    caps = ["not"] * 9 + ["word"] * 91
    assert corpus_stats(caps).negation_frequency == 9.0
    assert corpus_stats(["a dog on grass"]).negation_frequency == 0.0


def test_stats_empty():
    with pytest.raises(EmptyCorpus):
        corpus_stats([])
    with pytest.raises(EmptyCorpus):
        corpus_stats(["   "])


@pytest.mark.parametrize("name, un_words", [("engineered_9p3.txt", ["unlit", "unopened"]),
                                            ("affirmative.txt", [])])
def test_stats_against_counter(fixtures, name, un_words):
    caps = (fixtures / "corpora" / name).read_text().splitlines()
    stats = corpus_stats(caps)
    assert (stats.total_tokens, stats.cue_tokens) == count_tokens(caps, un_words)


def test_stats_on_records(fixtures):
    recs = formats.read_jsonl(fixtures / "corpora" / "built_records.jsonl")
    caps = [c for r in recs for c in (r["captions"]["c_neg"], r["captions"]["c_pos"])]
    stats = corpus_stats(recs)
    assert (stats.total_tokens, stats.cue_tokens) == count_tokens(caps)
    assert stats.n_captions == 2 * len(recs)
