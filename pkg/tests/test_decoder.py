import random
import string

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reference import assemble_reference, edit_distance, filter_reference, spell_reference

from evbraille.events import EventStream, FrameTensor
from evbraille.decoder import (
    DecoderConfig,
    DecoderError,
    Detection,
    Vocabulary,
    assemble_words,
    decode_events,
    levenshtein,
    read_words,
    spell_correct,
    stream_decode,
    temporal_filter,
)
from evbraille.models.checkpoint import Checkpoint
from evbraille.models.nets import ArchConfig, build_model


def dets(times, chars="R", conf=0.9):
    chars = chars * len(times) if len(chars) == 1 else chars
    return [Detection(float(t), c, conf) for t, c in zip(times, chars)]


def test_filter_examples():
    assert temporal_filter(dets(range(0, 250, 50))) == [("R", 0.0)]
    assert temporal_filter(dets(range(0, 150, 50))) == []
    assert temporal_filter(dets(range(0, 320, 80))) == []


def test_filter_majority_and_ties():
    assert temporal_filter(dets([0, 10, 20, 30, 40], "RRPRP")) == [("R", 0.0)]
    tie = [Detection(0, "P", 0.6), Detection(10, "R", 0.9), Detection(20, "P", 0.6), Detection(30, "R", 0.9)]
    assert temporal_filter(tie) == [("R", 0.0)]


def test_assemble_examples():
    assert assemble_words([("A", 0), ("B", 400), ("C", 800)]) == ["ABC"]
    assert assemble_words([("A", 0), ("B", 1200)]) == ["A", "B"]
    assert assemble_words([]) == []


def random_detections(rng, n):
    t, out = 0.0, []
    for _ in range(n):
        t += float(rng.choice([10, 10, 10, 20, 60, 69.9, 70, 80, 300, 1200]))
        out.append(Detection(t, rng.choice(list("ABCR")), float(rng.choice([0.3, 0.5, 0.9, 1.0]))))
    return out


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 80), k=st.integers(1, 6))
def test_filter_and_assemble_match_reference(seed, n, k):
    rng = random.Random(seed)
    d = random_detections(rng, n)
    cfg = DecoderConfig(min_consecutive=k)
    reg = temporal_filter(d, cfg)
    assert reg == filter_reference(d, k)
    assert assemble_words(reg, cfg) == assemble_reference(reg)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 60), m=st.integers(1, 30))
def test_appending_later_runs_keeps_registrations(seed, n, m):
    rng = random.Random(seed)
    first = random_detections(rng, n)
    start = (first[-1].t if first else 0.0) + 70.0
    later = [Detection(start + d.t, d.char, d.confidence) for d in random_detections(rng, m)]
    before = temporal_filter(first)
    after = temporal_filter(first + later)
    assert after[: len(before)] == before


VOCAB = Vocabulary(("RIGHT", "LEFT", "LIGHT", "NIGHT", "OPEN", "EXIT", "HOT", "HAT", "HELP"))


def test_spell_examples():
    assert spell_correct("RIGHT", VOCAB) == "RIGHT"
    assert spell_correct("RIGHI", VOCAB) == "RIGHT"
    assert spell_correct("XQZW", VOCAB) == "XQZW"
    assert spell_correct("HIT", VOCAB) == "HAT"  # distance 1 to HAT and HOT; alphabetical tie-break
    with pytest.raises(ValueError):
        spell_correct("A", Vocabulary(()))


def test_bundled_vocabulary_covers_board_words():
    v = Vocabulary.bundled()
    assert len(v) >= 1000
    for w in "RIGHT LEFT OPEN EXIT STOP PUSH PULL HELP HOT".split():
        assert w in v


@settings(max_examples=300, deadline=None)
@given(a=st.text("ABCD", max_size=7), b=st.text("ABCD", max_size=7))
def test_levenshtein_matches_reference(a, b):
    d = edit_distance(a, b)
    assert levenshtein(a, b) == d
    assert levenshtein(a, b, bound=2) == min(d, 3)


@settings(max_examples=200, deadline=None)
@given(word=st.text("EGHILNORTX", min_size=1, max_size=7))
def test_spell_matches_reference(word):
    assert spell_correct(word, VOCAB) == spell_reference(word, VOCAB.words)


def test_spell_is_stateless():
    rng = random.Random(0)
    vocabs = [VOCAB, Vocabulary.bundled(), Vocabulary(("CAT", "CART", "CARD"))]
    queries = ["".join(rng.choice(string.ascii_uppercase[:8]) for _ in range(rng.randint(1, 6))) for _ in range(60)]
    queries += ["RIGHI", "HLP", "CAR", "OPEM"]
    expected = {(q, i): spell_correct(q, v) for q in queries for i, v in enumerate(vocabs)}
    for _ in range(5):
        calls = list(expected)
        rng.shuffle(calls)
        for q, i in calls:
            assert spell_correct(q, vocabs[i]) == expected[(q, i)]


def test_read_words_report():
    d = dets(range(0, 50, 10), "R") + dets(range(400, 450, 10), "I") + dets(range(2000, 2050, 10), "X")
    rep = read_words(d, vocab=VOCAB)
    assert rep.words_raw == ["RI", "X"]
    assert rep.to_dict()["registered"][0] == {"char": "R", "t": 0.0}
    assert rep.text() == " ".join(rep.words_corrected)


def test_config_validation():
    with pytest.raises(ValueError):
        DecoderConfig(stride=300)
    with pytest.raises(ValueError):
        DecoderConfig(segmenter_threshold=1.5)
    with pytest.raises(ValueError):
        Detection(0, "A", 0.0)


def _nets():
    seg = Checkpoint.from_model(build_model(ArchConfig(num_classes=2)), {"mode": "Norm"})
    cls = Checkpoint.from_model(build_model(ArchConfig()), {"mode": "Norm"})
    return seg, cls


def test_background_stream_has_no_detections():
    seg, cls = _nets()
    frames = FrameTensor(np.zeros((100, 2, 120, 160), dtype=np.int32))
    assert stream_decode(frames, seg, cls) == []
    assert decode_events(EventStream.empty(duration_us=2_000_000), seg, cls) == []


def test_checkpoint_mismatch_is_an_error():
    seg, cls = _nets()
    frames = FrameTensor(np.zeros((30, 2, 120, 160), dtype=np.int32))
    with pytest.raises(DecoderError):
        stream_decode(frames, cls, seg)
    with pytest.raises(DecoderError):
        stream_decode(frames, seg, cls, DecoderConfig(window=150))


def test_detections_are_time_ordered():
    seg, cls = _nets()
    rng = np.random.default_rng(0)
    c = np.zeros((80, 2, 120, 160), dtype=np.int32)
    c[:, :, 50:70, 30:60] = rng.integers(0, 2, (80, 2, 20, 30))
    out = stream_decode(FrameTensor(c), seg, cls, DecoderConfig(segmenter_threshold=0.0))
    assert [d.t for d in out] == sorted(d.t for d in out)
    assert len(out) == 80
