import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chordseq.annotation import SEGMENT_SECONDS, Segment, Timeline, slice_segment
from chordseq.chords import NO_CHORD, UNKNOWN, VOCABULARY, parse_chord_label
from chordseq.errors import DecodeError, TokenizationError
from chordseq.tokenizer import (
    EOS,
    PAD,
    SOS,
    GrammarState,
    Kind,
    advance,
    augment_pitch_shift,
    augment_random_crop,
    decode,
    encode,
    get_token_set,
    next_token_mask,
    transpose_tokens,
)

C = parse_chord_label
M, S = get_token_set("merge"), get_token_set("split")


def seg(*rows):
    return Segment(Timeline.from_intervals(rows, SEGMENT_SECONDS))


def test_token_counts():
    assert len(M) == 430
    assert len(S) == 289
    assert len(set(M.names)) == 430
    assert len(set(S.names)) == 289


def test_block_layout():
    assert (PAD, SOS, EOS) == (0, 1, 2)
    assert M.time(0) == 3 and M.time(256) == 259
    assert M.chord(0) == 260 and M.chord(169) == 429
    assert S.root(0) == 260 and S.root(12) == 272
    assert S.quality(0) == 273 and S.quality(15) == 288
    assert M.fingerprint != S.fingerprint


def test_encode_merge_example():
    s = seg((0.0, 1.2, C("C:maj")), (1.2, 25.6, C("G:7")))
    ids = encode(s, "merge")
    assert [M.name(i) for i in ids] == ["<SOS>", "T0", "C:C:maj", "T12", "C:G:7", "<EOS>"]


def test_encode_split_example():
    s = seg((0.0, 1.2, C("C:maj")), (1.2, 25.6, C("G:7")))
    ids = encode(s, "split")
    assert [S.name(i) for i in ids] == ["<SOS>", "T0", "R:C", "Q:maj", "T12", "R:G", "Q:7", "<EOS>"]


def test_encode_no_chord_and_unknown_split():
    assert encode(seg((0.0, 25.6, NO_CHORD)), "split") == [SOS, S.time(0), S.root(12), S.quality(14), EOS]
    assert encode(seg((0.0, 25.6, UNKNOWN)), "split") == [SOS, S.time(0), S.root(12), S.quality(15), EOS]


def test_encode_requires_grid():
    with pytest.raises(TokenizationError):
        encode(seg((0.0, 1.25, C("C:maj")), (1.25, 25.6, C("G:7"))), "merge")


def test_decode_empty_sequence():
    tl = decode([SOS, EOS], "merge")
    assert tl.intervals == ((0.0, 25.6, NO_CHORD),)


def test_decode_extends_last_chord():
    ids = [SOS, M.time(0), M.chord(168), M.time(250), M.chord(0), EOS]
    tl = decode(ids, "merge")
    assert tl.intervals[-1] == (25.0, 25.6, C("C:maj"))


def test_decode_drops_zero_length_final_chord():
    ids = [SOS, M.time(0), M.chord(0), M.time(256), M.chord(5), EOS]
    assert decode(ids, "merge").intervals == ((0.0, 25.6, C("C:maj")),)


def test_decode_allows_trailing_pad():
    ids = [SOS, M.time(0), M.chord(0), EOS, PAD, PAD]
    assert decode(ids, "merge").intervals == ((0.0, 25.6, C("C:maj")),)


@pytest.mark.parametrize(
    "ids, position",
    [
        ([M.time(0), M.chord(0), EOS], 0),
        ([SOS, M.chord(0), EOS], 1),
        ([SOS, M.time(5), M.chord(0), M.time(5), M.chord(1), EOS], 3),
        ([SOS, M.time(5), M.chord(0), EOS, M.time(9)], 4),
        ([SOS, M.time(5), EOS], 2),
        ([SOS, M.time(5)], 2),
    ],
)
def test_strict_decode_errors(ids, position):
    with pytest.raises(DecodeError) as info:
        decode(ids, "merge")
    assert info.value.position == position


def test_lenient_decode_truncates():
    ids = [SOS, M.time(0), M.chord(0), M.time(10), M.chord(1), M.chord(2), M.time(20), M.chord(3)]
    tl = decode(ids, "merge", strict=False)
    assert tl.intervals == ((0.0, 1.0, C("C:maj")), (1.0, 25.6, C("C:min")))


def test_split_inconsistent_pair_rejected():
    with pytest.raises(DecodeError):
        decode([SOS, S.time(0), S.root(3), S.quality(14), EOS], "split")
    with pytest.raises(DecodeError):
        decode([SOS, S.time(0), S.root(12), S.quality(0), EOS], "split")


def test_mask_after_sos_merge():
    mask = next_token_mask(GrammarState(), "merge")
    assert mask.sum() == 257
    assert mask[M.time(0)] and mask[M.time(256)]


def test_mask_after_time_split():
    mask = next_token_mask(GrammarState(Kind.TIME, 12), "split")
    assert mask.sum() == 13
    assert all(S.kind(i) is Kind.ROOT for i in np.nonzero(mask)[0])


def test_mask_after_chord_near_end():
    mask = next_token_mask(GrammarState(Kind.CHORD, 255), "merge")
    assert mask[M.time(256)] and mask[EOS]
    assert mask.sum() == 2
    assert not mask[M.time(255)] and not mask[M.time(100)]


def test_mask_after_root_split():
    pitched = next_token_mask(GrammarState(Kind.ROOT, 3, 4), "split")
    assert pitched.sum() == 14
    shared = next_token_mask(GrammarState(Kind.ROOT, 3, 12), "split")
    assert np.nonzero(shared)[0].tolist() == [S.quality(14), S.quality(15)]
    generic = next_token_mask(GrammarState(Kind.ROOT, 3), "split")
    assert generic.sum() == 16


def test_mask_after_quality_and_done():
    mask = next_token_mask(GrammarState(Kind.QUALITY, 0), "split")
    assert mask[EOS] and mask.sum() == 256 + 1
    done = next_token_mask(GrammarState(Kind.EOS, 4), "split")
    assert np.nonzero(done)[0].tolist() == [PAD]


def test_sos_and_pad_never_generable():
    for rep in ("merge", "split"):
        tokens = get_token_set(rep)
        kinds = [Kind.SOS, Kind.TIME, Kind.QUALITY] if rep == "split" else [Kind.SOS, Kind.TIME, Kind.CHORD]
        for k in kinds:
            mask = next_token_mask(GrammarState(k, 3), tokens)
            assert not mask[SOS] and not mask[PAD]


def test_pitch_shift_augment():
    s = seg((0.0, 3.0, C("C:maj")), (3.0, 25.6, NO_CHORD))
    assert augment_pitch_shift(s, 0) == s
    shifted = augment_pitch_shift(s, 2)
    assert shifted.timeline.intervals[0] == (0.0, 3.0, C("D:maj"))
    assert augment_pitch_shift(shifted, -2) == s


def test_random_crop():
    song = Timeline.from_intervals([(0, 20, C("C:maj")), (20, 30.05, C("G:maj")), (30.05, 60, C("A:min"))])

    class Zero:
        def integers(self, lo, hi):
            return 0

    assert augment_random_crop(song, Zero()) == slice_segment(song, 0)
    rng = np.random.default_rng(3)
    for _ in range(50):
        s = augment_random_crop(song, rng)
        assert 0 <= s.start <= 60 - 25.6 + 1e-9
        assert abs(s.start * 10 - round(s.start * 10)) < 1e-6
    short = Timeline.from_intervals([(0, 10, C("C:maj"))])
    s = augment_random_crop(short, rng)
    assert s.start == 0.0
    assert s.timeline.intervals == ((0.0, 10.0, C("C:maj")), (10.0, 25.6, NO_CHORD))


@st.composite
def segments(draw):
    k = draw(st.lists(st.integers(1, 255), max_size=30, unique=True))
    onsets = [0] + sorted(k)
    labels = draw(st.lists(st.sampled_from(VOCABULARY), min_size=len(onsets), max_size=len(onsets)))
    bounds = [round(o * 0.1, 9) for o in onsets] + [SEGMENT_SECONDS]
    return Segment(Timeline.from_intervals(zip(bounds[:-1], bounds[1:], labels), SEGMENT_SECONDS))


@settings(max_examples=200)
@given(segments(), st.sampled_from(["merge", "split"]))
def test_round_trip(s, rep):
    ids = encode(s, rep)
    assert decode(ids, rep) == s.timeline
    tokens = get_token_set(rep)
    assert len(ids) <= tokens.event_length * 256 + 2


@settings(max_examples=100)
@given(segments(), st.sampled_from(["merge", "split"]), st.integers(-11, 11))
def test_transposition_commutes(s, rep, k):
    assert encode(augment_pitch_shift(s, k), rep) == transpose_tokens(encode(s, rep), k, rep)


@settings(max_examples=100)
@given(segments(), st.sampled_from(["merge", "split"]))
def test_encoded_sequences_are_grammatical(s, rep):
    tokens = get_token_set(rep)
    state = GrammarState()
    for tok in encode(s, rep)[1:]:
        assert next_token_mask(state, tokens)[tok]
        state = advance(state, tok, tokens)
    assert state.done
