import pytest
from hypothesis import given
from hypothesis import strategies as st

from chordseq.chords import (
    NO_CHORD,
    QUALITIES,
    REDUCTION_TABLE,
    TEMPLATES,
    UNKNOWN,
    VOCABULARY,
    Chord,
    chord_from_index,
    chord_to_pitch_classes,
    format_chord,
    parse_chord_label,
    transpose_chord,
    vocab_index,
)
from chordseq.errors import ChordParseError

chords = st.sampled_from(VOCABULARY)


@pytest.mark.parametrize(
    "label, expected",
    [
        ("C:maj", Chord(0, "maj")),
        ("N", NO_CHORD),
        ("X", UNKNOWN),
        ("Db:min", Chord(1, "min")),
        ("C#:min", Chord(1, "min")),
        ("C:maj/3", Chord(0, "maj")),
        ("Bb:7/b7", Chord(10, "7")),
        ("G", Chord(7, "maj")),
        ("Cb:maj", Chord(11, "maj")),
        ("E#:min7", Chord(5, "min7")),
        ("C:9", UNKNOWN),
        ("A:min9/5", UNKNOWN),
        ("F:5", UNKNOWN),
    ],
)
def test_parse(label, expected):
    assert parse_chord_label(label) == expected


@pytest.mark.parametrize(
    "label, position",
    [
        ("H:maj", 0),
        ("c:maj", 0),
        ("C:foo", 2),
        ("C:maj(9)", 5),
        ("C:", 2),
        ("C:maj/", 6),
        ("Cx", 1),
        ("", 0),
    ],
)
def test_parse_errors_report_position(label, position):
    with pytest.raises(ChordParseError) as info:
        parse_chord_label(label)
    assert info.value.position == position


def test_reduction_table_override():
    table = dict(REDUCTION_TABLE, **{"9": "7"})
    assert parse_chord_label("C:9", reduction=table) == Chord(0, "7")
    assert parse_chord_label("C:9") == UNKNOWN


def test_templates():
    assert len(QUALITIES) == 14
    for q in QUALITIES:
        assert 0 in TEMPLATES[q]
        assert len(TEMPLATES[q]) in (3, 4)
    # no two vocabulary qualities share a template
    assert len({TEMPLATES[q] for q in QUALITIES}) == 14


def test_pitch_classes():
    assert chord_to_pitch_classes(Chord(0, "maj")) == {0, 4, 7}
    assert chord_to_pitch_classes(Chord(9, "min7")) == {9, 0, 4, 7}
    assert chord_to_pitch_classes(NO_CHORD) == frozenset()
    assert chord_to_pitch_classes(UNKNOWN) == frozenset()


def test_transpose_examples():
    assert transpose_chord(Chord(0, "maj"), 2) == Chord(2, "maj")
    assert transpose_chord(Chord(11, "dim"), 1) == Chord(0, "dim")
    assert transpose_chord(NO_CHORD, 5) == NO_CHORD


def test_vocabulary_bijection():
    assert len(VOCABULARY) == 170
    assert len({vocab_index(c) for c in VOCABULARY}) == 170
    for i in range(170):
        assert vocab_index(chord_from_index(i)) == i
    assert chord_from_index(168) == NO_CHORD
    assert chord_from_index(169) == UNKNOWN
    assert chord_from_index(0) == Chord(0, "maj")
    assert chord_from_index(13) == Chord(0, "sus4")
    assert chord_from_index(14) == Chord(1, "maj")
    with pytest.raises(IndexError):
        chord_from_index(170)
    assert sorted(VOCABULARY) == list(VOCABULARY)


@given(chords)
def test_format_parse_round_trip(c):
    text = format_chord(c)
    assert "b" not in text.split(":")[0]
    assert parse_chord_label(text) == c


@given(chords, st.integers(-30, 30), st.integers(-30, 30))
def test_transposition_group_action(c, a, b):
    assert transpose_chord(transpose_chord(c, a), b) == transpose_chord(c, a + b)
    assert transpose_chord(c, 12) == c


@given(chords, st.integers(-30, 30))
def test_pitch_class_covariance(c, k):
    shifted = {(p + k) % 12 for p in chord_to_pitch_classes(c)}
    assert chord_to_pitch_classes(transpose_chord(c, k)) == shifted
