"""Segment-level sequence-to-sequence chord recognition."""

from chordseq.chords import (
    NO_CHORD,
    QUALITIES,
    UNKNOWN,
    Chord,
    chord_from_index,
    chord_to_pitch_classes,
    format_chord,
    parse_chord_label,
    transpose_chord,
    vocab_index,
)
from chordseq.annotation import Segment, Timeline, read_lab, write_lab

__version__ = "0.1.0"

__all__ = [
    "NO_CHORD",
    "QUALITIES",
    "UNKNOWN",
    "Chord",
    "Segment",
    "Timeline",
    "chord_from_index",
    "chord_to_pitch_classes",
    "format_chord",
    "parse_chord_label",
    "read_lab",
    "transpose_chord",
    "vocab_index",
    "write_lab",
]
