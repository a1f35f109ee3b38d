"""Chord labels, pitch-class semantics and the 170-entry chord vocabulary.

Labels follow the ``ROOT[:QUALITY][/BASS]`` subset of the Harte syntax used by
``.lab`` files, plus the bare symbols ``N`` (no chord) and ``X`` (unknown).
The vocabulary is 12 roots x 14 qualities, then ``N`` and ``X``.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass
from typing import Mapping

from chordseq.errors import ChordParseError

# Vocabulary order; quality index = position in this tuple.
QUALITIES: tuple[str, ...] = (
    "maj", "min", "dim", "aug", "min6", "maj6", "min7",
    "minmaj7", "maj7", "7", "dim7", "hdim7", "sus2", "sus4",
)

TEMPLATES: dict[str, frozenset[int]] = {
    "maj": frozenset({0, 4, 7}),
    "min": frozenset({0, 3, 7}),
    "dim": frozenset({0, 3, 6}),
    "aug": frozenset({0, 4, 8}),
    "min6": frozenset({0, 3, 7, 9}),
    "maj6": frozenset({0, 4, 7, 9}),
    "min7": frozenset({0, 3, 7, 10}),
    "minmaj7": frozenset({0, 3, 7, 11}),
    "maj7": frozenset({0, 4, 7, 11}),
    "7": frozenset({0, 4, 7, 10}),
    "dim7": frozenset({0, 3, 6, 9}),
    "hdim7": frozenset({0, 3, 6, 10}),
    "sus2": frozenset({0, 2, 7}),
    "sus4": frozenset({0, 5, 7}),
}

N_ROOTS = 12
N_QUALITIES = len(QUALITIES)
VOCAB_SIZE = N_ROOTS * N_QUALITIES + 2
NO_CHORD_INDEX = N_ROOTS * N_QUALITIES
UNKNOWN_INDEX = NO_CHORD_INDEX + 1

PITCH_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
_NATURALS = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}

# Harte shorthand qualities that may appear in annotations, as semitone sets
# (compound intervals folded into one octave). A shorthand that is not one of
# QUALITIES is reduced to the vocabulary quality with the identical template,
# otherwise to X. Extended chords therefore become X: 9 -> {0,2,4,7,10} has
# no exact counterpart.
HARTE_SHORTHANDS: dict[str, frozenset[int]] = {
    **TEMPLATES,
    "9": frozenset({0, 2, 4, 7, 10}),
    "maj9": frozenset({0, 2, 4, 7, 11}),
    "min9": frozenset({0, 2, 3, 7, 10}),
    "11": frozenset({0, 2, 4, 5, 7, 10}),
    "min11": frozenset({0, 2, 3, 5, 7, 10}),
    "13": frozenset({0, 2, 4, 5, 7, 9, 10}),
    "maj13": frozenset({0, 2, 4, 5, 7, 9, 11}),
    "min13": frozenset({0, 2, 3, 5, 7, 9, 10}),
    "5": frozenset({0, 7}),
    "1": frozenset({0}),
}


def default_reduction_table() -> dict[str, str | None]:
    """Shorthand -> vocabulary quality (None means map to X)."""
    by_template = {TEMPLATES[q]: q for q in QUALITIES}
    return {name: by_template.get(tpl) for name, tpl in HARTE_SHORTHANDS.items()}


REDUCTION_TABLE: Mapping[str, str | None] = default_reduction_table()


@functools.total_ordering
@dataclass(frozen=True)
class Chord:
    """A vocabulary chord.

    Pitched chords carry ``root`` in 0..11 and one of ``QUALITIES``. The two
    non-pitched chords use ``root=None`` with quality ``"N"`` or ``"X"``.
    """

    root: int | None
    quality: str

    def __post_init__(self):
        if self.root is None:
            if self.quality not in ("N", "X"):
                raise ValueError(f"non-pitched chord must have quality N or X, got {self.quality!r}")
        else:
            if self.quality not in TEMPLATES:
                raise ValueError(f"unknown quality {self.quality!r}")
            object.__setattr__(self, "root", int(self.root) % 12)

    @property
    def is_pitched(self) -> bool:
        return self.root is not None

    @property
    def is_no_chord(self) -> bool:
        return self.quality == "N"

    @property
    def is_unknown(self) -> bool:
        return self.quality == "X"

    @property
    def index(self) -> int:
        return vocab_index(self)

    def __lt__(self, other: Chord) -> bool:
        if not isinstance(other, Chord):
            return NotImplemented
        return vocab_index(self) < vocab_index(other)

    def __str__(self) -> str:
        return format_chord(self)


NO_CHORD = Chord(None, "N")
UNKNOWN = Chord(None, "X")

_LABEL_RE = re.compile(r"([A-G])([#b]*)(?::([^/]*))?(?:/(.*))?\Z")
_QUALITY_RE = re.compile(r"[A-Za-z0-9]*\Z")
_BASS_RE = re.compile(r"(?:[#b]*[1-9][0-9]*|[A-G][#b]*)\Z")


def parse_chord_label(text: str, reduction: Mapping[str, str | None] | None = None) -> Chord:
    """Parse a label such as ``"Db:min7/b3"`` into a vocabulary chord.

    Bass suffixes are dropped. Qualities outside the vocabulary are looked up
    in ``reduction`` (defaults to :data:`REDUCTION_TABLE`); a ``None`` entry
    yields :data:`UNKNOWN`.

    Raises:
        ChordParseError: on malformed syntax, with the failing position.
    """
    if not text:
        raise ChordParseError(text, 0, "empty label")
    if not text.isascii():
        bad = next(i for i, ch in enumerate(text) if not ch.isascii())
        raise ChordParseError(text, bad, "non-ASCII character")
    if text == "N":
        return NO_CHORD
    if text == "X":
        return UNKNOWN

    m = _LABEL_RE.match(text)
    if m is None:
        if text[0] not in _NATURALS:
            raise ChordParseError(text, 0, "root must be one of A..G, or the label N or X")
        pos = 1
        while pos < len(text) and text[pos] in "#b":
            pos += 1
        raise ChordParseError(text, pos, "expected ':' or '/' after root")

    letter, accidentals, quality, bass = m.groups()
    if len(accidentals) > 1:
        raise ChordParseError(text, 2, "at most one accidental is allowed")
    root = (_NATURALS[letter] + accidentals.count("#") - accidentals.count("b")) % 12

    if quality is None:
        quality = "maj"
    else:
        qpos = m.start(3)
        if not quality:
            raise ChordParseError(text, qpos, "empty quality after ':'")
        bad = _QUALITY_RE.match(quality)
        if bad is None:
            offset = next(i for i, ch in enumerate(quality) if not (ch.isalnum()))
            raise ChordParseError(text, qpos + offset, "unexpected character in quality")
    if bass is not None and _BASS_RE.match(bass) is None:
        raise ChordParseError(text, m.start(4), "malformed bass")

    if quality in TEMPLATES:
        return Chord(root, quality)
    table = REDUCTION_TABLE if reduction is None else reduction
    if quality not in table:
        raise ChordParseError(text, m.start(3), f"unrecognised quality {quality!r}")
    target = table[quality]
    return UNKNOWN if target is None else Chord(root, target)


def format_chord(chord: Chord) -> str:
    """Canonical label with sharp spellings, e.g. ``C#:min7``."""
    if not chord.is_pitched:
        return chord.quality
    return f"{PITCH_NAMES[chord.root]}:{chord.quality}"


def chord_to_pitch_classes(chord: Chord) -> frozenset[int]:
    if not chord.is_pitched:
        return frozenset()
    return frozenset((chord.root + t) % 12 for t in TEMPLATES[chord.quality])


def transpose_chord(chord: Chord, semitones: int) -> Chord:
    if not chord.is_pitched:
        return chord
    return Chord((chord.root + semitones) % 12, chord.quality)


def vocab_index(chord: Chord) -> int:
    """Position in the vocabulary: root-major, quality-minor, then N, X."""
    if chord.is_no_chord:
        return NO_CHORD_INDEX
    if chord.is_unknown:
        return UNKNOWN_INDEX
    return chord.root * N_QUALITIES + QUALITIES.index(chord.quality)


def chord_from_index(index: int) -> Chord:
    if not 0 <= index < VOCAB_SIZE:
        raise IndexError(f"chord index {index} outside 0..{VOCAB_SIZE - 1}")
    if index == NO_CHORD_INDEX:
        return NO_CHORD
    if index == UNKNOWN_INDEX:
        return UNKNOWN
    root, q = divmod(index, N_QUALITIES)
    return Chord(root, QUALITIES[q])


VOCABULARY: tuple[Chord, ...] = tuple(chord_from_index(i) for i in range(VOCAB_SIZE))
