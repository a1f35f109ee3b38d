"""MERGE and SPLIT token representations and the decoding grammar.

Token ids are assigned in contiguous blocks and never change:

====================  ===========  ===========
block                 MERGE ids    SPLIT ids
====================  ===========  ===========
PAD, SOS, EOS         0, 1, 2      0, 1, 2
Time(0..256)          3..259       3..259
Chord(0..169)         260..429     --
Root(0..12)           --           260..272
Quality(0..15)        --           273..288
====================  ===========  ===========

Chord(i) is vocabulary index i. Root(12) is shared by N and X; Quality(14)
is N and Quality(15) is X. Time(k) marks a chord onset at ``k * 0.1`` s within
the segment; each chord lasts until the next onset or the segment end.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from chordseq.annotation import (
    GRID_SECONDS,
    SEGMENT_SECONDS,
    Segment,
    Timeline,
    slice_segment,
)
from chordseq.chords import (
    N_QUALITIES,
    NO_CHORD,
    PITCH_NAMES,
    QUALITIES,
    UNKNOWN,
    VOCAB_SIZE,
    Chord,
    chord_from_index,
    transpose_chord,
    vocab_index,
)
from chordseq.errors import DecodeError, TokenizationError

PAD, SOS, EOS = 0, 1, 2
N_SPECIAL = 3
N_TIME = 257
TIME_BASE = N_SPECIAL
CHORD_BASE = TIME_BASE + N_TIME
N_ROOT_TOKENS = 13
N_QUALITY_TOKENS = 16
ROOT_BASE = CHORD_BASE
QUALITY_BASE = ROOT_BASE + N_ROOT_TOKENS
SHARED_ROOT = 12
NO_CHORD_QUALITY = 14
UNKNOWN_QUALITY = 15


class Representation(str, enum.Enum):
    MERGE = "merge"
    SPLIT = "split"

    @classmethod
    def parse(cls, value: str | Representation) -> Representation:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown representation {value!r}; expected 'merge' or 'split'") from None


class Kind(enum.Enum):
    PAD = "pad"
    SOS = "sos"
    EOS = "eos"
    TIME = "time"
    CHORD = "chord"
    ROOT = "root"
    QUALITY = "quality"


class TokenSet:
    """Token inventory for one representation."""

    def __init__(self, representation: str | Representation):
        self.representation = Representation.parse(representation)
        if self.representation is Representation.MERGE:
            self.size = CHORD_BASE + VOCAB_SIZE
            expected = 430
        else:
            self.size = QUALITY_BASE + N_QUALITY_TOKENS
            expected = 289
        if self.size != expected:
            raise AssertionError(f"{self.representation.value} token set has {self.size} tokens, expected {expected}")
        self.names = [self.name(i) for i in range(self.size)]
        kinds = [self.kind(i) for i in range(self.size)]
        self._kind_masks = {k: np.array([x is k for x in kinds]) for k in Kind}

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"TokenSet({self.representation.value!r}, size={self.size})"

    @property
    def is_split(self) -> bool:
        return self.representation is Representation.SPLIT

    @property
    def fingerprint(self) -> str:
        digest = hashlib.sha256("\n".join(self.names).encode()).hexdigest()
        return f"{self.representation.value}-{self.size}-{digest[:16]}"

    @property
    def event_length(self) -> int:
        """Tokens per chord event (time + chord, or time + root + quality)."""
        return 3 if self.is_split else 2

    @property
    def max_sequence_length(self) -> int:
        """SOS + one event per grid frame + EOS."""
        frames = round(SEGMENT_SECONDS / GRID_SECONDS)
        return self.event_length * frames + 2

    # -- id <-> family -------------------------------------------------------

    def time(self, k: int) -> int:
        if not 0 <= k < N_TIME:
            raise TokenizationError(f"time index {k} outside 0..{N_TIME - 1}")
        return TIME_BASE + k

    def chord(self, i: int) -> int:
        if self.is_split:
            raise TokenizationError("SPLIT has no chord tokens")
        return CHORD_BASE + i

    def root(self, j: int) -> int:
        if not self.is_split:
            raise TokenizationError("MERGE has no root tokens")
        return ROOT_BASE + j

    def quality(self, m: int) -> int:
        if not self.is_split:
            raise TokenizationError("MERGE has no quality tokens")
        return QUALITY_BASE + m

    def kind(self, token: int) -> Kind:
        if not 0 <= token < self.size:
            raise TokenizationError(f"token id {token} outside 0..{self.size - 1}")
        if token < N_SPECIAL:
            return (Kind.PAD, Kind.SOS, Kind.EOS)[token]
        if token < CHORD_BASE:
            return Kind.TIME
        if not self.is_split:
            return Kind.CHORD
        return Kind.ROOT if token < QUALITY_BASE else Kind.QUALITY

    def value(self, token: int) -> int:
        """Index within the token's family (e.g. k for Time(k))."""
        kind = self.kind(token)
        if kind is Kind.TIME:
            return token - TIME_BASE
        if kind in (Kind.CHORD, Kind.ROOT):
            return token - CHORD_BASE
        if kind is Kind.QUALITY:
            return token - QUALITY_BASE
        return token

    def kind_mask(self, kind: Kind) -> np.ndarray:
        return self._kind_masks[kind]

    def name(self, token: int) -> str:
        kind = self.kind(token)
        v = self.value(token)
        if kind in (Kind.PAD, Kind.SOS, Kind.EOS):
            return f"<{kind.name}>"
        if kind is Kind.TIME:
            return f"T{v}"
        if kind is Kind.CHORD:
            return f"C:{chord_from_index(v)}"
        if kind is Kind.ROOT:
            return "R:N/X" if v == SHARED_ROOT else f"R:{PITCH_NAMES[v]}"
        if v == NO_CHORD_QUALITY:
            return "Q:N"
        if v == UNKNOWN_QUALITY:
            return "Q:X"
        return f"Q:{QUALITIES[v]}"

    def token_from_name(self, name: str) -> int:
        if not hasattr(self, "_by_name"):
            self._by_name = {n: i for i, n in enumerate(self.names)}
        try:
            return self._by_name[name]
        except KeyError:
            raise TokenizationError(f"unknown token name {name!r} for {self.representation.value}") from None

    def chord_tokens(self, chord: Chord) -> list[int]:
        if not self.is_split:
            return [self.chord(vocab_index(chord))]
        if chord.is_no_chord:
            return [self.root(SHARED_ROOT), self.quality(NO_CHORD_QUALITY)]
        if chord.is_unknown:
            return [self.root(SHARED_ROOT), self.quality(UNKNOWN_QUALITY)]
        return [self.root(chord.root), self.quality(QUALITIES.index(chord.quality))]


_TOKEN_SETS: dict[Representation, TokenSet] = {}


def get_token_set(representation: str | Representation) -> TokenSet:
    rep = Representation.parse(representation)
    if rep not in _TOKEN_SETS:
        _TOKEN_SETS[rep] = TokenSet(rep)
    return _TOKEN_SETS[rep]


def _chord_from_split(root: int, quality: int) -> Chord | None:
    """Chord for a (root, quality) pair, or None when the pair is inconsistent."""
    if root == SHARED_ROOT:
        if quality == NO_CHORD_QUALITY:
            return NO_CHORD
        if quality == UNKNOWN_QUALITY:
            return UNKNOWN
        return None
    if quality >= N_QUALITIES:
        return None
    return Chord(root, QUALITIES[quality])


# --- encode / decode -------------------------------------------------------


def encode(segment: Segment | Timeline, representation: str | Representation) -> list[int]:
    """Token ids for a grid-quantized segment, framed by SOS and EOS."""
    tokens = get_token_set(representation)
    timeline = segment.timeline if isinstance(segment, Segment) else segment
    ids = [SOS]
    for iv in timeline.intervals:
        k = iv.onset / GRID_SECONDS
        if abs(k - round(k)) > 1e-6:
            raise TokenizationError(f"onset {iv.onset} is not on the {GRID_SECONDS} s grid; quantize first")
        ids.append(tokens.time(int(round(k))))
        ids.extend(tokens.chord_tokens(iv.chord))
    ids.append(EOS)
    return ids


def decode(
    ids: Sequence[int],
    representation: str | Representation,
    segment_duration: float = SEGMENT_SECONDS,
    strict: bool = True,
) -> Timeline:
    """Timeline for a token sequence.

    In strict mode any grammar violation raises :class:`DecodeError`. In
    lenient mode decoding stops at the first violation and keeps the events
    completed so far. A missing EOS is accepted when the sequence ends on a
    complete event.
    """
    tokens = get_token_set(representation)
    events: list[tuple[int, Chord]] = []
    state = GrammarState()
    pending: list[int] = []

    def fail(msg: str, pos: int):
        if strict:
            raise DecodeError(msg, pos)

    ids = list(ids)
    if not ids or ids[0] != SOS:
        fail("sequence must begin with SOS", 0)
        ids = [SOS] + [t for t in ids if t != SOS]
    for pos in range(1, len(ids)):
        tok = int(ids[pos])
        if not 0 <= tok < tokens.size:
            fail(f"token id {tok} out of range", pos)
            break
        if state.kind is Kind.EOS:
            if tok != PAD:
                fail("only PAD may follow EOS", pos)
            if tok != PAD:
                break
            continue
        empty = state.kind is Kind.SOS and tok == EOS  # SOS EOS: segment without chords
        if not empty and not allowed(state, tok, tokens):
            fail(f"token {tokens.name(tok)} not allowed after {state.kind.value}", pos)
            break
        kind = tokens.kind(tok)
        if kind is Kind.TIME:
            pending = [tokens.value(tok)]
        elif kind is Kind.CHORD:
            events.append((pending[0], chord_from_index(tokens.value(tok))))
        elif kind is Kind.ROOT:
            pending.append(tokens.value(tok))
        elif kind is Kind.QUALITY:
            chord = _chord_from_split(pending[1], tokens.value(tok))
            if chord is None:
                fail(f"inconsistent root/quality pair {tokens.name(ids[pos - 1])} {tokens.name(tok)}", pos)
                break
            events.append((pending[0], chord))
        state = GrammarState(Kind.EOS) if empty else advance(state, tok, tokens)
    else:
        if state.kind in (Kind.TIME, Kind.ROOT):
            fail("sequence ends inside a chord event", len(ids))

    rows = []
    for n, (k, chord) in enumerate(events):
        onset = k * GRID_SECONDS
        offset = events[n + 1][0] * GRID_SECONDS if n + 1 < len(events) else segment_duration
        offset = min(offset, segment_duration)
        if offset - onset > 1e-9:
            rows.append((onset, offset, chord))
    return Timeline.from_intervals(rows, segment_duration)


# --- grammar ------------------------------------------------------------------


@dataclass(frozen=True)
class GrammarState:
    """Last emitted token kind and the last time index (None before any Time).

    ``kind`` is one of SOS, TIME, CHORD, ROOT, QUALITY or EOS (done).
    ``last_root`` is only set right after a SPLIT root token: the shared
    N/X root admits only the N and X qualities, a pitched root only the 14
    pitched ones.
    """

    kind: Kind = Kind.SOS
    last_time: int | None = None
    last_root: int | None = None

    @property
    def done(self) -> bool:
        return self.kind is Kind.EOS


def _allowed_kinds(state: GrammarState, tokens: TokenSet) -> tuple[Kind, ...]:
    k = state.kind
    if k is Kind.EOS:
        return (Kind.PAD,)
    if k is Kind.SOS:
        return (Kind.TIME,)
    if tokens.is_split:
        table = {Kind.TIME: (Kind.ROOT,), Kind.ROOT: (Kind.QUALITY,), Kind.QUALITY: (Kind.TIME, Kind.EOS)}
    else:
        table = {Kind.TIME: (Kind.CHORD,), Kind.CHORD: (Kind.TIME, Kind.EOS)}
    if k not in table:
        raise ValueError(f"state {k} is not reachable in {tokens.representation.value}")
    return table[k]


def next_token_mask(state: GrammarState, representation: str | Representation | TokenSet) -> np.ndarray:
    """Boolean vector over the token set: True where the token may come next."""
    tokens = representation if isinstance(representation, TokenSet) else get_token_set(representation)
    mask = np.zeros(tokens.size, dtype=bool)
    for kind in _allowed_kinds(state, tokens):
        mask |= tokens.kind_mask(kind)
    if state.last_time is not None and mask[TIME_BASE]:
        mask[TIME_BASE : TIME_BASE + state.last_time + 1] = False
    if state.kind is Kind.ROOT and state.last_root is not None:
        if state.last_root == SHARED_ROOT:
            mask[QUALITY_BASE : QUALITY_BASE + N_QUALITIES] = False
        else:
            mask[QUALITY_BASE + N_QUALITIES :] = False
    return mask


def allowed(state: GrammarState, token: int, tokens: TokenSet) -> bool:
    kind = tokens.kind(token)
    if kind not in _allowed_kinds(state, tokens):
        return False
    if kind is Kind.TIME and state.last_time is not None:
        return tokens.value(token) > state.last_time
    if kind is Kind.QUALITY and state.last_root is not None:
        return (state.last_root == SHARED_ROOT) == (tokens.value(token) >= N_QUALITIES)
    return True


def advance(state: GrammarState, token: int, tokens: TokenSet) -> GrammarState:
    kind = tokens.kind(token)
    if kind is Kind.PAD:
        return state
    if kind is Kind.TIME:
        return GrammarState(Kind.TIME, tokens.value(token))
    if kind is Kind.ROOT:
        return GrammarState(kind, state.last_time, tokens.value(token))
    return GrammarState(kind, state.last_time)


# --- augmentation ---------------------------------------------------------------


def augment_pitch_shift(segment: Segment, semitones: int) -> Segment:
    return Segment(segment.timeline.transpose(semitones), segment.song_id, segment.start)


def transpose_tokens(ids: Sequence[int], semitones: int, representation: str | Representation) -> list[int]:
    """Apply a transposition directly to chord/root tokens; times are unchanged."""
    tokens = get_token_set(representation)
    out = []
    for tok in ids:
        kind = tokens.kind(tok)
        if kind is Kind.CHORD:
            tok = tokens.chord(vocab_index(transpose_chord(chord_from_index(tokens.value(tok)), semitones)))
        elif kind is Kind.ROOT and tokens.value(tok) != SHARED_ROOT:
            tok = tokens.root((tokens.value(tok) + semitones) % 12)
        out.append(tok)
    return out


def crop_offset(song_duration: float, rng: np.random.Generator) -> float:
    """Uniform gridded start in ``[0, song_duration - 25.6]`` (0 for short songs)."""
    steps = math.floor((song_duration - SEGMENT_SECONDS) / GRID_SECONDS + 1e-6)
    if steps <= 0:
        return 0.0
    return round(int(rng.integers(0, steps + 1)) * GRID_SECONDS, 9)


def augment_random_crop(timeline: Timeline, rng: np.random.Generator, song_id: str = "") -> Segment:
    return slice_segment(timeline, crop_offset(timeline.duration, rng), song_id=song_id)
