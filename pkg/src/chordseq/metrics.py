"""Chord recognition metrics.

WCSR is computed exactly over interval intersections rather than sampled
frames. Segmentation quality uses the directional Hamming distance:
``over = 1 - DHD(ref => est) / T`` and ``under = 1 - DHD(est => ref) / T``,
so a single-segment estimate always scores ``over == 1``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from chordseq.annotation import Timeline
from chordseq.chords import QUALITIES, TEMPLATES, Chord, chord_to_pitch_classes

CRITERIA = ("root", "maj-min", "thirds", "triads", "sevenths", "tetrads", "mirex")

_DURATION_TOL = 1e-6


class Match(enum.Enum):
    MATCH = "match"
    NO_MATCH = "no_match"
    EXCLUDED = "excluded"


_MAJMIN_SUPPORT = {"maj", "min"}
_SEVENTHS_SUPPORT = {"maj", "min", "7", "maj7", "min7"}


def _third(quality: str) -> int | None:
    tpl = TEMPLATES[quality]
    if 3 in tpl:
        return 3
    if 4 in tpl:
        return 4
    return None


def _triad(quality: str) -> frozenset[int]:
    return frozenset(t for t in TEMPLATES[quality] if t < 8)


def _in_support(criterion: str, ref: Chord) -> bool:
    if ref.is_unknown:
        return False
    if ref.is_no_chord:
        return True
    if criterion == "maj-min":
        return ref.quality in _MAJMIN_SUPPORT
    if criterion == "sevenths":
        return ref.quality in _SEVENTHS_SUPPORT
    return True


def _matches(criterion: str, ref: Chord, est: Chord) -> bool:
    if est.is_unknown:
        return False
    if ref.is_no_chord or est.is_no_chord:
        return ref.is_no_chord and est.is_no_chord
    if criterion == "mirex":
        return len(chord_to_pitch_classes(ref) & chord_to_pitch_classes(est)) >= 3
    if ref.root != est.root:
        return False
    if criterion == "root":
        return True
    if criterion == "thirds":
        return _third(ref.quality) == _third(est.quality)
    if criterion == "triads":
        return _triad(ref.quality) == _triad(est.quality)
    # maj-min, sevenths, tetrads: exact quality (the templates are distinct)
    return ref.quality == est.quality


def chord_match(criterion: str, ref: Chord, est: Chord) -> Match:
    """Compare an estimate to a reference chord under one criterion.

    ``EXCLUDED`` means the reference lies outside the criterion's support and
    the time it covers is dropped from both numerator and denominator.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}; choose from {CRITERIA}")
    if not _in_support(criterion, ref):
        return Match.EXCLUDED
    return Match.MATCH if _matches(criterion, ref, est) else Match.NO_MATCH


def _check_durations(ref: Timeline, est: Timeline) -> None:
    if abs(ref.duration - est.duration) > _DURATION_TOL:
        raise ValueError(f"duration mismatch: reference {ref.duration} s vs estimate {est.duration} s")


def intersect(ref: Timeline, est: Timeline) -> list[tuple[float, Chord, Chord]]:
    """Elementary pieces ``(length, ref_chord, est_chord)`` of the common refinement."""
    _check_durations(ref, est)
    out = []
    i = j = 0
    a, b = ref.intervals, est.intervals
    t = 0.0
    end = ref.duration
    while i < len(a) and j < len(b):
        hi = min(a[i].offset, b[j].offset, end)
        if hi > t:
            out.append((hi - t, a[i].chord, b[j].chord))
            t = hi
        if a[i].offset <= hi:
            i += 1
        if j < len(b) and b[j].offset <= hi:
            j += 1
    return out


class WCSR(NamedTuple):
    score: float
    support: float
    matched: float

    @property
    def defined(self) -> bool:
        return self.support > 0


def wcsr(criterion: str, ref: Timeline, est: Timeline) -> WCSR:
    """Fraction of in-support reference time where the estimate matches.

    ``score`` is NaN when the support is empty.
    """
    matched = support = 0.0
    for length, r, e in intersect(ref, est):
        m = chord_match(criterion, r, e)
        if m is Match.EXCLUDED:
            continue
        support += length
        if m is Match.MATCH:
            matched += length
    score = matched / support if support > 0 else math.nan
    return WCSR(score, support, matched)


def wcsr_corpus(criterion: str, pairs: Iterable[tuple[Timeline, Timeline]]) -> float:
    """Duration-weighted WCSR: total matched time over total support time."""
    matched = support = 0.0
    for ref, est in pairs:
        r = wcsr(criterion, ref, est)
        matched += r.matched
        support += r.support
    return matched / support if support > 0 else math.nan


@dataclass(frozen=True)
class SegScores:
    under: float
    over: float

    @property
    def mean(self) -> float:
        return (self.under + self.over) / 2


def directional_hamming(a: Sequence[float], b: Sequence[float]) -> float:
    """DHD(A => B) for segmentations given as boundary lists ``[0, ..., T]``.

    Sum over segments of A of the part not covered by the best-overlapping
    segment of B.
    """
    total = 0.0
    j = 0
    for lo, hi in zip(a[:-1], a[1:]):
        while j + 1 < len(b) and b[j + 1] <= lo:
            j += 1
        best = 0.0
        k = j
        while k + 1 < len(b) and b[k] < hi:
            best = max(best, min(hi, b[k + 1]) - max(lo, b[k]))
            k += 1
        total += (hi - lo) - best
    return total


def seg_scores(ref: Timeline, est: Timeline) -> SegScores:
    _check_durations(ref, est)
    t = ref.duration
    rb, eb = ref.boundaries, est.boundaries
    eb[-1] = t
    over = 1.0 - directional_hamming(rb, eb) / t
    under = 1.0 - directional_hamming(eb, rb) / t
    clip = lambda x: min(1.0, max(0.0, x))  # noqa: E731
    return SegScores(under=clip(under), over=clip(over))


# --- quality confusion ----------------------------------------------------

CONFUSION_LABELS = QUALITIES + ("N", "X")


def _quality_index(chord: Chord) -> int:
    if chord.is_no_chord:
        return len(QUALITIES)
    if chord.is_unknown:
        return len(QUALITIES) + 1
    return QUALITIES.index(chord.quality)


def _root_index(chord: Chord) -> int:
    return 12 if chord.root is None else chord.root


@dataclass
class Confusion:
    """Row-normalized quality confusion; ``support[i]`` is reference seconds in row i."""

    matrix: np.ndarray
    support: np.ndarray
    labels: tuple[str, ...] = CONFUSION_LABELS

    @property
    def populated(self) -> np.ndarray:
        return self.support > 0


def quality_confusion(pairs: Iterable[tuple[Timeline, Timeline]]) -> Confusion:
    """Time-weighted confusion over qualities where reference and estimate roots agree.

    N and X share the non-pitched root, so N/X frames enter when both sides
    are non-pitched. Empty rows stay all-zero.
    """
    n = len(CONFUSION_LABELS)
    counts = np.zeros((n, n))
    for ref, est in pairs:
        for length, r, e in intersect(ref, est):
            if _root_index(r) == _root_index(e):
                counts[_quality_index(r), _quality_index(e)] += length
    support = counts.sum(axis=1)
    matrix = np.divide(counts, support[:, None], out=np.zeros_like(counts), where=support[:, None] > 0)
    return Confusion(matrix, support)


# --- reports ----------------------------------------------------------------

REPORT_COLUMNS = CRITERIA + ("under", "over", "mean")


def evaluate(ref: Timeline, est: Timeline) -> dict[str, float]:
    """All report columns for one song."""
    row = {c: wcsr(c, ref, est).score for c in CRITERIA}
    seg = seg_scores(ref, est)
    row.update(under=seg.under, over=seg.over, mean=seg.mean)
    return row


def evaluate_corpus(pairs: Sequence[tuple[Timeline, Timeline]]) -> dict[str, float]:
    """WCSR pooled over time; segmentation scores averaged weighted by duration."""
    pairs = list(pairs)
    row = {c: wcsr_corpus(c, pairs) for c in CRITERIA}
    total = sum(ref.duration for ref, _ in pairs)
    for key in ("under", "over"):
        acc = 0.0
        for ref, est in pairs:
            acc += getattr(seg_scores(ref, est), key) * ref.duration
        row[key] = acc / total if total else math.nan
    row["mean"] = (row["under"] + row["over"]) / 2
    return row
