"""Time-aligned chord timelines, .lab I/O, grid quantization and slicing."""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, NamedTuple, Sequence

from chordseq.chords import NO_CHORD, Chord, format_chord, parse_chord_label, transpose_chord
from chordseq.errors import ChordParseError, LabFormatError, TimelineError

SEGMENT_SECONDS = 25.6
GRID_SECONDS = 0.1
FRAMES_PER_SEGMENT = 256

# Times are rounded to this many decimals so that grid arithmetic stays exact.
_TIME_DECIMALS = 9
_EPS = 1e-7


def _t(x: float) -> float:
    return round(float(x), _TIME_DECIMALS) + 0.0


class Interval(NamedTuple):
    onset: float
    offset: float
    chord: Chord

    @property
    def length(self) -> float:
        return self.offset - self.onset


@dataclass(frozen=True)
class Timeline:
    """Gap-free, merged sequence of chord intervals covering ``[0, duration]``.

    Build instances with :meth:`from_intervals`, which validates, fills gaps
    with N and merges equal neighbours. The raw constructor trusts its input.
    """

    intervals: tuple[Interval, ...]
    duration: float

    @classmethod
    def from_intervals(
        cls,
        intervals: Iterable[tuple[float, float, Chord]],
        duration: float | None = None,
    ) -> Timeline:
        items = [Interval(_t(a), _t(b), c) for a, b, c in intervals]
        for i, (a, b, _) in enumerate(items):
            if a < -_EPS:
                raise TimelineError(f"interval {i} starts before 0 ({a})")
            if b <= a + _EPS:
                raise TimelineError(f"interval {i} has non-positive length ({a}, {b})")
            if i and a < items[i - 1].offset - _EPS:
                raise TimelineError(f"interval {i} overlaps or is out of order ({a} < {items[i - 1].offset})")

        end = items[-1].offset if items else 0.0
        if duration is None:
            duration = end
        duration = _t(duration)
        if duration <= 0:
            raise TimelineError("timeline duration must be positive")
        if end > duration + _EPS:
            raise TimelineError(f"intervals extend past duration ({end} > {duration})")

        filled: list[Interval] = []
        cursor = 0.0
        for a, b, c in items:
            if a > cursor + _EPS:
                filled.append(Interval(cursor, a, NO_CHORD))
            filled.append(Interval(max(a, cursor), b, c))
            cursor = b
        if cursor < duration - _EPS:
            filled.append(Interval(cursor, duration, NO_CHORD))
        return cls(tuple(_merge(filled)), duration)

    @classmethod
    def constant(cls, chord: Chord, duration: float) -> Timeline:
        return cls.from_intervals([(0.0, duration, chord)], duration)

    def __iter__(self) -> Iterator[Interval]:
        return iter(self.intervals)

    def __len__(self) -> int:
        return len(self.intervals)

    @property
    def onsets(self) -> list[float]:
        return [iv.onset for iv in self.intervals]

    @property
    def boundaries(self) -> list[float]:
        return self.onsets + [self.duration]

    def chord_at(self, time: float) -> Chord:
        if not 0 <= time < self.duration:
            raise ValueError(f"time {time} outside [0, {self.duration})")
        i = bisect.bisect_right(self.onsets, time) - 1
        return self.intervals[i].chord

    def map_chords(self, fn) -> Timeline:
        return Timeline.from_intervals(((a, b, fn(c)) for a, b, c in self.intervals), self.duration)

    def transpose(self, semitones: int) -> Timeline:
        return self.map_chords(lambda c: transpose_chord(c, semitones))

    def shift(self, offset: float) -> list[Interval]:
        """Intervals moved by ``offset`` seconds (not a Timeline: may start after 0)."""
        return [Interval(_t(a + offset), _t(b + offset), c) for a, b, c in self.intervals]

    def truncate(self, duration: float) -> Timeline:
        duration = _t(duration)
        kept = [(a, min(b, duration), c) for a, b, c in self.intervals if a < duration - _EPS]
        return Timeline.from_intervals(kept, duration)

    def is_quantized(self, grid: float = GRID_SECONDS) -> bool:
        return all(abs(a / grid - round(a / grid)) < 1e-6 for a in self.onsets)


def _merge(items: Sequence[Interval]) -> list[Interval]:
    out: list[Interval] = []
    for iv in items:
        if out and out[-1].chord == iv.chord and abs(out[-1].offset - iv.onset) < _EPS:
            out[-1] = Interval(out[-1].onset, iv.offset, iv.chord)
        else:
            out.append(iv)
    return out


def concatenate(parts: Iterable[Sequence[Interval]], duration: float) -> Timeline:
    """Join already-offset interval lists and merge equal chords across joins."""
    flat = [iv for part in parts for iv in part]
    return Timeline.from_intervals(flat, duration)


@dataclass(frozen=True)
class Segment:
    timeline: Timeline
    song_id: str = ""
    start: float = 0.0

    def __post_init__(self):
        if abs(self.timeline.duration - SEGMENT_SECONDS) > _EPS:
            raise TimelineError(f"segment duration must be {SEGMENT_SECONDS}, got {self.timeline.duration}")


# --- .lab I/O ---------------------------------------------------------------


def read_lab(source: str | Path | IO[str], duration: float | None = None) -> Timeline:
    """Read ``onset offset label`` lines (tab or space separated)."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="ascii") as fh:
            return read_lab(fh, duration)
    rows = []
    for lineno, line in enumerate(source, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 2)
        if len(parts) != 3:
            raise LabFormatError(f"expected 'onset offset label', got {line!r}", lineno)
        try:
            onset, offset = float(parts[0]), float(parts[1])
        except ValueError:
            raise LabFormatError(f"bad time value in {line!r}", lineno) from None
        try:
            chord = parse_chord_label(parts[2].strip())
        except ChordParseError as exc:
            raise LabFormatError(str(exc), lineno) from exc
        if rows and onset < rows[-1][1] - _EPS:
            raise LabFormatError(f"interval starts at {onset} before previous offset {rows[-1][1]}", lineno)
        if offset <= onset:
            raise LabFormatError(f"offset {offset} not after onset {onset}", lineno)
        rows.append((onset, offset, chord))
    if not rows:
        raise LabFormatError("no intervals")
    return Timeline.from_intervals(rows, duration)


def write_lab(timeline: Timeline, dest: str | Path | IO[str]) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="ascii") as fh:
            write_lab(timeline, fh)
        return
    for a, b, c in timeline.intervals:
        dest.write(f"{a:.6f}\t{b:.6f}\t{format_chord(c)}\n")


# --- grid operations ----------------------------------------------------------


def snap(time: float, grid: float = GRID_SECONDS) -> float:
    """Nearest grid point, ties rounding up."""
    return _t(math.floor(time / grid + 0.5 + 1e-9) * grid)


def quantize(timeline: Timeline, grid: float = GRID_SECONDS) -> Timeline:
    if grid <= 0:
        raise ValueError("grid must be positive")
    snapped = [snap(a, grid) for a in timeline.onsets]
    snapped[0] = 0.0
    bounds = snapped + [timeline.duration]
    kept = [
        (a, min(b, timeline.duration), iv.chord)
        for a, b, iv in zip(bounds[:-1], bounds[1:], timeline.intervals)
        if min(b, timeline.duration) - a > _EPS
    ]
    # Snapping can reorder nothing but may collapse intervals; clamp monotonic.
    return Timeline.from_intervals(kept, timeline.duration)


def slice_segment(
    timeline: Timeline,
    start: float,
    dur: float = SEGMENT_SECONDS,
    song_id: str = "",
) -> Segment | Timeline:
    """Clip ``[start, start + dur)`` and re-base to 0; pad past the end with N.

    Returns a :class:`Segment` when ``dur`` is the model segment length,
    otherwise a plain :class:`Timeline`.
    """
    if start < 0:
        raise ValueError("start must be non-negative")
    start, end = _t(start), _t(start + dur)
    clipped = []
    for a, b, c in timeline.intervals:
        lo, hi = max(a, start), min(b, end)
        if hi - lo > _EPS:
            clipped.append((lo - start, hi - start, c))
    tl = Timeline.from_intervals(clipped, _t(dur))
    if abs(dur - SEGMENT_SECONDS) < _EPS:
        return Segment(tl, song_id, start)
    return tl


def pad_to_grid(timeline: Timeline, grid: float = GRID_SECONDS) -> Timeline:
    """Extend the last chord so the duration is a whole number of grid steps."""
    steps = math.ceil(timeline.duration / grid - 1e-6)
    target = _t(steps * grid)
    if target <= timeline.duration + _EPS:
        return timeline
    *head, last = timeline.intervals
    return Timeline(tuple(head) + (Interval(last.onset, target, last.chord),), target)


def tile_song(timeline: Timeline, song_id: str = "") -> list[Segment]:
    """Consecutive non-overlapping segments covering the song, last one N-padded."""
    timeline = pad_to_grid(timeline)
    n = max(1, math.ceil(timeline.duration / SEGMENT_SECONDS - 1e-6))
    return [slice_segment(timeline, _t(i * SEGMENT_SECONDS), song_id=song_id) for i in range(n)]


def stitch_segments(parts: Sequence[Timeline], duration: float) -> Timeline:
    """Inverse of :func:`tile_song`: offset, concatenate, merge, truncate."""
    shifted = [tl.shift(i * SEGMENT_SECONDS) for i, tl in enumerate(parts)]
    total = _t(len(parts) * SEGMENT_SECONDS)
    return concatenate(shifted, total).truncate(duration)


def sample_frames(timeline: Timeline, hop: float = GRID_SECONDS) -> list[Chord]:
    """Chord active at each frame midpoint ``(i + 0.5) * hop``."""
    if hop <= 0:
        raise ValueError("hop must be positive")
    n = int(math.floor(timeline.duration / hop + 1e-9))
    onsets = timeline.onsets
    out = []
    for i in range(n):
        j = bisect.bisect_right(onsets, (i + 0.5) * hop) - 1
        out.append(timeline.intervals[j].chord)
    return out


def frames_to_timeline(frames: Sequence[Chord], hop: float = GRID_SECONDS, duration: float | None = None) -> Timeline:
    """Inverse of :func:`sample_frames`: runs of equal frames become intervals."""
    if not frames:
        raise ValueError("no frames")
    total = _t(len(frames) * hop) if duration is None else duration
    rows = [(_t(i * hop), _t((i + 1) * hop), c) for i, c in enumerate(frames)]
    rows[-1] = (rows[-1][0], total, rows[-1][2])
    return Timeline.from_intervals(rows, total)


# --- dataset manifest -----------------------------------------------------


@dataclass
class ManifestRecord:
    """One song: ``song_id``, ``audio`` and ``lab`` paths, CV ``fold``."""

    song_id: str
    audio: str
    lab: str
    fold: int
    duration: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        data = {"song_id": self.song_id, "audio": self.audio, "lab": self.lab, "fold": self.fold}
        if self.duration is not None:
            data["duration"] = self.duration
        data.update(self.extra)
        return json.dumps(data, sort_keys=True)


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    """Line-delimited JSON; relative paths resolve against the manifest's directory."""
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                rec = ManifestRecord(
                    song_id=str(data.pop("song_id")),
                    audio=str(path.parent / data.pop("audio")),
                    lab=str(path.parent / data.pop("lab")),
                    fold=int(data.pop("fold")),
                    duration=data.pop("duration", None),
                    extra=data,
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise LabFormatError(f"bad manifest record: {exc}", lineno) from exc
            records.append(rec)
    return records


def write_manifest(records: Iterable[ManifestRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
