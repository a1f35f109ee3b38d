"""Deterministic synthetic chord corpus (additive sinusoids + white noise).

Each song gets two independent random streams spawned from the corpus seed:
one for the chord progression and one for the audio (phases and noise), so
labels and audio are reproducible separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from chordseq.annotation import (
    GRID_SECONDS,
    ManifestRecord,
    Timeline,
    write_lab,
    write_manifest,
)
from chordseq.chords import NO_CHORD, QUALITIES, TEMPLATES, VOCABULARY, Chord, chord_to_pitch_classes
from chordseq.features import SAMPLE_RATE, chroma, write_wav

# maj/min heavy, tetrads and symmetric chords rare
DEFAULT_QUALITY_WEIGHTS: dict[str, float] = {
    "maj": 0.424, "min": 0.32, "7": 0.07, "min7": 0.06, "maj7": 0.04,
    "sus4": 0.02, "hdim7": 0.015, "dim": 0.015, "min6": 0.008, "maj6": 0.008,
    "minmaj7": 0.008, "sus2": 0.006, "aug": 0.003, "dim7": 0.003,
}

N_FOLDS = 5


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    n_songs: int = 200
    song_duration: float = 60.0
    chord_duration_range: tuple[float, float] = (1.0, 4.0)
    quality_weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_QUALITY_WEIGHTS))
    no_chord_rate: float = 0.05
    partials: tuple[float, ...] = (1.0, 0.5, 0.25)
    noise_level: float = 0.02
    octaves: tuple[int, ...] = (3, 4, 5)
    ramp_seconds: float = 0.01
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        lo, hi = self.chord_duration_range
        if not 0 < lo <= hi:
            raise ValueError("chord_duration_range must satisfy 0 < low <= high")
        unknown = set(self.quality_weights) - set(QUALITIES)
        if unknown:
            raise ValueError(f"unknown qualities in weights: {sorted(unknown)}")
        if any(w < 0 for w in self.quality_weights.values()) or sum(self.quality_weights.values()) <= 0:
            raise ValueError("quality weights must be non-negative with positive sum")
        if not 0 <= self.no_chord_rate <= 1:
            raise ValueError("no_chord_rate must lie in [0, 1]")
        if self.song_duration <= 0 or self.n_songs < 1:
            raise ValueError("need at least one song of positive duration")

    def quality_probabilities(self) -> np.ndarray:
        w = np.array([self.quality_weights.get(q, 0.0) for q in QUALITIES], dtype=np.float64)
        return w / w.sum()


def song_streams(spec: SynthSpec, index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (label, audio) generators for song ``index``."""
    child = np.random.SeedSequence(spec.seed).spawn(spec.n_songs)[index]
    labels, audio = child.spawn(2)
    return np.random.default_rng(labels), np.random.default_rng(audio)


def _draw_chord(spec: SynthSpec, rng: np.random.Generator, probs: np.ndarray) -> Chord:
    if rng.random() < spec.no_chord_rate:
        return NO_CHORD
    root = int(rng.integers(12))
    return Chord(root, QUALITIES[int(rng.choice(len(QUALITIES), p=probs))])


def generate_progression(spec: SynthSpec, rng: np.random.Generator) -> Timeline:
    """Random chords with grid-quantized durations; equal neighbours are re-drawn."""
    probs = spec.quality_probabilities()
    lo, hi = spec.chord_duration_range
    rows = []
    t = 0.0
    prev = None
    while t < spec.song_duration - 1e-9:
        chord = _draw_chord(spec, rng, probs)
        for _ in range(100):
            if chord != prev:
                break
            chord = _draw_chord(spec, rng, probs)
        length = max(GRID_SECONDS, round(rng.uniform(lo, hi) / GRID_SECONDS) * GRID_SECONDS)
        end = min(round(t + length, 9), spec.song_duration)
        rows.append((t, end, chord))
        t, prev = end, chord
    return Timeline.from_intervals(rows, spec.song_duration)


def note_frequency(midi: int) -> float:
    return 440.0 * 2.0 ** ((midi - 69) / 12)


def chord_notes(chord: Chord, octaves=(3, 4, 5)) -> list[int]:
    """MIDI notes: the chord's template stacked on the root in each octave."""
    if not chord.is_pitched:
        return []
    return [12 * (o + 1) + chord.root + t for o in octaves for t in sorted(TEMPLATES[chord.quality])]


def render_audio(timeline: Timeline, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Float64 waveform at ``spec.sample_rate``; peak kept below 1."""
    sr = spec.sample_rate
    n_total = int(round(timeline.duration * sr))
    out = np.zeros(n_total)
    ramp_n = max(1, int(round(spec.ramp_seconds * sr)))
    nyquist = sr / 2
    for iv in timeline.intervals:
        a, b = int(round(iv.onset * sr)), min(n_total, int(round(iv.offset * sr)))
        n = b - a
        if n <= 0:
            continue
        notes = chord_notes(iv.chord, spec.octaves)
        if not notes:
            continue
        freqs, amps = [], []
        for midi in notes:
            f0 = note_frequency(midi)
            for h, amp in enumerate(spec.partials, start=1):
                if h * f0 < nyquist:
                    freqs.append(h * f0)
                    amps.append(amp)
        phases = rng.uniform(0, 2 * np.pi, size=len(freqs))
        # float32 phases stay accurate because t restarts at every chord
        t = (np.arange(n) / sr).astype(np.float32)
        arg = np.outer(np.float32(2 * np.pi) * np.asarray(freqs, dtype=np.float32), t)
        arg += phases.astype(np.float32)[:, None]
        seg = (np.asarray(amps, dtype=np.float32) @ np.sin(arg)).astype(np.float64)
        seg /= len(notes)
        r = min(ramp_n, n // 2)
        if r:
            ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
            seg[:r] *= ramp
            seg[n - r :] *= ramp[::-1]
        out[a:b] = seg
    out += spec.noise_level * rng.standard_normal(n_total)
    peak = np.max(np.abs(out))
    if peak > 0.99:
        out *= 0.99 / peak
    return out


def fold_assignment(spec: SynthSpec, n_folds: int = N_FOLDS) -> list[int]:
    """Balanced folds from a seeded permutation of song indices."""
    order = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xF01D])).permutation(spec.n_songs)
    folds = [0] * spec.n_songs
    for rank, idx in enumerate(order):
        folds[int(idx)] = rank % n_folds
    return folds


@dataclass
class SynthSong:
    song_id: str
    timeline: Timeline
    audio: np.ndarray
    fold: int


def song_id(index: int) -> str:
    return f"song_{index:04d}"


def generate_song(spec: SynthSpec, index: int, fold: int = 0, with_audio: bool = True) -> SynthSong:
    label_rng, audio_rng = song_streams(spec, index)
    timeline = generate_progression(spec, label_rng)
    audio = render_audio(timeline, spec, audio_rng) if with_audio else np.zeros(0)
    return SynthSong(song_id(index), timeline, audio, fold)


def generate_corpus(spec: SynthSpec, with_audio: bool = True) -> Iterator[SynthSong]:
    folds = fold_assignment(spec)
    for i in range(spec.n_songs):
        yield generate_song(spec, i, folds[i], with_audio)


def write_corpus(spec: SynthSpec, out_dir: str | Path) -> Path:
    """Write ``<id>.wav`` + ``<id>.lab`` per song and ``manifest.jsonl``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for song in generate_corpus(spec):
        write_wav(out_dir / f"{song.song_id}.wav", song.audio, spec.sample_rate)
        write_lab(song.timeline, out_dir / f"{song.song_id}.lab")
        records.append(
            ManifestRecord(song.song_id, f"{song.song_id}.wav", f"{song.song_id}.lab", song.fold, song.timeline.duration)
        )
    manifest = out_dir / "manifest.jsonl"
    write_manifest(records, manifest)
    return manifest


# --- learnability gate ----------------------------------------------------------


def _template_matrix() -> tuple[np.ndarray, list[Chord]]:
    chords = [c for c in VOCABULARY if c.is_pitched]
    mat = np.zeros((len(chords), 12))
    for i, c in enumerate(chords):
        mat[i, sorted(chord_to_pitch_classes(c))] = 1.0
    mat /= np.linalg.norm(mat, axis=1, keepdims=True)
    return mat, chords


def template_root_accuracy(
    pairs,
    quality_weights: Mapping[str, float] | None = None,
    hop: float = GRID_SECONDS,
) -> float:
    """Root accuracy of a chroma/template-correlation classifier.

    ``pairs`` yields ``(spectrogram, timeline)``. Each ground-truth pitched
    interval is classified by the cosine between its mean chroma and each
    chord's pitch-class template; exact ties (e.g. C:maj6 vs A:min7) go to
    the chord with the larger prior weight. Accuracy is duration-weighted.
    """
    weights = quality_weights or DEFAULT_QUALITY_WEIGHTS
    mat, chords = _template_matrix()
    prior = np.array([weights.get(c.quality, 0.0) for c in chords])
    correct = total = 0.0
    for spec, timeline in pairs:
        ch = chroma(spec)
        for iv in timeline.intervals:
            if not iv.chord.is_pitched:
                continue
            a = int(math.floor(iv.onset / hop + 0.5))
            b = int(math.floor(iv.offset / hop + 0.5))
            if b <= a:
                continue
            v = ch[a:b].mean(axis=0)
            v = v - v.min()
            norm = np.linalg.norm(v)
            if norm == 0:
                continue
            scores = mat @ (v / norm)
            scores = np.round(scores, 9) + 1e-12 * prior
            guess = chords[int(np.argmax(scores))]
            total += iv.length
            if guess.root == iv.chord.root:
                correct += iv.length
    return correct / total if total else math.nan
