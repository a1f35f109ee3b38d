import numpy as np
import pytest

from chordseq.annotation import read_lab, read_manifest
from chordseq.chords import NO_CHORD, QUALITIES, Chord
from chordseq.annotation import Timeline
from chordseq.features import chroma, cqt, read_wav
from chordseq.synthdata import (
    DEFAULT_QUALITY_WEIGHTS,
    SynthSpec,
    fold_assignment,
    generate_progression,
    generate_song,
    render_audio,
    template_root_accuracy,
    write_corpus,
)


def test_default_weights_normalized():
    assert sum(DEFAULT_QUALITY_WEIGHTS.values()) == pytest.approx(1.0)
    assert set(DEFAULT_QUALITY_WEIGHTS) == set(QUALITIES)


def test_progression_deterministic():
    spec = SynthSpec(seed=3)
    a = generate_progression(spec, np.random.default_rng(1))
    b = generate_progression(spec, np.random.default_rng(1))
    assert a == b
    assert a.duration == 60.0
    assert a.is_quantized()
    for x, y in zip(a.intervals, a.intervals[1:]):
        assert x.chord != y.chord


def test_all_major():
    spec = SynthSpec(quality_weights={"maj": 1.0}, no_chord_rate=0.0)
    tl = generate_progression(spec, np.random.default_rng(0))
    assert {iv.chord.quality for iv in tl} == {"maj"}


def test_quality_frequencies():
    spec = SynthSpec(no_chord_rate=0.0, song_duration=10_000 * 2.5 * 1.2)
    tl = generate_progression(spec, np.random.default_rng(0))
    labels = [iv.chord.quality for iv in tl][:10_000]
    assert len(labels) == 10_000
    probs = spec.quality_probabilities()
    for q, p in zip(QUALITIES, probs):
        assert labels.count(q) / len(labels) == pytest.approx(p, abs=0.02)


def test_invalid_spec():
    with pytest.raises(ValueError):
        SynthSpec(quality_weights={"maj": -1.0})
    with pytest.raises(ValueError):
        SynthSpec(chord_duration_range=(2.0, 1.0))
    with pytest.raises(ValueError):
        SynthSpec(quality_weights={"maj9": 1.0})


def test_spectral_peaks_of_c_major():
    spec = SynthSpec()
    tl = Timeline.from_intervals([(0.0, 2.0, Chord(0, "maj"))])
    audio = render_audio(tl, spec, np.random.default_rng(0))
    c = chroma(cqt(audio)).mean(axis=0)
    assert set(np.argsort(c)[-3:]) == {0, 4, 7}


def test_no_chord_is_noise_only():
    spec = SynthSpec(noise_level=0.02)
    tl = Timeline.constant(NO_CHORD, 1.0)
    audio = render_audio(tl, spec, np.random.default_rng(0))
    assert audio.std() == pytest.approx(0.02, rel=0.05)


def test_song_deterministic_and_streams_independent():
    spec = SynthSpec(seed=11, song_duration=5.0)
    a, b = generate_song(spec, 2), generate_song(spec, 2)
    assert a.timeline == b.timeline
    assert np.array_equal(a.audio, b.audio)
    assert generate_song(spec, 2, with_audio=False).timeline == a.timeline
    assert generate_song(spec, 3).timeline != a.timeline
    assert np.abs(a.audio).max() < 1.0


def test_folds_balanced():
    spec = SynthSpec(seed=5, n_songs=200)
    folds = fold_assignment(spec)
    assert [folds.count(k) for k in range(5)] == [40] * 5
    assert folds == fold_assignment(SynthSpec(seed=5, n_songs=200))


def test_write_corpus(tmp_path):
    spec = SynthSpec(seed=1, n_songs=2, song_duration=3.0)
    manifest = write_corpus(spec, tmp_path / "a")
    recs = read_manifest(manifest)
    assert len(recs) == 2
    audio, sr = read_wav(recs[0].audio)
    assert sr == 44100 and len(audio) == 3 * 44100
    assert read_lab(recs[0].lab) == generate_song(spec, 0, with_audio=False).timeline
    write_corpus(spec, tmp_path / "b")
    for name in ("song_0000.wav", "song_0001.lab", "manifest.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes() or name == "manifest.jsonl"


def test_template_baseline_on_small_corpus():
    spec = SynthSpec(seed=2, n_songs=3, song_duration=30.0)
    pairs = []
    for i in range(spec.n_songs):
        s = generate_song(spec, i)
        pairs.append((cqt(s.audio), s.timeline))
    assert template_root_accuracy(pairs) >= 0.95
