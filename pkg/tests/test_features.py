import numpy as np
import pytest

from chordseq.features import (
    CQTParams,
    DEFAULT_PARAMS,
    FMIN_C1,
    cached_cqt,
    chroma,
    cqt,
    cqt_magnitude,
    crop_frames,
    load_spectrogram,
    pitch_shift_spectrogram,
    read_wav,
    save_spectrogram,
    write_wav,
)

SR = 44100
SEG = int(25.6 * SR)


def tone(freq, seconds=1.0, amp=0.5):
    t = np.arange(int(seconds * SR)) / SR
    return amp * np.sin(2 * np.pi * freq * t)


def peak_bin(spec):
    return int(np.argmax(spec[len(spec) // 2]))


def test_fmin_is_c1():
    assert FMIN_C1 == pytest.approx(32.7032, abs=1e-4)


def test_segment_shape():
    spec = cqt(np.zeros(SEG))
    assert spec.shape == (256, 144)
    assert spec.dtype == np.float32
    assert cqt(tone(440.0, 25.6)).shape == (256, 144)


def test_silence_is_zero():
    assert not cqt(np.zeros(SR)).any()


@pytest.mark.parametrize("freq, expected", [(FMIN_C1, 0), (2 * FMIN_C1, 24), (440.0, 24 * 3 + 18)])
def test_calibration_examples(freq, expected):
    assert peak_bin(cqt(tone(freq, 2.0))) == expected


def test_calibration_all_bins():
    freqs = DEFAULT_PARAMS.center_frequencies()
    for b, f in enumerate(freqs):
        got = peak_bin(cqt(tone(f, 0.6)))
        tol = 1 if b < 24 else 0
        assert abs(got - b) <= tol, (b, got)


def test_wrong_sample_rate():
    with pytest.raises(ValueError, match="22050"):
        cqt(np.zeros(22050), sample_rate=22050)


def test_energy_monotone():
    params = CQTParams(normalize=False)
    rng = np.random.default_rng(0)
    x = 0.1 * rng.standard_normal(SR) + tone(220.0)
    lo, hi = cqt(x, params=params), cqt(2.5 * x, params=params)
    assert (hi >= lo).all()


def test_decimation_agrees_with_full_rate():
    x = tone(261.63, 1.0) + tone(1500.0, 1.0, 0.2)
    full = cqt_magnitude(x, CQTParams(decimation=1))
    fast = cqt_magnitude(x)
    assert np.abs(full - fast).max() < 1e-2 * full.max()


def test_pitch_shift_examples():
    spec = np.zeros((3, 144), dtype=np.float32)
    spec[:, 10] = 1.0
    assert np.array_equal(pitch_shift_spectrogram(spec, 0), spec)
    up = pitch_shift_spectrogram(spec, 1)
    assert up[:, 12].all() and up.sum() == 3
    rng = np.random.default_rng(1)
    x = rng.random((4, 144)).astype(np.float32)
    for k in range(-5, 6):
        back = pitch_shift_spectrogram(pitch_shift_spectrogram(x, k), -k)
        keep = slice(0, 144 - 2 * k) if k >= 0 else slice(-2 * k, None)
        assert np.array_equal(back[:, keep], x[:, keep])
        assert (np.count_nonzero(back == 0, axis=1) >= 2 * abs(k)).all()
    with pytest.raises(ValueError):
        pitch_shift_spectrogram(x, 6)


def test_pitch_shift_matches_audio_shift():
    a = cqt(tone(220.0, 1.0))
    b = cqt(tone(220.0 * 2 ** (3 / 12), 1.0))
    assert peak_bin(pitch_shift_spectrogram(a, 3)) == peak_bin(b)


def test_crop_frames_pads():
    spec = np.ones((10, 144), dtype=np.float32)
    out = crop_frames(spec, 5)
    assert out.shape == (256, 144)
    assert out[:5].all() and not out[5:].any()


def test_chroma_of_a440():
    c = chroma(cqt(tone(440.0, 1.0)))
    assert int(np.argmax(c[5])) == 9


def test_container_round_trip(tmp_path):
    spec = np.random.default_rng(0).random((256, 144)).astype(np.float32)
    path = tmp_path / "x.cqts"
    save_spectrogram(path, spec)
    assert np.array_equal(load_spectrogram(path), spec)
    raw = path.read_bytes()
    assert raw[:4] == b"CQTS"
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="not a spectrogram"):
        load_spectrogram(path)
    path.write_bytes(raw[:-4])
    with pytest.raises(ValueError, match="expected"):
        load_spectrogram(path)


def test_wav_16bit_round_trip(tmp_path):
    x = tone(440.0, 0.2)
    write_wav(tmp_path / "a.wav", x)
    y, sr = read_wav(tmp_path / "a.wav")
    assert sr == SR
    assert np.abs(x - y).max() < 1e-4


def test_wav_24bit_and_stereo(tmp_path):
    # hand-built 24-bit stereo PCM; the second channel is silent so the downmix halves it
    import struct
    x = tone(440.0, 0.1)
    pcm = np.round(x * (2**23 - 1)).astype(np.int32)
    frames = bytearray()
    for v in pcm:
        frames += int(v).to_bytes(3, "little", signed=True) + b"\x00\x00\x00"
    fmt = struct.pack("<HHIIHH", 1, 2, SR, SR * 6, 6, 24)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(frames)) + bytes(frames)
    path = tmp_path / "b.wav"
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    y, sr = read_wav(path)
    assert sr == SR
    assert np.abs(y - x / 2).max() < 1e-6


def test_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("CHORDSEQ_CACHE", str(tmp_path))
    x = tone(330.0, 0.5)
    a = cached_cqt(x, SR)
    files = list(tmp_path.glob("*.cqts"))
    assert len(files) == 1
    b = cached_cqt(x, SR)
    assert np.array_equal(a, b)
    cached_cqt(x, SR, CQTParams(log_gain=10.0))
    assert len(list(tmp_path.glob("*.cqts"))) == 2
