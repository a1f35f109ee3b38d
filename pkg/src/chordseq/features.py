"""Constant-Q spectrogram frontend.

Frames are 0.1 s apart (hop 4410 at 44.1 kHz) and centred on
``(i + 0.5) * hop``, the same instants at which frame labels are sampled.
144 bins span 6 octaves from C1 at 24 bins per octave. Magnitudes are
compressed as ``log(1 + 1000 * |X|)`` after scaling the song's waveform to
unit peak.

The transform uses spectral kernels (one Hann-windowed complex exponential per
bin, ``Q = 1 / (2 ** (1 / 24) - 1)``) applied to the FFT of each frame. The
signal is first decimated by an integer factor that divides the hop, which
is exact up to the anti-aliasing filter's passband ripple because the top bin
sits near 2 kHz.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.signal
import scipy.sparse
from scipy.io import wavfile

from chordseq.annotation import FRAMES_PER_SEGMENT

SAMPLE_RATE = 44100
HOP_LENGTH = 4410
FMIN_C1 = 440.0 * 2.0 ** (-45 / 12)  # C1, 32.7032 Hz
BINS_PER_OCTAVE = 24
N_BINS = 144
LOG_GAIN = 1000.0
MAX_PITCH_SHIFT = 5

CACHE_ENV = "CHORDSEQ_CACHE"


@dataclass(frozen=True)
class CQTParams:
    sample_rate: int = SAMPLE_RATE
    hop_length: int = HOP_LENGTH
    fmin: float = FMIN_C1
    bins_per_octave: int = BINS_PER_OCTAVE
    n_bins: int = N_BINS
    log_gain: float = LOG_GAIN
    decimation: int | None = None  # None: largest safe divisor of the hop
    normalize: bool = True

    @property
    def q(self) -> float:
        return 1.0 / (2.0 ** (1.0 / self.bins_per_octave) - 1.0)

    def center_frequencies(self) -> np.ndarray:
        return self.fmin * 2.0 ** (np.arange(self.n_bins) / self.bins_per_octave)

    def resolved_decimation(self) -> int:
        if self.decimation is not None:
            if self.hop_length % self.decimation:
                raise ValueError("decimation must divide the hop length")
            return self.decimation
        top = self.center_frequencies()[-1] * (1 + 2 / self.q)
        best = 1
        for d in range(1, self.hop_length + 1):
            if self.hop_length % d == 0 and top < 0.8 * self.sample_rate / (2 * d):
                best = d
        return best

    def cache_key(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


DEFAULT_PARAMS = CQTParams()


@dataclass(frozen=True)
class _Kernel:
    sample_rate: float
    hop: int
    nfft: int
    matrix: scipy.sparse.csr_matrix  # (nfft // 2 + 1, n_bins), conjugated


@functools.lru_cache(maxsize=8)
def _kernel(params: CQTParams) -> _Kernel:
    dec = params.resolved_decimation()
    sr = params.sample_rate / dec
    freqs = params.center_frequencies()
    lengths = params.q * sr / freqs
    nfft = 1 << int(math.ceil(math.log2(lengths[0])))
    n = np.arange(nfft) - nfft // 2
    rows, cols, vals = [], [], []
    for k, (f, length) in enumerate(zip(freqs, lengths)):
        window = np.where(np.abs(n) <= length / 2, 0.5 + 0.5 * np.cos(2 * np.pi * n / length), 0.0)
        atom = window / length * np.exp(2j * np.pi * f * n / sr)
        spec = np.fft.fft(atom)[: nfft // 2 + 1]
        keep = np.abs(spec) >= 0.0054 * np.abs(spec).max()
        idx = np.nonzero(keep)[0]
        rows.append(idx)
        cols.append(np.full(idx.size, k))
        vals.append(np.conj(spec[idx]) / nfft)
    matrix = scipy.sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nfft // 2 + 1, params.n_bins),
    )
    return _Kernel(sr, params.hop_length // dec, nfft, matrix)


def cqt_magnitude(samples: np.ndarray, params: CQTParams = DEFAULT_PARAMS) -> np.ndarray:
    """Linear CQT magnitudes, shape ``(len(samples) // hop, n_bins)``.

    The input is used as given (no normalization, no log).
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError("expected a mono waveform")
    n_frames = len(samples) // params.hop_length
    if n_frames == 0:
        return np.zeros((0, params.n_bins), dtype=np.float32)
    kern = _kernel(params)
    dec = params.resolved_decimation()
    x = scipy.signal.resample_poly(samples, 1, dec) if dec > 1 else samples
    half = kern.nfft // 2
    if len(x) > 1:
        x = np.pad(x, half, mode="reflect")
    else:
        x = np.pad(x, half)
    centers = (np.arange(n_frames) * kern.hop + kern.hop // 2)  # padded index of frame start
    out = np.empty((n_frames, params.n_bins), dtype=np.float32)
    window = np.lib.stride_tricks.sliding_window_view(x, kern.nfft)
    for lo in range(0, n_frames, 128):
        frames = window[centers[lo : lo + 128]]
        spec = np.fft.rfft(frames, axis=1)
        out[lo : lo + 128] = np.abs(spec @ kern.matrix)
    return out


def cqt(samples: np.ndarray, sample_rate: int = SAMPLE_RATE, params: CQTParams = DEFAULT_PARAMS) -> np.ndarray:
    """Log-amplitude CQT spectrogram of a song or segment, ``(frames, 144)`` float32.

    A 25.6 s input yields exactly 256 frames.

    Raises:
        ValueError: if ``sample_rate`` differs from the configured rate.
    """
    if sample_rate != params.sample_rate:
        raise ValueError(f"expected {params.sample_rate} Hz audio, got {sample_rate} Hz (resample first)")
    samples = np.asarray(samples, dtype=np.float64)
    if params.normalize:
        peak = np.max(np.abs(samples)) if samples.size else 0.0
        if peak > 0:
            samples = samples / peak
    mag = cqt_magnitude(samples, params)
    return np.log1p(params.log_gain * mag).astype(np.float32)


def crop_frames(spec: np.ndarray, start: int, n_frames: int = FRAMES_PER_SEGMENT) -> np.ndarray:
    """Frames ``[start, start + n_frames)``, zero-padded past the end."""
    out = np.zeros((n_frames, spec.shape[1]), dtype=spec.dtype)
    chunk = spec[start : start + n_frames]
    out[: len(chunk)] = chunk
    return out


def pitch_shift_spectrogram(spec: np.ndarray, semitones: int) -> np.ndarray:
    """Shift along frequency by two bins per semitone, zero-filling vacated bins."""
    if abs(semitones) > MAX_PITCH_SHIFT:
        raise ValueError(f"pitch shift limited to +/-{MAX_PITCH_SHIFT} semitones")
    bins = 2 * semitones
    out = np.zeros_like(spec)
    if bins == 0:
        out[...] = spec
    elif bins > 0:
        out[..., bins:] = spec[..., :-bins]
    else:
        out[..., :bins] = spec[..., -bins:]
    return out


def chroma(spec: np.ndarray) -> np.ndarray:
    """Fold bins onto 12 pitch classes using the on-semitone bins only."""
    semis = spec[..., ::2]
    out = np.zeros(spec.shape[:-1] + (12,), dtype=np.float64)
    for pc in range(12):
        out[..., pc] = semis[..., pc::12].sum(axis=-1)
    return out


# --- audio I/O -------------------------------------------------------------


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Mono float64 samples in [-1, 1] from 16/24/32-bit PCM or float WAV."""
    sr, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit samples into int32
        x = data / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128) / 128.0
    else:
        x = data.astype(np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    return x, int(sr)


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """16-bit PCM; the caller is responsible for keeping samples within [-1, 1]."""
    pcm = np.clip(np.round(np.asarray(samples) * 32767), -32768, 32767).astype("<i2")
    wavfile.write(path, sample_rate, pcm)


# --- spectrogram container -----------------------------------------------------
#
# Layout (little-endian): magic b"CQTS", u16 version, u16 reserved,
# u32 rows, u32 cols, then rows * cols float32 values in row-major order.

_SPEC_MAGIC = b"CQTS"
_SPEC_VERSION = 1
_SPEC_HEADER = struct.Struct("<4sHHII")


def save_spectrogram(path: str | Path, spec: np.ndarray) -> None:
    spec = np.ascontiguousarray(spec, dtype="<f4")
    if spec.ndim != 2:
        raise ValueError("spectrogram must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_SPEC_HEADER.pack(_SPEC_MAGIC, _SPEC_VERSION, 0, *spec.shape))
        fh.write(spec.tobytes())


def load_spectrogram(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_SPEC_HEADER.size)
        if len(header) != _SPEC_HEADER.size:
            raise ValueError(f"{path}: truncated spectrogram header")
        magic, version, _, rows, cols = _SPEC_HEADER.unpack(header)
        if magic != _SPEC_MAGIC:
            raise ValueError(f"{path}: not a spectrogram file")
        if version != _SPEC_VERSION:
            raise ValueError(f"{path}: unsupported spectrogram version {version}")
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, found {data.size}")
    return data.reshape(rows, cols).astype(np.float32)


def cache_dir() -> Path | None:
    value = os.environ.get(CACHE_ENV)
    return Path(value) if value else None


def cached_cqt(samples: np.ndarray, sample_rate: int, params: CQTParams = DEFAULT_PARAMS, directory: Path | None = None) -> np.ndarray:
    """:func:`cqt` with an on-disk cache keyed by audio content and parameters."""
    directory = directory if directory is not None else cache_dir()
    if directory is None:
        return cqt(samples, sample_rate, params)
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(samples, dtype="<f8").tobytes())
    h.update(str(sample_rate).encode())
    h.update(params.cache_key().encode())
    path = Path(directory) / f"{h.hexdigest()[:32]}.cqts"
    if path.exists():
        return load_spectrogram(path)
    spec = cqt(samples, sample_rate, params)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    save_spectrogram(tmp, spec)
    os.replace(tmp, path)
    return spec
