"""Inference: grammar-masked greedy decoding and full-song stitching."""

from __future__ import annotations

import math

import numpy as np
import torch

from chordseq.annotation import FRAMES_PER_SEGMENT, SEGMENT_SECONDS, Timeline, frames_to_timeline, stitch_segments
from chordseq.chords import chord_from_index
from chordseq.features import crop_frames
from chordseq.model import ChordTransformer
from chordseq.tokenizer import EOS, SOS, GrammarState, Kind, advance, decode, next_token_mask


def _room_mask(state: GrammarState, length: int, max_len: int, event_len: int, tokens) -> np.ndarray | None:
    """Forbid starting a new event that could not be completed (plus EOS) in time."""
    if state.kind in (Kind.SOS, Kind.CHORD, Kind.QUALITY) and length + event_len + 1 > max_len:
        return ~tokens.kind_mask(Kind.TIME)
    return None


@torch.no_grad()
def greedy_masked_decode_batch(
    model: ChordTransformer,
    specs: torch.Tensor | np.ndarray,
    max_len: int | None = None,
) -> list[list[int]]:
    """Greedy decoding of a batch of ``(256, 144)`` spectrograms.

    At each step logits outside the grammar mask are set to ``-inf`` and the
    argmax is taken (ties go to the lowest token id). Decoding stops at EOS or
    at ``max_len`` tokens; an event is only started when it can be completed
    and closed with EOS within the length limit, so every output decodes in
    strict mode.
    """
    was_training = model.training
    model.eval()
    tokens = model.token_set
    max_len = max_len or model.config.max_target_len
    specs = torch.as_tensor(np.asarray(specs) if not isinstance(specs, torch.Tensor) else specs)
    if specs.dim() == 2:
        specs = specs[None]
    dtype = next(model.parameters()).dtype
    memory = model.encode(specs.to(dtype))
    batch = memory.shape[0]
    seqs = [[SOS] for _ in range(batch)]
    states = [GrammarState() for _ in range(batch)]
    active = list(range(batch))
    while active:
        prefix = torch.tensor([seqs[i] for i in active], dtype=torch.long)
        logits = model.decode(prefix, memory[active])[:, -1].double().numpy()
        still = []
        for row, i in enumerate(active):
            mask = next_token_mask(states[i], tokens)
            room = _room_mask(states[i], len(seqs[i]), max_len, tokens.event_length, tokens)
            if room is not None:
                mask &= room
            scores = np.where(mask, logits[row], -np.inf)
            tok = int(np.argmax(scores))
            seqs[i].append(tok)
            states[i] = advance(states[i], tok, tokens)
            if tok != EOS and len(seqs[i]) < max_len:
                still.append(i)
        active = still
    model.train(was_training)
    return seqs


def greedy_masked_decode(model: ChordTransformer, spec, max_len: int | None = None) -> list[int]:
    return greedy_masked_decode_batch(model, spec, max_len)[0]


def song_segments(spec: np.ndarray, duration: float) -> list[np.ndarray]:
    """Consecutive 256-frame crops covering ``duration`` seconds, zero-padded."""
    n = max(1, math.ceil(duration / SEGMENT_SECONDS - 1e-6))
    return [crop_frames(spec, i * FRAMES_PER_SEGMENT) for i in range(n)]


def predict_song(model: ChordTransformer, spec: np.ndarray, duration: float, batch_size: int = 16) -> Timeline:
    """Decode every 25.6 s tile of a song spectrogram and stitch the result."""
    crops = song_segments(spec, duration)
    parts: list[Timeline] = []
    rep = model.config.representation
    for lo in range(0, len(crops), batch_size):
        for ids in greedy_masked_decode_batch(model, np.stack(crops[lo : lo + batch_size])):
            parts.append(decode(ids, rep, strict=False))
    return stitch_segments(parts, duration)


@torch.no_grad()
def frame_decode(model: ChordTransformer, spec) -> Timeline:
    """Per-frame argmax of the frame head, runs merged, no smoothing."""
    was_training = model.training
    model.eval()
    spec = torch.as_tensor(np.asarray(spec))
    logits = model.frame_classify(spec.to(next(model.parameters()).dtype))[0]
    model.train(was_training)
    labels = logits.argmax(dim=-1).tolist()
    return frames_to_timeline([chord_from_index(i) for i in labels], duration=SEGMENT_SECONDS)


def frame_predict_song(model: ChordTransformer, spec: np.ndarray, duration: float) -> Timeline:
    parts = [frame_decode(model, crop) for crop in song_segments(spec, duration)]
    return stitch_segments(parts, duration)
