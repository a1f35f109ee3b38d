"""Encoder pre-training, seq2seq / frame-level training, and fold orchestration."""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from chordseq.annotation import (
    GRID_SECONDS,
    SEGMENT_SECONDS,
    Segment,
    Timeline,
    pad_to_grid,
    quantize,
    sample_frames,
    slice_segment,
    tile_song,
)
from chordseq.chords import vocab_index
from chordseq.decode import frame_predict_song, predict_song
from chordseq.errors import TrainingError
from chordseq.features import MAX_PITCH_SHIFT, crop_frames, pitch_shift_spectrogram
from chordseq.metrics import REPORT_COLUMNS, evaluate, evaluate_corpus, wcsr
from chordseq.model import ChordTransformer, ModelConfig, pool_embedding
from chordseq.tokenizer import PAD, crop_offset, encode

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    representation: str = "split"
    batch_size: int = 32
    initial_lr: float = 1e-4
    lr_halving_patience: int = 3
    early_stop_patience: int = 10
    max_epochs: int = 100
    pretrain_epochs: int = 50
    pitch_shift: int = 5  # max |semitones|; 0 disables
    random_crop: bool = True
    crops_per_song: int | None = None  # None: one per 25.6 s tile
    pretrain: bool = False
    pretrained_encoder: str | None = None
    cosine_remap: bool = False
    objective: str = "seq2seq"  # seq2seq | frame
    seed: int = 0
    time_budget: float | None = None  # seconds; stops fit early when exceeded
    frame_aux_weight: float = 0.0  # weight of an auxiliary frame loss during seq2seq training
    model: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if self.lr_halving_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patiences must be positive")
        if not 0 <= self.pitch_shift <= MAX_PITCH_SHIFT:
            raise ValueError(f"pitch_shift must lie in 0..{MAX_PITCH_SHIFT}")
        if self.objective not in ("seq2seq", "frame"):
            raise ValueError("objective must be 'seq2seq' or 'frame'")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TrainConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> TrainConfig:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def model_config(self) -> ModelConfig:
        return ModelConfig(representation=self.representation, **self.model)


@dataclass
class Song:
    """A song ready for training: full spectrogram and grid-quantized labels."""

    song_id: str
    spec: np.ndarray
    timeline: Timeline
    fold: int = 0

    @classmethod
    def create(cls, song_id: str, spec: np.ndarray, timeline: Timeline, fold: int = 0) -> Song:
        return cls(song_id, np.asarray(spec, dtype=np.float32), pad_to_grid(quantize(timeline)), fold)

    @property
    def duration(self) -> float:
        return self.timeline.duration


@dataclass
class Example:
    spec: np.ndarray  # (256, 144)
    segment: Segment


# --- data -------------------------------------------------------------------


def segment_example(song: Song, start: float, semitones: int = 0) -> Example:
    seg = slice_segment(song.timeline, start, song_id=song.song_id)
    spec = crop_frames(song.spec, int(round(start / GRID_SECONDS)))
    if semitones:
        spec = pitch_shift_spectrogram(spec, semitones)
        seg = Segment(seg.timeline.transpose(semitones), seg.song_id, seg.start)
    return Example(spec, seg)


def tiled_examples(songs: Iterable[Song]) -> list[Example]:
    out = []
    for song in songs:
        for seg in tile_song(song.timeline, song.song_id):
            out.append(Example(crop_frames(song.spec, int(round(seg.start / GRID_SECONDS))), seg))
    return out


def epoch_examples(songs: Sequence[Song], config: TrainConfig, rng: np.random.Generator) -> list[Example]:
    """One epoch of (possibly augmented) training segments in shuffled order."""
    out = []
    for song in songs:
        n = config.crops_per_song or max(1, math.ceil(song.duration / SEGMENT_SECONDS - 1e-6))
        for i in range(n):
            start = crop_offset(song.duration, rng) if config.random_crop else min(i * SEGMENT_SECONDS, max(0.0, song.duration - SEGMENT_SECONDS))
            k = int(rng.integers(-config.pitch_shift, config.pitch_shift + 1)) if config.pitch_shift else 0
            out.append(segment_example(song, round(start, 9), k))
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def batches(items: Sequence, size: int) -> Iterable[Sequence]:
    for lo in range(0, len(items), size):
        yield items[lo : lo + size]


def pad_tokens(seqs: Sequence[Sequence[int]], max_len: int | None = None) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    if max_len is not None and width > max_len:
        raise TrainingError(f"target sequence of length {width} exceeds max_target_len {max_len}")
    out = torch.full((len(seqs), width), PAD, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.as_tensor(s, dtype=torch.long)
    return out


def stack_specs(examples: Sequence[Example], dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.stack([e.spec for e in examples])).to(dtype)


# --- losses -------------------------------------------------------------------


def seq2seq_loss(
    model: ChordTransformer,
    specs: torch.Tensor,
    targets: torch.Tensor,
    frames: torch.Tensor | None = None,
    frame_weight: float = 0.0,
) -> torch.Tensor:
    """Teacher-forced cross-entropy; PAD targets are excluded from the mean.

    With ``frame_weight > 0`` the frame-head cross-entropy against ``frames``
    is added, computed from the same encoder states.
    """
    memory = model.encode(specs)
    logits = model.decode(targets[:, :-1], memory)
    loss = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets[:, 1:].reshape(-1), ignore_index=PAD)
    if frame_weight > 0:
        flog = model.frame_logits(memory)
        loss = loss + frame_weight * F.cross_entropy(flog.reshape(-1, flog.shape[-1]), frames.reshape(-1))
    return loss


def frame_targets(examples: Sequence[Example]) -> torch.Tensor:
    return torch.tensor(
        [[vocab_index(c) for c in sample_frames(e.segment.timeline, GRID_SECONDS)] for e in examples],
        dtype=torch.long,
    )


def frame_loss(model: ChordTransformer, specs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    logits = model.frame_classify(specs)
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1))


def sample_partners(batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """For each anchor, a uniformly drawn different index (independent per anchor)."""
    if batch_size < 2:
        raise TrainingError("pre-training needs a batch of at least two segments")
    j = rng.integers(0, batch_size - 1, size=batch_size)
    return j + (j >= np.arange(batch_size))


def similarity_targets(
    timelines: Sequence[Timeline], rng: np.random.Generator
) -> tuple[list[int], list[int], list[float]]:
    """Anchor/partner pairs with mirex WCSR targets; undefined pairs are redrawn once, then skipped."""
    partners = sample_partners(len(timelines), rng)
    anchors, others, targets = [], [], []
    for i, j in enumerate(partners):
        r = wcsr("mirex", timelines[i], timelines[j])
        if not r.defined:
            j = sample_partners(len(timelines), rng)[i]
            r = wcsr("mirex", timelines[i], timelines[j])
            if not r.defined:
                continue
        anchors.append(i)
        others.append(int(j))
        targets.append(r.score)
    return anchors, others, targets


def pretrain_loss(
    model: ChordTransformer,
    specs: torch.Tensor,
    anchors: Sequence[int],
    others: Sequence[int],
    targets: Sequence[float],
    cosine_remap: bool = False,
) -> torch.Tensor:
    """Mean squared error between embedding cosine similarity and chord similarity."""
    emb = pool_embedding(model.encode(specs))
    cos = F.cosine_similarity(emb[list(anchors)], emb[list(others)], dim=-1)
    if cosine_remap:
        cos = (cos + 1) / 2
    target = torch.as_tensor(targets, dtype=cos.dtype)
    return ((cos - target) ** 2).mean()


def _check_finite(loss: torch.Tensor, what: str) -> None:
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite {what} loss ({loss.item()}); try a lower learning rate")


def train_step(model, optimizer, specs: torch.Tensor, targets: torch.Tensor, frames=None, frame_weight: float = 0.0) -> float:
    model.train()
    loss = seq2seq_loss(model, specs, targets, frames, frame_weight)
    _check_finite(loss, "cross-entropy")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return loss.item()


def frame_train_step(model, optimizer, specs: torch.Tensor, targets: torch.Tensor) -> float:
    model.train()
    loss = frame_loss(model, specs, targets)
    _check_finite(loss, "frame cross-entropy")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return loss.item()


def encoder_optimizer(model: ChordTransformer, lr: float) -> torch.optim.Optimizer:
    """Adam over the encoder only; the decoder never receives updates."""
    return torch.optim.Adam(model.encoder_parameters(), lr=lr)


def pretrain_step(
    model: ChordTransformer,
    optimizer: torch.optim.Optimizer,
    specs: torch.Tensor,
    timelines: Sequence[Timeline],
    rng: np.random.Generator,
    cosine_remap: bool = False,
) -> float:
    """One similarity-regression update; ``optimizer`` should hold encoder parameters only."""
    model.train()
    anchors, others, targets = similarity_targets(timelines, rng)
    if not anchors:
        return math.nan
    loss = pretrain_loss(model, specs, anchors, others, targets, cosine_remap)
    _check_finite(loss, "pre-training")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return loss.item()


# --- schedule -------------------------------------------------------------------


class PlateauSchedule:
    """Halve the LR after ``halving_patience`` epochs without a new best
    validation loss; stop after ``stop_patience`` such epochs in a row."""

    def __init__(self, optimizer, halving_patience: int = 3, stop_patience: int = 10):
        self.optimizer = optimizer
        self.halving_patience = halving_patience
        self.stop_patience = stop_patience
        self.best = math.inf
        self.stale = 0
        self.since_halving = 0

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def step(self, val_loss: float) -> bool:
        """Record an epoch; returns True when training should stop."""
        if val_loss < self.best:
            self.best = val_loss
            self.stale = 0
            self.since_halving = 0
            return False
        self.stale += 1
        self.since_halving += 1
        if self.since_halving >= self.halving_patience:
            for group in self.optimizer.param_groups:
                group["lr"] /= 2
            self.since_halving = 0
        return self.stale >= self.stop_patience


# --- fit -------------------------------------------------------------------------


@dataclass
class FitResult:
    model: ChordTransformer
    history: list[dict]
    best_epoch: int
    best_val_loss: float
    optimizer_state: dict | None = None


def _evaluate_loss(model, examples: Sequence[Example], config: TrainConfig, kind: str, rng=None) -> float:
    model.eval()
    dtype = next(model.parameters()).dtype
    total = weight = 0.0
    with torch.no_grad():
        for batch in batches(examples, config.batch_size):
            specs = stack_specs(batch, dtype)
            if kind == "seq2seq":
                targets = pad_tokens([encode(e.segment, config.representation) for e in batch], model.config.max_target_len)
                n = int((targets[:, 1:] != PAD).sum())
                loss = seq2seq_loss(model, specs, targets)
            elif kind == "frame":
                n = len(batch)
                loss = frame_loss(model, specs, frame_targets(batch))
            else:
                if len(batch) < 2:
                    continue
                a, o, t = similarity_targets([e.segment.timeline for e in batch], rng)
                if not a:
                    continue
                n = len(a)
                loss = pretrain_loss(model, specs, a, o, t, config.cosine_remap)
            total += loss.item() * n
            weight += n
    return total / weight if weight else math.nan


def fit(
    model: ChordTransformer,
    train_songs: Sequence[Song],
    val_songs: Sequence[Song],
    config: TrainConfig,
    kind: str | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> FitResult:
    """Adam training with plateau LR halving and early stopping.

    ``kind`` is ``"seq2seq"``, ``"frame"`` or ``"pretrain"`` (defaults to
    ``config.objective``). The returned model carries the parameters of the
    best validation epoch.
    """
    kind = kind or config.objective
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, {"seq2seq": 1, "frame": 2, "pretrain": 3}[kind]]))
    dtype = next(model.parameters()).dtype
    if kind == "pretrain":
        params = model.encoder_parameters()
    elif kind == "frame":
        params = model.encoder_parameters() + list(model.frame_head.parameters())
    elif config.frame_aux_weight > 0:
        params = list(model.parameters())
    else:
        params = [p for n, p in model.named_parameters() if not n.startswith("frame_head")]
    optimizer = torch.optim.Adam(params, lr=config.initial_lr)
    schedule = PlateauSchedule(optimizer, config.lr_halving_patience, config.early_stop_patience)
    val_examples = tiled_examples(val_songs)
    max_epochs = config.pretrain_epochs if kind == "pretrain" else config.max_epochs

    best_state = copy.deepcopy(model.state_dict())
    best_epoch, history = 0, []
    started = time.perf_counter()
    for epoch in range(1, max_epochs + 1):
        examples = epoch_examples(train_songs, config, rng)
        losses = []
        for batch in batches(examples, config.batch_size):
            specs = stack_specs(batch, dtype)
            if kind == "seq2seq":
                targets = pad_tokens([encode(e.segment, config.representation) for e in batch], model.config.max_target_len)
                frames = frame_targets(batch) if config.frame_aux_weight > 0 else None
                losses.append(train_step(model, optimizer, specs, targets, frames, config.frame_aux_weight))
            elif kind == "frame":
                losses.append(frame_train_step(model, optimizer, specs, frame_targets(batch)))
            elif len(batch) >= 2:
                loss = pretrain_step(model, optimizer, specs, [e.segment.timeline for e in batch], rng, config.cosine_remap)
                if not math.isnan(loss):
                    losses.append(loss)
        val_rng = np.random.default_rng(config.seed + 7919)
        val_loss = _evaluate_loss(model, val_examples, config, kind, val_rng)
        if math.isnan(val_loss) and kind == "pretrain":
            raise TrainingError("validation split yields no defined similarity pairs; pre-training needs at least two validation segments")
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        record = {
            "epoch": epoch,
            "kind": kind,
            "train_loss": float(np.mean(losses)) if losses else math.nan,
            "val_loss": val_loss,
            "lr": schedule.lr,
            "elapsed": round(time.perf_counter() - started, 3),
        }
        improved = val_loss < schedule.best
        stop = schedule.step(val_loss)
        if improved:
            best_state = copy.deepcopy(model.state_dict())
            best_epoch = epoch
        history.append(record)
        log.info("%s epoch %d train %.4f val %.4f lr %.2e", kind, epoch, record["train_loss"], val_loss, record["lr"])
        if on_epoch is not None:
            on_epoch(record)
        if stop:
            break
        if config.time_budget is not None and time.perf_counter() - started > config.time_budget:
            log.info("time budget reached after epoch %d", epoch)
            break
    model.load_state_dict(best_state)
    return FitResult(model, history, best_epoch, schedule.best, optimizer.state_dict())


def build_model(config: TrainConfig) -> ChordTransformer:
    torch.manual_seed(config.seed)
    return ChordTransformer(config.model_config())


def pretrain_encoder(model: ChordTransformer, train_songs, val_songs, config: TrainConfig, on_epoch=None) -> FitResult:
    return fit(model, train_songs, val_songs, config, kind="pretrain", on_epoch=on_epoch)


def load_pretrained_encoder(model: ChordTransformer, source: ChordTransformer) -> None:
    """Copy encoder weights; the decoder keeps its random initialization."""
    model.input_proj.load_state_dict(source.input_proj.state_dict())
    model.encoder.load_state_dict(source.encoder.state_dict())


# --- folds ------------------------------------------------------------------------


def predict(model: ChordTransformer, song: Song, kind: str) -> Timeline:
    if kind == "frame":
        return frame_predict_song(model, song.spec, song.duration)
    return predict_song(model, song.spec, song.duration)


def evaluate_songs(model: ChordTransformer, songs: Sequence[Song], kind: str = "seq2seq") -> tuple[dict, list[dict]]:
    pairs, rows = [], []
    for song in songs:
        est = predict(model, song, kind)
        pairs.append((song.timeline, est))
        rows.append({"song_id": song.song_id, **evaluate(song.timeline, est)})
    return evaluate_corpus(pairs), rows


@dataclass
class FoldResult:
    fold: int
    model: ChordTransformer
    history: list[dict]
    metrics: dict[str, float]
    per_song: list[dict]


def run_folds(
    songs: Sequence[Song],
    config: TrainConfig,
    folds: Sequence[int] | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> tuple[list[FoldResult], dict[str, float]]:
    """Cross-validation: each fold's songs validate a model trained on the rest.

    Per fold: optional encoder pre-training, then training, then evaluation on
    the held-out songs. Returns fold results and the unweighted mean of their
    corpus metrics.
    """
    all_folds = sorted({s.fold for s in songs})
    folds = all_folds if folds is None else list(folds)
    results = []
    for fold in folds:
        train = [s for s in songs if s.fold != fold]
        val = [s for s in songs if s.fold == fold]
        if not train or not val:
            raise TrainingError(f"fold {fold} has an empty train or validation split")
        model = build_model(config)
        history = []
        if config.pretrain and config.objective == "seq2seq":
            pre = pretrain_encoder(build_model(config), train, val, config, on_epoch)
            load_pretrained_encoder(model, pre.model)
            history.extend(pre.history)
        result = fit(model, train, val, config, on_epoch=on_epoch)
        history.extend(result.history)
        metrics, rows = evaluate_songs(result.model, val, config.objective)
        results.append(FoldResult(fold, result.model, history, metrics, rows))
    mean = {k: float(np.mean([r.metrics[k] for r in results])) for k in REPORT_COLUMNS}
    return results, mean
