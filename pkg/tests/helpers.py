"""Small shared fixtures for model-level tests."""

from __future__ import annotations

import numpy as np
import torch

from chordseq.annotation import SEGMENT_SECONDS, Segment, Timeline
from chordseq.chords import VOCABULARY
from chordseq.model import ChordTransformer, ModelConfig


def tiny_model(representation="merge", d_model=8, seed=0, dtype=torch.float32, **kw) -> ChordTransformer:
    torch.manual_seed(seed)
    cfg = ModelConfig(representation=representation, d_model=d_model, n_heads=2, n_enc=1, n_dec=1,
                      ff_dim=2 * d_model, dropout=0.0, **kw)
    return ChordTransformer(cfg).to(dtype)


def random_segment(rng: np.random.Generator, max_events: int = 6) -> Segment:
    n = int(rng.integers(1, max_events + 1))
    onsets = [0] + sorted(rng.choice(np.arange(1, 256), n - 1, replace=False).tolist())
    bounds = [round(o * 0.1, 9) for o in onsets] + [SEGMENT_SECONDS]
    labels = [VOCABULARY[int(i)] for i in rng.integers(0, 170, n)]
    return Segment(Timeline.from_intervals(zip(bounds[:-1], bounds[1:], labels), SEGMENT_SECONDS))


def random_specs(rng: np.random.Generator, batch: int) -> torch.Tensor:
    return torch.as_tensor(rng.random((batch, 256, 144)), dtype=torch.float32)


def flatten_logits(model: ChordTransformer) -> ChordTransformer:
    """Zero the output layer and time pointer so every token scores equally."""
    with torch.no_grad():
        model.output.weight.zero_()
        model.output.bias.zero_()
        if model.config.time_pointer:
            model.time_query.weight.zero_()
            model.time_query.bias.zero_()
    return model


def grad_check(model, loss_fn, n_coords=12, eps=1e-6, seed=0):
    """Worst relative error between analytic and central-difference gradients."""
    model.zero_grad()
    loss_fn().backward()
    rng = np.random.default_rng(seed)
    params = [p for p in model.parameters() if p.grad is not None and p.grad.abs().sum() > 0]
    worst = 0.0
    for _ in range(n_coords):
        p = params[int(rng.integers(len(params)))]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        analytic = p.grad[idx].item()
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + eps
            up = loss_fn().item()
            p[idx] = orig - eps
            down = loss_fn().item()
            p[idx] = orig
        numeric = (up - down) / (2 * eps)
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
