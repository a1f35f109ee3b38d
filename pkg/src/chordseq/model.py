"""Transformer encoder-decoder over CQT frames, plus pooling and frame heads."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn

from chordseq.annotation import FRAMES_PER_SEGMENT
from chordseq.chords import VOCAB_SIZE
from chordseq.errors import CheckpointError
from chordseq.features import N_BINS
from chordseq.tokenizer import TokenSet, get_token_set


@dataclass
class ModelConfig:
    representation: str = "split"
    d_model: int = 256
    n_heads: int = 4
    n_enc: int = 4
    n_dec: int = 4
    ff_dim: int = 512
    dropout: float = 0.2
    vocab: int | None = None
    max_target_len: int | None = None
    input_bins: int = N_BINS
    input_frames: int = FRAMES_PER_SEGMENT
    n_chords: int = VOCAB_SIZE
    time_pe: bool = True  # add frame k's positional code to the Time(k) embedding
    time_pointer: bool = True  # add decoder-state x encoder-frame scores to the Time logits

    def __post_init__(self):
        tokens = get_token_set(self.representation)
        self.representation = tokens.representation.value
        if self.vocab is None:
            self.vocab = tokens.size
        if self.vocab != tokens.size:
            raise ValueError(f"vocab {self.vocab} does not match {self.representation} token set ({tokens.size})")
        if self.max_target_len is None:
            # grammar worst case plus framing: 515 (MERGE), 771 (SPLIT)
            self.max_target_len = 515 if not tokens.is_split else 771
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def token_set(self) -> TokenSet:
        return get_token_set(self.representation)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


def sinusoidal_encoding(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return pe


class ChordTransformer(nn.Module):
    """Spectrogram encoder, autoregressive token decoder, and a frame head.

    The frame head (per-frame logits over the 170 chords) is the encoder-only
    baseline; seq2seq models simply leave it untrained.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.input_proj = nn.Linear(c.input_bins, c.d_model)
        self.register_buffer(
            "positions",
            sinusoidal_encoding(max(c.input_frames, c.max_target_len), c.d_model).float(),
            persistent=False,
        )
        enc_layer = nn.TransformerEncoderLayer(
            c.d_model, c.n_heads, c.ff_dim, c.dropout, batch_first=True, norm_first=True
        )
        self.encoder = nn.TransformerEncoder(enc_layer, c.n_enc, norm=nn.LayerNorm(c.d_model), enable_nested_tensor=False)
        self.embed = nn.Embedding(c.vocab, c.d_model)
        token_pe = torch.zeros(c.vocab, c.d_model)
        if c.time_pe:
            tokens = c.token_set
            n_times = FRAMES_PER_SEGMENT + 1
            token_pe[tokens.time(0) : tokens.time(0) + n_times] = self.positions[:n_times]
        self.register_buffer("token_pe", token_pe, persistent=False)
        dec_layer = nn.TransformerDecoderLayer(
            c.d_model, c.n_heads, c.ff_dim, c.dropout, batch_first=True, norm_first=True
        )
        self.decoder = nn.TransformerDecoder(dec_layer, c.n_dec, norm=nn.LayerNorm(c.d_model))
        self.output = nn.Linear(c.d_model, c.vocab)
        if c.time_pointer:
            self.time_query = nn.Linear(c.d_model, c.d_model)
            self.time_key = nn.Linear(c.d_model, c.d_model)
            self.time_end = nn.Parameter(torch.zeros(c.d_model))
        self.frame_head = nn.Linear(c.d_model, c.n_chords)
        self.dropout = nn.Dropout(c.dropout)

    @property
    def token_set(self) -> TokenSet:
        return self.config.token_set

    def encoder_parameters(self):
        """Parameters trained during pre-training (input projection + encoder stack)."""
        return list(self.input_proj.parameters()) + list(self.encoder.parameters())

    def decoder_parameters(self):
        params = list(self.embed.parameters()) + list(self.decoder.parameters()) + list(self.output.parameters())
        if self.config.time_pointer:
            params += list(self.time_query.parameters()) + list(self.time_key.parameters()) + [self.time_end]
        return params

    def encode(self, spec: torch.Tensor) -> torch.Tensor:
        """``(batch, frames, bins)`` or ``(frames, bins)`` -> ``(batch, frames, d_model)``."""
        if spec.dim() == 2:
            spec = spec[None]
        c = self.config
        if spec.shape[1:] != (c.input_frames, c.input_bins):
            raise ValueError(f"expected spectrogram of shape ({c.input_frames}, {c.input_bins}), got {tuple(spec.shape[1:])}")
        x = self.input_proj(spec.to(self.input_proj.weight.dtype))
        x = self.dropout(x + self.positions[: x.shape[1]].to(x.dtype))
        return self.encoder(x)

    def decode(self, tokens: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        """Next-token logits ``(batch, length, vocab)`` for token prefixes ``(batch, length)``."""
        if tokens.dim() == 1:
            tokens = tokens[None]
        c = self.config
        length = tokens.shape[1]
        if length > c.max_target_len:
            raise ValueError(f"token prefix of length {length} exceeds max_target_len {c.max_target_len}")
        if tokens.numel() and (int(tokens.max()) >= c.vocab or int(tokens.min()) < 0):
            raise ValueError(f"token ids must lie in 0..{c.vocab - 1}")
        y = self.embed(tokens) * math.sqrt(c.d_model) + self.token_pe[tokens].to(self.embed.weight.dtype)
        y = self.dropout(y + self.positions[:length].to(y.dtype))
        causal = torch.triu(torch.ones(length, length, dtype=torch.bool, device=tokens.device), diagonal=1)
        h = self.decoder(y, memory, tgt_mask=causal, tgt_is_causal=True)
        logits = self.output(h)
        if c.time_pointer:
            logits = logits + self._time_scores(h, memory)
        return logits

    def _time_scores(self, h: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        # Time(k) for k < 256 points at encoder frame k; Time(256) at a learned end key
        keys = self.time_key(memory)
        end = self.time_end.expand(keys.shape[0], 1, -1)
        keys = torch.cat([keys, end], dim=1)
        scores = self.time_query(h) @ keys.transpose(1, 2) / math.sqrt(self.config.d_model)
        tokens = self.token_set
        lo = tokens.time(0)
        pad = (lo, self.config.vocab - lo - scores.shape[-1])
        return nn.functional.pad(scores, pad)

    def forward(self, spec: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        return self.decode(tokens, self.encode(spec))

    def frame_logits(self, states: torch.Tensor) -> torch.Tensor:
        return self.frame_head(states)

    def frame_classify(self, spec: torch.Tensor) -> torch.Tensor:
        return self.frame_logits(self.encode(spec))

    def embedding(self, spec: torch.Tensor) -> torch.Tensor:
        return pool_embedding(self.encode(spec))


def pool_embedding(states: torch.Tensor) -> torch.Tensor:
    """Mean over the time axis (second to last dimension)."""
    return states.mean(dim=-2)


# --- checkpoint container -------------------------------------------------
#
# Little-endian layout:
#   8-byte magic b"CHSQCKPT", u32 format version, u32 header length,
#   UTF-8 JSON header, then raw tensor blocks in header order.
# The header records the model config, token-set fingerprint, and for each
# tensor its name, dtype, shape, and byte offset relative to the data start.

MAGIC = b"CHSQCKPT"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sII")
_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.float16: "<f2",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.bool: "|b1",
}
_DTYPES_BY_NAME = {v: k for k, v in _DTYPES.items()}


def _flatten_state(prefix: str, obj, tensors: dict, skeleton):
    """Split nested optimizer state into JSON skeleton + named tensors."""
    if isinstance(obj, torch.Tensor):
        tensors[prefix] = obj
        return {"__tensor__": prefix}
    if isinstance(obj, dict):
        return {"__dict__": [[_key(k), _flatten_state(f"{prefix}/{k}", v, tensors, skeleton)] for k, v in obj.items()]}
    if isinstance(obj, (list, tuple)):
        return {"__list__": [_flatten_state(f"{prefix}/{i}", v, tensors, skeleton) for i, v in enumerate(obj)]}
    return obj


def _key(k):
    return {"int": k} if isinstance(k, int) else k


def _unflatten_state(node, tensors: dict):
    if isinstance(node, dict):
        if "__tensor__" in node:
            return tensors[node["__tensor__"]]
        if "__dict__" in node:
            out = {}
            for k, v in node["__dict__"]:
                out[k["int"] if isinstance(k, dict) else k] = _unflatten_state(v, tensors)
            return out
        if "__list__" in node:
            return [_unflatten_state(v, tensors) for v in node["__list__"]]
    return node


def save_checkpoint(
    path: str | Path,
    model: ChordTransformer,
    optimizer_state: dict | None = None,
    extra: dict | None = None,
) -> None:
    tensors: dict[str, torch.Tensor] = {f"model/{k}": v for k, v in model.state_dict().items()}
    optim_skeleton = None
    if optimizer_state is not None:
        optim_skeleton = _flatten_state("optim", optimizer_state, tensors, None)
    entries = []
    blobs = []
    offset = 0
    for name, t in tensors.items():
        t = t.detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {t.dtype} for {name}")
        arr = t.numpy().astype(_DTYPES[t.dtype], copy=False)
        blob = arr.tobytes()
        entries.append({"name": name, "dtype": _DTYPES[t.dtype], "shape": list(t.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "config": asdict(model.config),
        "fingerprint": model.token_set.fingerprint,
        "tensors": entries,
        "optimizer": optim_skeleton,
        "extra": extra or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


@dataclass
class Checkpoint:
    model: ChordTransformer
    optimizer_state: dict | None
    extra: dict
    fingerprint: str


def read_checkpoint_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path) -> dict:
    pre = fh.read(_PREAMBLE.size)
    if len(pre) != _PREAMBLE.size:
        raise CheckpointError(f"{path}: file too short for a checkpoint")
    magic, version, hlen = _PREAMBLE.unpack(pre)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a chordseq checkpoint")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format version {version}")
    return json.loads(fh.read(hlen).decode("utf-8"))


def load_checkpoint(path: str | Path, expected_fingerprint: str | None = None) -> Checkpoint:
    """Rebuild the model stored at ``path``.

    Raises:
        CheckpointError: on a malformed file or when the stored token-set
            fingerprint differs from ``expected_fingerprint`` or from the
            token set implied by the stored config.
    """
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        data = fh.read()
    config = ModelConfig.from_dict(header["config"])
    fingerprint = header["fingerprint"]
    if fingerprint != config.token_set.fingerprint:
        raise CheckpointError(f"{path}: token-set fingerprint {fingerprint} does not match this version's {config.token_set.fingerprint}")
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise CheckpointError(f"{path}: checkpoint token set {fingerprint} does not match requested {expected_fingerprint}")
    tensors = {}
    for e in header["tensors"]:
        blob = data[e["offset"] : e["offset"] + e["nbytes"]]
        if len(blob) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor block {e['name']}")
        arr = np.frombuffer(blob, dtype=e["dtype"]).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    model = ChordTransformer(config)
    state = {k[len("model/") :]: v for k, v in tensors.items() if k.startswith("model/")}
    model.load_state_dict(state)
    model.to(next(iter(state.values())).dtype if state else torch.float32)
    optim = _unflatten_state(header["optimizer"], tensors) if header.get("optimizer") else None
    return Checkpoint(model, optim, header.get("extra", {}), fingerprint)
