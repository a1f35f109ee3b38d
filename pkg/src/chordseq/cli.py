"""Command-line interface: ``chordseq <subcommand> ...``.

Subcommands: synth, features, tokenize, detokenize, pretrain, train, infer,
eval, confusion, export-embeddings. Run ``chordseq <subcommand> -h`` for
flags. Reports print with 3 decimals; ``--json`` switches to structured
output (schemas in README).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from chordseq.annotation import (
    SEGMENT_SECONDS,
    Timeline,
    pad_to_grid,
    quantize,
    read_lab,
    read_manifest,
    stitch_segments,
    tile_song,
    write_lab,
)
from chordseq.chords import format_chord
from chordseq.errors import (
    ChordParseError,
    CheckpointError,
    DecodeError,
    LabFormatError,
    TimelineError,
    TokenizationError,
    TrainingError,
)

log = logging.getLogger("chordseq")

EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_FORMAT = 4
EXIT_MISMATCH = 5
EXIT_TRAINING = 6


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# --- shared helpers ----------------------------------------------------------


def _existing(path: str | Path, what: str = "file") -> Path:
    p = Path(path)
    if not p.exists():
        raise CLIError(f"{what} not found: {p}", EXIT_MISSING)
    return p


def _load_json(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(_existing(path, "config file"), encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CLIError(f"config {path} is not valid JSON: {exc}", EXIT_FORMAT) from exc
    if not isinstance(data, dict):
        raise CLIError(f"config {path} must hold a JSON object", EXIT_FORMAT)
    return data


def _parse_override(text: str) -> tuple[list[str], Any]:
    """``a.b=value``; the value is parsed as JSON when possible."""
    if "=" not in text:
        raise CLIError(f"override {text!r} must look like key=value", EXIT_USAGE)
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def _apply_overrides(data: dict, overrides: Sequence[str]) -> dict:
    for item in overrides or ():
        keys, value = _parse_override(item)
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
    return data


def _fmt(x: float) -> str:
    return "nan" if isinstance(x, float) and math.isnan(x) else f"{x:.3f}"


def _emit(args, payload: Any, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=None, sort_keys=True, allow_nan=True))
    else:
        print(text)


def _set_threads(n: int) -> None:
    import torch

    torch.set_num_threads(max(1, n))


def _read_timeline(path: str | Path) -> Timeline:
    return read_lab(_existing(path, "label file"))


def _load_songs(manifest: str, threads: int = 1):
    """Spectrograms (cached when CHORDSEQ_CACHE is set) and labels for each manifest record."""
    from chordseq.features import cached_cqt, read_wav
    from chordseq.training import Song

    records = read_manifest(_existing(manifest, "manifest"))

    def load(rec):
        audio, sr = read_wav(_existing(rec.audio, "audio file"))
        spec = cached_cqt(audio, sr)
        return Song.create(rec.song_id, spec, _read_timeline(rec.lab), rec.fold)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(load, records))
    return [load(r) for r in records]


def _train_config(args):
    from chordseq.training import TrainConfig

    data = _apply_overrides(_load_json(args.config), args.set)
    if getattr(args, "repr", None):
        data["representation"] = args.repr
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    try:
        return TrainConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise CLIError(f"invalid training config: {exc}", EXIT_FORMAT) from exc


def _split(songs, fold: int):
    train = [s for s in songs if s.fold != fold]
    val = [s for s in songs if s.fold == fold]
    if not train or not val:
        raise CLIError(f"fold {fold} leaves an empty train or validation split", EXIT_USAGE)
    return train, val


def _load_model(path: str, representation: str | None = None):
    from chordseq.model import load_checkpoint
    from chordseq.tokenizer import get_token_set

    expected = get_token_set(representation).fingerprint if representation else None
    return load_checkpoint(_existing(path, "checkpoint"), expected)


# --- subcommands ----------------------------------------------------------------


def cmd_synth(args) -> dict:
    from chordseq.synthdata import SynthSpec, write_corpus

    data = _apply_overrides(_load_json(args.config), args.set)
    data.setdefault("seed", args.seed)
    if args.n_songs is not None:
        data["n_songs"] = args.n_songs
    if args.duration is not None:
        data["song_duration"] = args.duration
    for key in ("chord_duration_range", "partials", "octaves"):
        if key in data:
            data[key] = tuple(data[key])
    names = {f.name for f in fields(SynthSpec)}
    unknown = set(data) - names
    if unknown:
        raise CLIError(f"unknown synth config keys: {sorted(unknown)}", EXIT_FORMAT)
    try:
        spec = SynthSpec(**data)
    except ValueError as exc:
        raise CLIError(f"invalid synth config: {exc}", EXIT_FORMAT) from exc
    manifest = write_corpus(spec, args.out)
    return {"manifest": str(manifest), "n_songs": spec.n_songs}


def cmd_features(args) -> dict:
    from chordseq.features import cached_cqt, read_wav, save_spectrogram

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [_existing(p, "audio file") for p in args.audio]

    def run(path: Path):
        audio, sr = read_wav(path)
        try:
            spec = cached_cqt(audio, sr)
        except ValueError as exc:
            raise CLIError(f"{path}: {exc}", EXIT_FORMAT) from exc
        dest = out / (path.stem + ".cqts")
        save_spectrogram(dest, spec)
        return {"audio": str(path), "spectrogram": str(dest), "frames": spec.shape[0], "bins": spec.shape[1]}

    with ThreadPoolExecutor(max(1, args.threads)) as pool:
        results = list(pool.map(run, paths))
    return {"outputs": results}


def cmd_tokenize(args) -> dict:
    from chordseq.tokenizer import encode, get_token_set

    tokens = get_token_set(args.repr)
    timeline = pad_to_grid(quantize(_read_timeline(args.lab)))
    lines = [{"song_duration": timeline.duration, "repr": tokens.representation.value}]
    for seg in tile_song(timeline):
        ids = encode(seg, tokens.representation)
        lines.append(
            {
                "start": seg.start,
                "duration": SEGMENT_SECONDS,
                "repr": tokens.representation.value,
                "ids": ids,
                "tokens": [tokens.name(i) for i in ids],
            }
        )
    text = "\n".join(json.dumps(line) for line in lines) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return {}


def cmd_detokenize(args) -> dict:
    from chordseq.tokenizer import decode, get_token_set

    src = _existing(args.tokens, "token file")
    rows = [json.loads(line) for line in src.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not rows or "song_duration" not in rows[0]:
        raise CLIError(f"{src}: first line must be a header with song_duration", EXIT_FORMAT)
    header, segments = rows[0], rows[1:]
    rep = args.repr or header.get("repr")
    tokens = get_token_set(rep)
    parts = []
    for row in segments:
        if row.get("repr", rep) != tokens.representation.value:
            raise CLIError(
                f"token set mismatch: file uses {row.get('repr')}, decoding as {tokens.representation.value}", EXIT_MISMATCH
            )
        ids = row["ids"] if "ids" in row else [tokens.token_from_name(n) for n in row["tokens"]]
        parts.append(decode(ids, tokens.representation, strict=not args.lenient))
    timeline = stitch_segments(parts, header["song_duration"])
    write_lab(timeline, args.output if args.output else sys.stdout)
    return {}


def _fit_and_save(args, kind: str) -> dict:
    from chordseq.model import save_checkpoint
    from chordseq.training import build_model, fit, load_pretrained_encoder

    config = _train_config(args)
    if kind == "train" and args.objective:
        config.objective = args.objective
    songs = _load_songs(args.manifest, args.threads)
    train, val = _split(songs, args.fold)
    model = build_model(config)
    encoder_from = args.pretrained if kind == "train" else None
    encoder_from = encoder_from or (config.pretrained_encoder if kind == "train" else None)
    if encoder_from:
        source = _load_model(encoder_from, config.representation).model
        if source.config.d_model != model.config.d_model or source.config.n_enc != model.config.n_enc:
            raise CLIError("pretrained encoder shape does not match the model config", EXIT_MISMATCH)
        load_pretrained_encoder(model, source)

    def on_epoch(record):
        log.info(json.dumps(record))

    fit_kind = "pretrain" if kind == "pretrain" else config.objective
    try:
        result = fit(model, train, val, config, kind=fit_kind, on_epoch=on_epoch)
    except TrainingError as exc:
        raise CLIError(str(exc), EXIT_TRAINING) from exc
    extra = {"kind": fit_kind, "fold": args.fold, "train_config": asdict(config), "history": result.history}
    save_checkpoint(args.out, result.model, result.optimizer_state, extra)
    return {"checkpoint": str(args.out), "best_epoch": result.best_epoch, "best_val_loss": result.best_val_loss}


def cmd_pretrain(args) -> dict:
    return _fit_and_save(args, "pretrain")


def cmd_train(args) -> dict:
    return _fit_and_save(args, "train")


def cmd_infer(args) -> dict:
    from chordseq.decode import frame_predict_song, predict_song
    from chordseq.features import cached_cqt, read_wav

    ck = _load_model(args.checkpoint)
    objective = args.objective or ck.extra.get("kind", "seq2seq")
    if objective == "pretrain":
        raise CLIError("checkpoint holds a pre-trained encoder only; train it before inference", EXIT_MISMATCH)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for path in (_existing(p, "audio file") for p in args.audio):
        audio, sr = read_wav(path)
        try:
            spec = cached_cqt(audio, sr)
        except ValueError as exc:
            raise CLIError(f"{path}: {exc}", EXIT_FORMAT) from exc
        duration = round(len(audio) / sr, 6)
        if objective == "frame":
            est = frame_predict_song(ck.model, spec, duration)
        else:
            est = predict_song(ck.model, spec, duration)
        dest = out / (path.stem + ".lab")
        write_lab(est, dest)
        results.append({"audio": str(path), "lab": str(dest), "intervals": len(est)})
    return {"outputs": results}


def _pairs(args) -> list[tuple[str, Timeline, Timeline]]:
    ref, est = _existing(args.ref, "reference"), _existing(args.est, "estimate")
    if ref.is_dir() != est.is_dir():
        raise CLIError("--ref and --est must both be files or both be directories", EXIT_USAGE)
    if not ref.is_dir():
        r = _read_timeline(ref)
        e = _read_timeline(est)
        return [(ref.stem, r, _fit_duration(e, r.duration))]
    out = []
    for rpath in sorted(ref.glob("*.lab")):
        epath = est / rpath.name
        r = _read_timeline(rpath)
        out.append((rpath.stem, r, _fit_duration(_read_timeline(_existing(epath, "estimate")), r.duration)))
    if not out:
        raise CLIError(f"no .lab files in {ref}", EXIT_MISSING)
    return out


def _fit_duration(est: Timeline, duration: float) -> Timeline:
    """Estimates shorter than the reference are padded with N, longer ones truncated."""
    if est.duration > duration:
        return est.truncate(duration)
    if est.duration < duration:
        return Timeline.from_intervals(est.intervals, duration)
    return est


def cmd_eval(args) -> dict:
    from chordseq.metrics import REPORT_COLUMNS, evaluate, evaluate_corpus

    pairs = _pairs(args)
    songs = [{"song_id": sid, **evaluate(r, e)} for sid, r, e in pairs]
    corpus = evaluate_corpus([(r, e) for _, r, e in pairs])
    header = "song".ljust(16) + " ".join(c.rjust(8) for c in REPORT_COLUMNS)
    lines = [header]
    if args.per_song:
        for row in songs:
            lines.append(row["song_id"][:16].ljust(16) + " ".join(_fmt(row[c]).rjust(8) for c in REPORT_COLUMNS))
    lines.append("overall".ljust(16) + " ".join(_fmt(corpus[c]).rjust(8) for c in REPORT_COLUMNS))
    _emit(args, {"columns": list(REPORT_COLUMNS), "overall": corpus, "songs": songs}, "\n".join(lines))
    return {}


def cmd_confusion(args) -> dict:
    from chordseq.metrics import quality_confusion

    conf = quality_confusion([(r, e) for _, r, e in _pairs(args)])
    labels = list(conf.labels)
    lines = ["ref\\est".ljust(8) + " ".join(l.rjust(7) for l in labels)]
    for i, lab in enumerate(labels):
        lines.append(lab.ljust(8) + " ".join(_fmt(v).rjust(7) for v in conf.matrix[i]))
    payload = {"labels": labels, "matrix": conf.matrix.tolist(), "support_seconds": conf.support.tolist()}
    _emit(args, payload, "\n".join(lines))
    return {}


def cmd_export_embeddings(args) -> dict:
    """Pooled encoder vectors for single-chord stretches of at least ``--min-duration`` seconds."""
    import torch

    from chordseq.features import crop_frames

    ck = _load_model(args.checkpoint)
    model = ck.model.eval()
    songs = _load_songs(args.manifest, args.threads)
    if args.fold is not None:
        songs = [s for s in songs if s.fold == args.fold]
    n = 0
    with open(args.out, "w", encoding="utf-8") as fh, torch.no_grad():
        for song in songs:
            for iv in song.timeline:
                if iv.length < args.min_duration or iv.chord.is_unknown:
                    continue
                a = int(round(iv.onset * 10))
                b = int(round(iv.offset * 10))
                clip = np.zeros((256, song.spec.shape[1]), dtype=np.float32)
                # the clip alone, zero elsewhere, so the pooled vector reflects this chord only
                width = min(256, b - a)
                clip[:width] = crop_frames(song.spec, a, width)
                states = model.encode(torch.as_tensor(clip)[None])[0, :width]
                vec = states.mean(dim=0).tolist()
                row = {"song_id": song.song_id, "onset": iv.onset, "offset": iv.offset, "chord": format_chord(iv.chord), "embedding": vec}
                fh.write(json.dumps(row) + "\n")
                n += 1
    return {"embeddings": n, "out": str(args.out)}


# --- parser ----------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("--threads", type=int, default=1, help="worker threads (default 1 for reproducibility)")
    p.add_argument("-v", "--verbose", action="store_true")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True)
    p.add_argument("--fold", type=int, default=0, help="held-out fold used for validation")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override, e.g. model.d_model=128")
    p.add_argument("--repr", choices=["merge", "split"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chordseq", description="Sequence-to-sequence chord recognition toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic chord-audio corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-songs", type=int)
    p.add_argument("--duration", type=float, help="song duration in seconds")
    p.add_argument("--config", help="JSON synth config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="compute CQT spectrograms for WAV files")
    p.add_argument("audio", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("tokenize", help="encode a .lab file as token segments (JSONL)")
    p.add_argument("lab")
    p.add_argument("--repr", choices=["merge", "split"], default="split")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("detokenize", help="decode token segments (JSONL) back to a .lab file")
    p.add_argument("tokens")
    p.add_argument("--repr", choices=["merge", "split"])
    p.add_argument("--lenient", action="store_true", help="truncate at the first grammar violation")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_detokenize)

    p = sub.add_parser("pretrain", help="chord-similarity pre-training of the encoder")
    _train_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train a seq2seq or frame model on one fold")
    _train_flags(p)
    p.add_argument("--pretrained", help="checkpoint whose encoder initializes the model")
    p.add_argument("--objective", choices=["seq2seq", "frame"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="write predicted .lab files for audio")
    p.add_argument("audio", nargs="+")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--objective", choices=["seq2seq", "frame"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    for name, func, help_ in (
        ("eval", cmd_eval, "WCSR and segmentation report"),
        ("confusion", cmd_confusion, "quality confusion matrix"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--ref", required=True, help=".lab file or directory")
        p.add_argument("--est", required=True, help=".lab file or directory (matched by name)")
        if name == "eval":
            p.add_argument("--per-song", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("export-embeddings", help="pooled encoder vectors per chord clip (JSONL)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--fold", type=int)
    p.add_argument("--min-duration", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    for action in sub.choices.values():
        _common(action)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    _set_threads(args.threads)
    try:
        result = args.func(args)
    except CLIError as exc:
        print(f"chordseq {args.command}: error: {exc}", file=sys.stderr)
        return exc.code
    except (ChordParseError, LabFormatError, TimelineError) as exc:
        print(f"chordseq {args.command}: error: bad label data: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (TokenizationError, DecodeError) as exc:
        print(f"chordseq {args.command}: error: token data: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except CheckpointError as exc:
        print(f"chordseq {args.command}: error: checkpoint: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except FileNotFoundError as exc:
        print(f"chordseq {args.command}: error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING
    if result and args.command not in ("eval", "confusion", "tokenize", "detokenize"):
        _emit(args, result, "\n".join(f"{k}: {v}" for k, v in result.items() if k != "outputs") or "done")
    return 0


if __name__ == "__main__":
    sys.exit(main())
