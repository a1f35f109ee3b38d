import json

import pytest

from chordseq.annotation import pad_to_grid, quantize, read_lab
from chordseq.cli import main

LAB = "0.0 1.23 C:maj\n1.23 3.5 G:7\n3.5 30.0 A:min7\n30.0 31.04 N\n"


@pytest.fixture
def lab(tmp_path):
    path = tmp_path / "song.lab"
    path.write_text(LAB)
    return path


def test_tokenize_detokenize_round_trip(tmp_path, lab):
    for rep in ("merge", "split"):
        toks = tmp_path / f"t_{rep}.jsonl"
        assert main(["tokenize", "--repr", rep, str(lab), "-o", str(toks)]) == 0
        rows = [json.loads(l) for l in toks.read_text().splitlines()]
        assert rows[0]["repr"] == rep and len(rows) == 3
        out = tmp_path / f"back_{rep}.lab"
        assert main(["detokenize", str(toks), "-o", str(out)]) == 0
        assert read_lab(out) == pad_to_grid(quantize(read_lab(lab)))


def test_detokenize_token_set_mismatch(tmp_path, lab, capsys):
    toks = tmp_path / "t.jsonl"
    main(["tokenize", "--repr", "split", str(lab), "-o", str(toks)])
    code = main(["detokenize", "--repr", "merge", str(toks)])
    assert code == 5
    assert "token set mismatch" in capsys.readouterr().err


def test_eval_identity(lab, capsys):
    assert main(["eval", "--ref", str(lab), "--est", str(lab)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-1].split()[1:] == ["1.000"] * 10
    assert main(["eval", "--ref", str(lab), "--est", str(lab), "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert all(v == 1.0 for v in data["overall"].values())


def test_eval_matches_metrics(tmp_path, capsys):
    from chordseq.metrics import evaluate

    ref, est = tmp_path / "r.lab", tmp_path / "e.lab"
    ref.write_text("0 10 C:maj\n")
    est.write_text("0 6 C:maj\n6 10 G:maj\n")
    main(["eval", "--ref", str(ref), "--est", str(est), "--json"])
    data = json.loads(capsys.readouterr().out)
    assert data["overall"] == evaluate(read_lab(ref), read_lab(est))
    assert data["overall"]["root"] == pytest.approx(0.6)


def test_confusion(lab, capsys):
    assert main(["confusion", "--ref", str(lab), "--est", str(lab), "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    i = data["labels"].index("min7")
    assert data["matrix"][i][i] == 1.0


@pytest.mark.parametrize(
    "argv, code, message",
    [
        (["eval", "--ref", "missing.lab", "--est", "missing.lab"], 3, "reference not found"),
        (["tokenize", "--bogus", "x"], 2, ""),
        (["train", "--manifest", "nope.jsonl", "--out", "x"], 3, "manifest not found"),
        (["infer", "--checkpoint", "nope.ckpt", "--out", "o", "a.wav"], 3, "checkpoint not found"),
    ],
)
def test_errors(tmp_path, monkeypatch, capsys, argv, code, message):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == code
    assert message in capsys.readouterr().err


def test_bad_label_file(tmp_path, capsys):
    bad = tmp_path / "bad.lab"
    bad.write_text("0 1 H:maj\n")
    assert main(["eval", "--ref", str(bad), "--est", str(bad)]) == 4
    assert "bad label data" in capsys.readouterr().err


def test_synth_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--seed", "7", "--n-songs", "2", "--duration", "3", "--out", str(tmp_path / name)]) == 0
    for f in ("song_0000.wav", "song_0001.lab"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_pipeline(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    assert main(["synth", "--seed", "1", "--n-songs", "10", "--duration", "4", "--out", str(corpus)]) == 0
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"batch_size": 2, "max_epochs": 1, "pretrain_epochs": 1,
                               "model": {"d_model": 8, "n_heads": 2, "n_enc": 1, "n_dec": 1, "ff_dim": 16}}))
    manifest = str(corpus / "manifest.jsonl")
    pre = tmp_path / "pre.ckpt"
    assert main(["pretrain", "--manifest", manifest, "--config", str(cfg), "--out", str(pre)]) == 0
    ck = tmp_path / "m.ckpt"
    assert main(["train", "--manifest", manifest, "--config", str(cfg), "--pretrained", str(pre), "--out", str(ck)]) == 0
    out = tmp_path / "pred"
    wavs = sorted(str(p) for p in corpus.glob("*.wav"))[:2]
    assert main(["infer", "--checkpoint", str(ck), "--out", str(out), *wavs]) == 0
    assert main(["eval", "--ref", str(corpus / "song_0000.lab"), "--est", str(out / "song_0000.lab")]) == 0
    emb = tmp_path / "emb.jsonl"
    assert main(["export-embeddings", "--checkpoint", str(ck), "--manifest", manifest, "--out", str(emb)]) == 0
    rows = [json.loads(l) for l in emb.read_text().splitlines()]
    assert rows and len(rows[0]["embedding"]) == 8
    assert all(r["offset"] - r["onset"] >= 1.0 for r in rows)
    # a SPLIT checkpoint cannot initialize a MERGE model
    assert main(["train", "--manifest", manifest, "--config", str(cfg), "--repr", "merge",
                 "--pretrained", str(pre), "--out", str(tmp_path / "x.ckpt")]) == 5
    capsys.readouterr()


def test_features(tmp_path):
    import numpy as np

    from chordseq.features import load_spectrogram, write_wav

    wav = tmp_path / "tone.wav"
    write_wav(wav, 0.3 * np.sin(2 * np.pi * 440 * np.arange(44100) / 44100))
    assert main(["features", str(wav), "--out", str(tmp_path / "f")]) == 0
    assert load_spectrogram(tmp_path / "f" / "tone.cqts").shape == (10, 144)
    write_wav(tmp_path / "low.wav", np.zeros(22050), 22050)
    assert main(["features", str(tmp_path / "low.wav"), "--out", str(tmp_path / "f")]) == 4
