import json
import subprocess
import sys

import numpy as np
import pytest

from framediff.cli import main, parse_kv_config
from framediff.dataio import ManifestRecord, read_wav, write_alignment, write_manifest, write_pitch, write_wav
from framediff.synthetic import random_utterance

RATE = 4000
TOY = ["--preset", "toy", "--rate", str(RATE), "--frame-ms", "128", "--overlap-ms", "64",
       "--diffusion-steps", "4", "--batch-size", "2"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    records = []
    for i in range(3):
        u = random_utterance(0.5, rate=RATE, seed=i)
        write_wav(root / f"u{i}.wav", u.samples, RATE)
        write_alignment(root / f"u{i}.tsv", u.spans)
        write_pitch(root / f"u{i}.f0", *u.pitch)
        records.append(ManifestRecord(f"u{i}.wav", f"u{i}.tsv", f"u{i}.f0"))
    write_manifest(root / "manifest.tsv", records)
    (root / "spec.tsv").write_text("sil\t0.05\t0\nAA1\t0.1\t0.2\nN\t0.08\t0.1\nIY1\t-\t0.15\nsil\t0.05\t0\n")
    (root / "full.tsv").write_text("sil\t0.05\t0\nAA1\t0.1\t0.2\nN\t0.08\t0.1\nIY1\t0.1\t0.15\nsil\t0.05\t0\n")
    return root


@pytest.fixture(scope="module")
def trained(corpus):
    out = corpus / "run"
    assert main(["train", "--manifest", str(corpus / "manifest.tsv"), "--out-dir", str(out), "--mode", "cond",
                 "--steps", "3", "--checkpoint-every", "2"] + TOY) == 0
    un = corpus / "run_u"
    assert main(["train", "--manifest", str(corpus / "manifest.tsv"), "--out-dir", str(un), "--mode", "uncond",
                 "--steps", "2"] + TOY) == 0
    # enough duration steps that predicted spans fit the toy frame cap
    for which, steps in (("duration", "300"), ("energy", "3")):
        assert main(["train-predictor", "--manifest", str(corpus / "manifest.tsv"), "--which", which,
                     "--out", str(corpus / f"{which}.pt"), "--steps", steps, "--rate", str(RATE)]) == 0
    return out / "last.pt", un / "last.pt"


def test_help_entry_point():
    r = subprocess.run([sys.executable, "-m", "framediff.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("prepare", "train", "train-predictor", "predict", "synth", "generate", "eval"):
        assert cmd in r.stdout


def test_prepare(corpus, tmp_path):
    assert main(["prepare", str(corpus / "manifest.tsv"), str(tmp_path), "--rate", str(RATE)]) == 0
    index = (tmp_path / "index.tsv").read_text().splitlines()
    assert len(index) == 4
    assert sorted(p.name for p in (tmp_path / "spans").iterdir()) == ["u0.tsv", "u1.tsv", "u2.tsv"]
    counts = [len((tmp_path / f"{s}.tsv").read_text().splitlines()) for s in ("train", "val", "test")]
    assert counts == [1, 1, 1]


def test_prepare_missing_wav(corpus, tmp_path, capsys):
    (tmp_path / "m.tsv").write_text(f"nope.wav\t{corpus / 'u0.tsv'}\n")
    assert main(["prepare", str(tmp_path / "m.tsv"), str(tmp_path / "o")]) == 2
    assert "nope.wav" in capsys.readouterr().err


def test_prepare_bad_alignment_line(corpus, tmp_path, capsys):
    (tmp_path / "a.tsv").write_text("AA1\t0\t0.1\nQQ\t0.1\t0.2\n")
    (tmp_path / "m.tsv").write_text(f"{corpus / 'u0.wav'}\ta.tsv\n")
    assert main(["prepare", str(tmp_path / "m.tsv"), str(tmp_path / "o"), "--rate", str(RATE)]) == 2
    assert "QQ" in capsys.readouterr().err


def test_prepare_rate_mismatch(corpus, tmp_path):
    assert main(["prepare", str(corpus / "manifest.tsv"), str(tmp_path)]) == 2


def test_train_outputs(trained):
    cond, _ = trained
    run = cond.parent
    names = sorted(p.name for p in run.iterdir())
    assert names == ["config.json", "last.pt", "loss.tsv", "step_0000002.pt"]
    assert len((run / "loss.tsv").read_text().splitlines()) == 3


def test_config_file_and_flag_override(corpus, tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text(f"# toy run\nmanifest = {corpus / 'manifest.tsv'}\nout-dir = {tmp_path / 'o'}\n"
                   "mode = uncond\nsteps = 1\nrate = 4000\npreset = toy\nframe_ms = 128\noverlap_ms = 64\n"
                   "diffusion_steps = 3\nbatch_size = 2\nseed = 7\n")
    assert parse_kv_config(cfg)["out_dir"] == str(tmp_path / "o")
    assert main(["train", "--config", str(cfg), "--steps", "2"]) == 0
    saved = json.loads((tmp_path / "o" / "config.json").read_text())
    assert saved["steps"] == 2 and saved["seed"] == 7 and saved["mode"] == "uncond"
    (tmp_path / "bad.cfg").write_text("steps: 3\n")
    assert main(["train", "--config", str(tmp_path / "bad.cfg")]) == 2


def test_predict(corpus, trained, tmp_path):
    out = tmp_path / "filled.tsv"
    assert main(["predict", str(corpus / "spec.tsv"), "--duration-model", str(corpus / "duration.pt"),
                 "--energy-model", str(corpus / "energy.pt"), "--out", str(out)]) == 0
    rows = [line.split("\t") for line in out.read_text().splitlines()]
    assert [r[0] for r in rows] == ["sil", "AA1", "N", "IY1", "sil"]
    assert float(rows[1][1]) == 0.1 and float(rows[3][1]) > 0
    assert main(["predict", str(corpus / "spec.tsv")]) == 2


def test_synth_reproducible_and_sidecar(corpus, trained, tmp_path):
    cond, _ = trained
    outs = []
    for name in ("a.wav", "b.wav"):
        assert main(["synth", str(cond), str(corpus / "spec.tsv"), str(tmp_path / name), "--seed", "3",
                     "--duration-model", str(corpus / "duration.pt")]) == 0
        outs.append(read_wav(tmp_path / name, RATE)[0])
    assert np.array_equal(*outs)
    meta = json.loads((tmp_path / "a.wav.json").read_text())
    for key in ("seed", "checkpoint_id", "config_hash", "frame_spec", "schedule", "plan"):
        assert key in meta
    assert meta["plan"][-1][1] == outs[0].size
    assert main(["synth", str(cond), str(corpus / "spec.tsv"), str(tmp_path / "c.wav"), "--seed", "3",
                 "--energy", "predicted", "--duration-model", str(corpus / "duration.pt"),
                 "--energy-model", str(corpus / "energy.pt")]) == 0
    assert main(["synth", str(cond), str(corpus / "spec.tsv"), str(tmp_path / "d.wav")]) == 2


def test_synth_pitch_mode(corpus, tmp_path):
    out = tmp_path / "run_p"
    assert main(["train", "--manifest", str(corpus / "manifest.tsv"), "--out-dir", str(out),
                 "--mode", "cond+pitch", "--steps", "1"] + TOY) == 0
    write_pitch(tmp_path / "p.f0", np.arange(0, 0.4, 0.01), np.full(40, 150.0))
    assert main(["synth", str(out / "last.pt"), str(corpus / "full.tsv"), str(tmp_path / "p.wav")]) == 2
    assert main(["synth", str(out / "last.pt"), str(corpus / "full.tsv"), str(tmp_path / "p.wav"),
                 "--pitch", str(tmp_path / "p.f0")]) == 0


def test_generate(trained, tmp_path):
    cond, uncond = trained
    assert main(["generate", str(uncond), str(tmp_path / "g.wav"), "--frames", "1"]) == 0
    assert read_wav(tmp_path / "g.wav")[0].size == 512
    assert main(["generate", str(uncond), str(tmp_path / "g3.wav"), "--frames", "3", "--frame-ms", "100",
                 "--overlap-ms", "50"]) == 0
    assert read_wav(tmp_path / "g3.wav")[0].size == 400 + 2 * 200
    assert main(["generate", str(cond), str(tmp_path / "x.wav"), "--frames", "1"]) == 2


def test_eval_commands(corpus, trained, tmp_path):
    cond, uncond = trained
    gt = corpus / "u0.wav"
    assert main(["eval", "seams", str(gt), "--out", str(tmp_path / "s.tsv"), "--frame-ms", "128",
                 "--overlap-ms", "64", "--reference", str(gt)]) == 0
    rows = (tmp_path / "s.tsv").read_text().splitlines()[1:-1]
    assert rows and all(float(r.split("\t")[-1]) == 1.0 for r in rows)
    assert main(["eval", "memory", str(uncond), "--lengths", "0.25", "0.5", "--out", str(tmp_path / "m.tsv")]) == 0
    assert len((tmp_path / "m.tsv").read_text().splitlines()) == 3
    assert main(["eval", "variance", str(cond), str(corpus / "full.tsv"), "--k", "2",
                 "--out", str(tmp_path / "v.tsv"), "--compare", str(cond)]) == 0
    assert main(["eval", "variance", str(cond), str(corpus / "spec.tsv"), "--out", str(tmp_path / "v.tsv")]) == 2
    assert main(["eval", "seams", str(gt), "--out", str(tmp_path / "s.tsv")]) == 2
