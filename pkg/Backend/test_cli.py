# Backend/test_cli.py

from pathlib import Path

import pytest

from Backend.cli import CHECKPOINT_SUBDIR, main
from Backend.conftest import REFERENCE_ENVIRONMENT
from Backend.WaveformEngine.reporting import METRICS_FILE, REPORT_FILE, read_metrics


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    kg = root / "kg.txt"
    assert main(["synth", "--waveforms", "6", "--environments", "40", "--seed", "7", "-o", str(kg)]) == 0
    run = root / "run"
    code = main([
        "train", "--kg", str(kg), "--out-dir", str(run), "--epochs", "1",
        "--emb-dim", "4", "--kernel-size", "3", "--heads", "1", "--batch-size", "64",
    ])
    assert code == 0
    return kg, run


def test_synth_is_deterministic(tmp_path, capsys):
    first, second = tmp_path / "a.txt", tmp_path / "b.txt"
    for path in (first, second):
        assert main(["synth", "--waveforms", "3", "--environments", "5", "--seed", "2", "-o", str(path)]) == 0
    assert first.read_bytes() == second.read_bytes()
    out = capsys.readouterr().out
    assert "ewbg_density=" in out
    assert "seed=2" in out


def test_synth_needs_two_of_each(tmp_path):
    assert main(["synth", "--waveforms", "1", "--environments", "5", "--seed", "0", "-o", str(tmp_path / "kg.txt")]) == 1


def test_train_outputs(workspace):
    _, run = workspace
    assert (run / CHECKPOINT_SUBDIR / "model.ckpt").exists()
    assert (run / REPORT_FILE).exists()
    metrics = read_metrics(run / METRICS_FILE)
    assert metrics["epochs"] == "1"
    assert 0.0 <= float(metrics["hit@1"]) <= 1.0


def test_train_rejects_bad_mode(workspace, tmp_path):
    kg, _ = workspace
    assert main(["train", "--kg", str(kg), "--out-dir", str(tmp_path), "--ere-mode", "transformer"]) == 1
    assert main(["train", "--kg", str(kg), "--out-dir", str(tmp_path), "--kernel-size", "4"]) == 1
    assert main(["train", "--kg", str(kg), "--out-dir", str(tmp_path), "--bpr-sign", "reversed"]) == 1


def test_ablate_rejects_bad_options(workspace, capsys):
    kg, _ = workspace
    assert main(["ablate", "--kg", str(kg), "--seeds", "0,one"]) == 1
    assert "--seeds" in capsys.readouterr().err
    assert main(["ablate", "--kg", str(kg), "--workers", "0"]) == 1


def test_missing_kg_file(tmp_path):
    assert main(["train", "--kg", str(tmp_path / "absent.txt"), "--out-dir", str(tmp_path)]) == 1


def test_corrupt_kg_file(tmp_path, capsys):
    kg = tmp_path / "kg.txt"
    kg.write_text("# WavePilot CWKG v1\nQ what\n", encoding="utf-8")
    assert main(["train", "--kg", str(kg), "--out-dir", str(tmp_path)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_evaluate(workspace, capsys):
    kg, run = workspace
    assert main(["evaluate", "--kg", str(kg), "--checkpoint", str(run / CHECKPOINT_SUBDIR), "--k", "1", "--k", "2"]) == 0
    out = capsys.readouterr().out
    assert "hit@1=" in out
    assert "hit@2=" in out


def test_recommend(workspace, tmp_path, capsys):
    kg, run = workspace
    pdf = tmp_path / "sheet.pdf"
    code = main([
        "recommend", "--kg", str(kg), "--checkpoint", str(run / CHECKPOINT_SUBDIR),
        "--env", str(REFERENCE_ENVIRONMENT), "--top-k", "3", "--pdf", str(pdf),
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "mode=invo_then_attn(1)" in out
    assert "M=6" in out
    assert pdf.read_bytes().startswith(b"%PDF")


def test_recommend_bad_description(workspace, tmp_path, capsys):
    kg, run = workspace
    env = tmp_path / "env.txt"
    env.write_text("channel_type=AWGN\ncolour=blue\n", encoding="utf-8")
    code = main(["recommend", "--kg", str(kg), "--checkpoint", str(run / CHECKPOINT_SUBDIR), "--env", str(env)])
    assert code == 2
    assert "line 2" in capsys.readouterr().err


def test_top_k_above_m_still_succeeds(workspace, capsys):
    kg, run = workspace
    code = main([
        "recommend", "--kg", str(kg), "--checkpoint", str(run / CHECKPOINT_SUBDIR),
        "--env", str(REFERENCE_ENVIRONMENT), "--top-k", "50",
    ])
    assert code == 0
    rows = [line for line in capsys.readouterr().out.splitlines() if line.strip()[:1].isdigit()]
    assert len(rows) == 6


def test_unknown_command():
    assert main(["fly"]) == 1


def test_reference_file_is_bundled():
    assert Path(REFERENCE_ENVIRONMENT).read_text(encoding="utf-8").startswith("#")
