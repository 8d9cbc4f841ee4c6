import json

import pytest

from patraj.cli import main
from patraj.config import default_config, load_config
from patraj.errors import ConfigError

FAST = ["--set", "synth.n_patients=150", "--set", "synth.p_single_visit=0.3",
        "--set", "synth.persistence_prob=0.5", "--set", "admission_train.epochs=2",
        "--set", "sequence_train.epochs=2", "--set", "experiment.folds_to_run=0,1",
        "--set", "sequence.hidden_size=16"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cohort")
    assert main(["synth", "--out", str(root)] + FAST) == 0
    cfg = str(root / "experiment.ini")
    assert main(["prepare", "--config", cfg, "--out", str(root / "prepared")] + FAST) == 0
    return root, cfg


def test_prepare_artifacts(workspace):
    root, _ = workspace
    prepared = root / "prepared"
    for name in ("dataset.jsonl", "vocab_diag.txt", "folds.tsv", "windows_k3.jsonl",
                 "windows_k6.jsonl", "prepare.json"):
        assert (prepared / name).exists()
    meta = json.loads((prepared / "prepare.json").read_text())
    assert meta["patients"] == 150


def test_train_export_sequence_report(workspace, tmp_path, capsys):
    root, cfg = workspace
    run = tmp_path / "run"
    assert main(["train", "--config", cfg, "--out", str(run)] + FAST) == 0
    lines = (run / "reports.jsonl").read_text().splitlines()
    assert [json.loads(x)["fold"] for x in lines] == [0, 1]
    ckpt = run / "admission_fold0.npz"
    assert main(["export-reprs", "--config", cfg, "--checkpoint", str(ckpt), "--out", str(run)]
                + FAST) == 0
    reps = run / "representations.bin"
    seq = tmp_path / "seq"
    assert main(["sequence", "--config", cfg, "--representations", str(reps), "--out", str(seq)]
                + FAST) == 0
    mh = tmp_path / "mh"
    assert main(["sequence", "--config", cfg, "--multihot", "--out", str(mh),
                 "--set", "experiment.task=diagnosis_ccs"] + FAST) == 0
    out = tmp_path / "report"
    assert main(["report", str(run / "reports.jsonl"), str(mh / "reports.jsonl"),
                 "--out", str(out)]) == 0
    summary = (out / "summary.tsv").read_text().splitlines()
    assert summary[0].split("\t") == ["task", "config", "metric", "mean", "std", "n_folds"]
    assert any(line.startswith("diagnosis_ccs") and "recall_at_10" in line for line in summary)
    assert (out / "fold_metrics_0.png").stat().st_size > 0
    assert (out / "learning_curves_0.png").exists()


def test_checkpoint_rejected_under_other_config(workspace, tmp_path, capsys):
    root, cfg = workspace
    run = tmp_path / "run"
    assert main(["train", "--config", cfg, "--out", str(run)] + FAST) == 0
    code = main(["export-reprs", "--config", cfg, "--checkpoint", str(run / "admission_fold0.npz"),
                 "--out", str(run)] + FAST + ["--set", "admission_train.dropout=0.3"])
    assert code == 6
    assert "error: checkpoint:" in capsys.readouterr().err


def test_train_twice_is_byte_identical(workspace, tmp_path):
    root, cfg = workspace
    for name in ("a", "b"):
        assert main(["train", "--config", cfg, "--out", str(tmp_path / name)] + FAST) == 0
    a = (tmp_path / "a" / "reports.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "reports.jsonl").read_bytes()


def test_error_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\ntask = mortality\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "error: config:" in capsys.readouterr().err
    assert main(["prepare", "--out", str(tmp_path)]) == 2
    ok = tmp_path / "ok.ini"
    ok.write_text("[paths]\nadmissions = missing.tsv\n")
    assert main(["prepare", "--config", str(ok), "--out", str(tmp_path)]) == 2


def test_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[features]\ncolour = blue\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("[bogus]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_config_validation_rules():
    cfg = load_config(None, {"experiment.task": "diagnosis_icd9"})
    with pytest.raises(ConfigError):
        cfg.validate()
    load_config(None, {"experiment.task": "diagnosis_icd9", "codes.diag_space": "icd9_parent"}).validate()
    with pytest.raises(ConfigError):
        load_config(None, {"admission_train.epochs": "many"}).validate()
    with pytest.raises(ConfigError):
        load_config(None, {"experiment.folds_to_run": "0,12"}).validate()


def test_fingerprint_ignores_paths_only(tmp_path):
    a = default_config()
    b = default_config()
    b.sections["paths"]["admissions"] = "x.tsv"
    assert a.fingerprint() == b.fingerprint()
    b.sections["features"]["proc"] = "true"
    assert a.fingerprint() != b.fingerprint()
    a.write(tmp_path / "c.ini")
    assert load_config(tmp_path / "c.ini").fingerprint() == a.fingerprint()
