import json

import pytest

from trigmark.cli import main


def test_missing_artifact_reports_path(tmp_path, capsys):
    code = main(["train-transform", "--out", str(tmp_path)])
    err = capsys.readouterr().err
    assert code == 2
    assert "missing encoder checkpoint" in err and str(tmp_path) in err


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"corpus": {"seed": 1}}))
    assert main(["gen-corpus", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "required seed is missing" in capsys.readouterr().err


def test_report_without_reports(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) == 2
    assert "missing reports" in capsys.readouterr().err


def test_init_config_and_corpus(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    assert main(["init-config", str(cfg)]) == 0
    assert main(["gen-corpus", "--config", str(cfg), "--out", str(tmp_path), "--format", "machine"]) == 0
    out = capsys.readouterr().out
    info = json.loads(out[out.index("{"):])
    assert info["pairs"] == 540


def test_unknown_command():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
