import json

import pytest

from upset_recovery.cli import main
from upset_recovery.harness import CSV_HEADER


@pytest.fixture
def short_cfg(tmp_path):
    path = tmp_path / "short.ini"
    path.write_text("[sim]\nduration = 0.2\n")
    return path


def test_ams_healthy_and_failed(capsys, tmp_path):
    assert main(["ams"]) == 0
    out = capsys.readouterr().out
    assert "1.036711,0.000000" in out and "unrecoverable axis" in out
    healthy = tmp_path / "h.ini"
    healthy.write_text("[allocator]\nfailed_rotor = none\n")
    assert main(["ams", "--config", str(healthy)]) == 0
    out = capsys.readouterr().out
    assert "healthy" in out and "unrecoverable" not in out
    assert len([line for line in out.splitlines() if line and line[0] in "-0123456789"]) == 4


def test_run_writes_csv(tmp_path, short_cfg, capsys):
    out = tmp_path / "t.csv"
    assert main(["run", "--config", str(short_cfg), "--out", str(out), "--allocator", "p1"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER) and len(lines) == 1 + 101
    assert "crashed" in capsys.readouterr().out


def test_campaign_json_is_reproducible(tmp_path, short_cfg):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    args = ["campaign", "--config", str(short_cfg), "--n", "3", "--seed", "2", "--allocator", "p2"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--jobs", "2", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    data = json.loads(a.read_text())
    assert data["n_flights"] == 3 and data["metadata"]["allocator"] == "p2"


def test_case_study_short(capsys):
    assert main(["case-study", "--allocator", "p1", "--duration", "0.1"]) == 0
    out = capsys.readouterr().out
    assert "initial omega_tilde   21.027" in out


def test_errors_are_reported(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[vehicle]\nmas = 1\n")
    assert main(["ams", "--config", str(bad)]) == 1
    assert main(["ams", "--config", str(tmp_path / "missing.ini")]) == 1
    assert main(["campaign", "--n", "0", "--out", str(tmp_path / "x.json")]) == 2
    err = capsys.readouterr().err
    assert err.count("error:") == 3
    with pytest.raises(SystemExit):
        main(["campaign", "--allocator", "p3", "--out", "x"])
