import json
from pathlib import Path

import pytest

from bwlab.cli import ConfigError, main, parse_config, verify_manifest

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.mark.parametrize("name", sorted(p.stem for p in CONFIGS.glob("*.yaml")))
def test_sample_configs_validate(name):
    cfg = parse_config((CONFIGS / f"{name}.yaml").read_text())
    assert cfg["command"] == name.split("_")[0]


def test_solve_zero_data_writes_verified_manifest(tmp_path):
    cfg = _write(tmp_path, "schema: 1\ncommand: solve\ngrid: {n: 2, nx: 11}\n")
    out = tmp_path / "out"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert {f["file"] for f in man["files"]} >= {"u.bwlab1", "w.bwlab1", "energy.csv", "solve_report.json"}
    assert verify_manifest(out)
    (out / "energy.csv").write_text("tampered\n")
    assert not verify_manifest(out)


def test_unknown_key_reports_line(tmp_path, capsys):
    cfg = _write(tmp_path, "schema: 1\ncommand: solve\ngrid: {n: 2, nx: 11}\nbogus: 3\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "line 4" in err and "bogus" in err


@pytest.mark.parametrize("text", [
    "schema: 2\ncommand: solve\ngrid: {n: 2, nx: 11}\n",
    "schema: 1\ncommand: solve\n",
    "schema: 1\ncommand: go\ngrid: {n: 2, nx: 11}\nweight: cubic\n",
    "schema: 1\ncommand: go\ngrid: {n: 2, nx: 11}\nh: [0.5, 0.4]\n",
    "schema: 1\ncommand: solve\ngrid: {n: 2, nx: 11}\ncoefficients: {C: [0.1]}\n",
    "schema: 1\ncommand: solve\ngrid: {n: 2, nx: [11]\n",
])
def test_malformed_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_command_mismatch_exits_2(tmp_path):
    cfg = _write(tmp_path, "schema: 1\ncommand: solve\ngrid: {n: 2, nx: 11}\n")
    assert main(["go", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_guard_trip_exits_3(tmp_path, capsys):
    cfg = _write(tmp_path, "schema: 1\ncommand: go\ngrid: {n: 2, nx: 11}\n")
    out = tmp_path / "o"
    assert main(["go", "--config", cfg, "--out", str(out), "--h-sweep", "0.3,0.2,0.1"]) == 3
    assert "GuardError" in capsys.readouterr().err
    assert verify_manifest(out)


def test_h_sweep_overrides_config(tmp_path, monkeypatch):
    monkeypatch.setenv("BWLAB_JOBS", "1")
    cfg = _write(tmp_path, "schema: 1\ncommand: go\ngrid: {n: 2, nx: 21}\ndirection: {angle: 0.2}\n")
    out = tmp_path / "o"
    assert main(["go", "--config", cfg, "--out", str(out), "--h-sweep", "0.9,0.7,0.5"]) == 0
    rows = (out / "residual.csv").read_text().strip().splitlines()
    assert rows[0] == "h,R_full,R_leading" and [float(r.split(",")[0]) for r in rows[1:]] == [0.9, 0.7, 0.5]
    assert main(["go", "--config", cfg, "--out", str(out), "--h-sweep", "0.9,x"]) == 2
