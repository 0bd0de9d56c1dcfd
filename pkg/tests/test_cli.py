import csv
import json

import pytest

from ldplab.cli import run
from ldplab.lemmas import LEMMA_IDS


def _csv_rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# manifest_hash=")
    return list(csv.reader(lines[1:]))


def test_check_exit_zero(tmp_path, capsys):
    assert run(["check", "--a", "2.0", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "A2: pass" in out and "A3: pass" in out and "A4: pass" in out
    rep = json.loads((tmp_path / "check.json").read_text())
    text = json.dumps(rep)
    assert "0.7624" in text
    man = json.loads((tmp_path / "check.manifest.json").read_text())
    assert man["command"] == "check" and "config" in man


def test_validation_exit_one(tmp_path, capsys):
    assert run(["check", "--epsilon", "0.05", "--out", str(tmp_path)]) == 1
    assert "epsilon" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path):
    assert run(["check", "--params.nonsense", "1", "--out", str(tmp_path)]) == 1
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"params": {"a": 2.0, "zeta": 1}}))
    assert run(["check", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_dotted_override(tmp_path):
    assert run(["table", "--params.depth", "40", "--out", str(tmp_path)]) == 0
    rows = _csv_rows(tmp_path / "table.csv")
    assert len(rows) - 1 == 41


def test_computation_error_exit_two(tmp_path):
    code = run(["induce", "--budgets.track_depth", "300", "--budgets.samples", "50",
                "--out", str(tmp_path)])
    assert code == 2
    man = json.loads((tmp_path / "induce.manifest.json").read_text())
    assert man["status"] == "computation-error"


def test_inconclusive_exit_three(tmp_path):
    code = run(["rate", "--b", "1.5", "--samples", "1000", "--out", str(tmp_path)])
    assert code == 3


def test_rerun_from_manifest_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["rate", "--samples", "20000", "--out", str(a)]) == 0
    assert run(["rate", "--config", str(a / "rate.manifest.json"), "--out", str(b)]) == 0
    for f in a.glob("*.csv"):
        assert f.read_bytes() == (b / f.name).read_bytes()


def test_artifacts_carry_manifest_hash(tmp_path):
    assert run(["pressure", "--budgets.cgf_samples", "2000", "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "pressure.manifest.json").read_text())
    files = sorted(tmp_path.glob("*.csv"))
    assert len(files) == 2
    for f in files:
        assert f.read_text().splitlines()[0] == f"# manifest_hash={man['config_hash']}"


def test_verify_lemmas_matrix(tmp_path, capsys):
    assert run(["verify-lemmas", "--a", "2.0", "--depth", "30",
                "--budgets.lemma_samples", "200", "--out", str(tmp_path)]) == 0
    rows = _csv_rows(tmp_path / "lemmas.csv")
    assert rows[0][:2] == ["lemma", "pass"]
    assert [r[0] for r in rows[1:]] == list(LEMMA_IDS)


@pytest.mark.parametrize("cmd", ["pressure", "equilibrium", "partition"])
def test_other_commands_run(tmp_path, cmd):
    extra = {"pressure": ["--budgets.cgf_samples", "5000"],
             "equilibrium": ["--k", "6"],
             "partition": ["--budgets.partition_depth", "12"]}[cmd]
    assert run([cmd, "--out", str(tmp_path)] + extra) == 0
    assert (tmp_path / f"{cmd}.manifest.json").exists()
