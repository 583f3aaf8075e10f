from __future__ import annotations

import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import pytest

from ffstab.cli import main

DATA = Path(__file__).parent / "data"


def digests(out: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(out.iterdir()) if p.name != "manifest.json"}


def test_diagnose_paper_chain(tmp_path, capsys):
    rc = main(["diagnose", "--model", "PaperChain(2)", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "E0 = 0\n" in out
    assert "gap = 0.666666666667\n" in out
    with open(tmp_path / "localgap.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["u", "r", "gamma"]
    assert {float(r[2]) for r in rows[1:] if r[1] == "1"} == {1 / 6}
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["subcommand"] == "diagnose" and man["status"] == "pass"
    assert set(man["outputs"]) == {"diagnose.json", "localgap.csv"}
    for name, h in man["outputs"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == h


def test_bounds_prints_plateau(capsys):
    assert main(["bounds", "--name", "G2", "--arg", "100", "--gammaPrime", "1"]) == 0
    assert capsys.readouterr().out.strip() == "7354"


def test_usage_errors_exit_one(tmp_path, capsys):
    assert main(["bogus"]) == 1
    assert main(["diagnose", "--model", "NoSuchModel(3)", "--out", str(tmp_path)]) == 1
    capsys.readouterr()


def test_sweep_header(tmp_path, capsys):
    rc = main(["sweep", "--model", "IsingChain(6)", "--J", "0.1", "--g", "2", "--out", str(tmp_path)])
    assert rc == 0
    with open(tmp_path / "gap_sweep.csv", newline="") as f:
        header = next(csv.reader(f))
    assert header == ["s", "E0", "E1", "E2", "E3", "E4", "splitting", "gap"]
    capsys.readouterr()


def test_stability_report_schema_and_fail_code(tmp_path, capsys):
    rc = main(["stability", "--model", "PaperChain(2)", "--J", "0.001", "--out", str(tmp_path)])
    assert rc == 2  # the chain violates Local-Gap, so the run is a fail
    doc = json.loads((tmp_path / "stability_report.json").read_text())
    schema = json.loads((DATA / "stability_report.schema.json").read_text())
    jsonschema.validate(doc, schema)
    assert doc["overall"] == "unstable-precondition"
    with open(tmp_path / "localgap.csv", newline="") as f:
        assert next(csv.reader(f)) == ["u", "r", "gamma"]
    assert {"checkpoints.csv", "gap_sweep.csv", "tqo_profile.csv", "w_table.csv"} <= set(digests(tmp_path))
    capsys.readouterr()


def test_yaml_config_matches_flags(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("model: IsingChain(6)\nseed: 4\nperturbation:\n  kind: random\n  J: 0.05\n  r_max: 1\n")
    main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["sweep", "--model", "IsingChain(6)", "--seed", "4", "--J", "0.05", "--out", str(tmp_path / "b")])
    capsys.readouterr()
    assert digests(tmp_path / "a") == digests(tmp_path / "b")


def test_outputs_identical_across_threads(tmp_path, capsys):
    args = ["stability", "--model", "IsingChain(6)", "--J", "0.0001", "--seed", "7"]
    main(args + ["--threads", "1", "--out", str(tmp_path / "t1")])
    main(args + ["--threads", "2", "--out", str(tmp_path / "t2")])
    capsys.readouterr()
    a, b = digests(tmp_path / "t1"), digests(tmp_path / "t2")
    assert a and a == b


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ffstab.cli", "bounds", "--name", "G2", "--arg", "5",
                           "--gammaPrime", "2"], capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert float(proc.stdout) == pytest.approx(7354 / 2)
