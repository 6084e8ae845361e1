from __future__ import annotations

import subprocess
import sys

import yaml

from sdfeel.cli import main


def test_topology_command(capsys):
    assert main(["topology", "--kind", "ring", "--servers", "6"]) == 0
    assert "zeta = 0.600000" in capsys.readouterr().out
    assert main(["topology", "--kind", "edges", "--servers", "3", "--edges", "0-1,1-2"]) == 0


def test_topology_errors_exit_two(capsys):
    assert main(["topology", "--kind", "edges", "--servers", "4", "--edges", "0-1,2-3"]) == 2
    assert "disconnected" in capsys.readouterr().err


def test_bounds_command(tmp_path, capsys):
    assert main(["bounds", "--tau1", "1,5", "--tau2", "1", "--alpha", "1", "--zeta", "0.6"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("tau1,") and len(lines) == 3
    cfg = tmp_path / "b.yaml"
    cfg.write_text(yaml.safe_dump({"bounds": {"L": 2.0, "weights": [0.5, 0.5]}}))
    out = tmp_path / "grid.csv"
    assert main(["bounds", str(cfg), "--output", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 1 + 4 * 3 * 3 * 4
    cfg.write_text(yaml.safe_dump({"bounds": {"Lip": 2.0}}))
    assert main(["bounds", str(cfg)]) == 2
    assert "bounds.Lip: unknown field" in capsys.readouterr().err


def test_partition_command(capsys):
    assert main(["partition", "--clients", "6", "--servers", "3", "--classes", "3", "--per-class", "10",
                 "--c", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "client,cluster,class0,class1,class2"
    assert len(lines) == 7
    assert all(sum(1 for v in ln.split(",")[2:] if v != "0") == 1 for ln in lines[1:])


def test_oracle_check_command(capsys):
    assert main(["oracle-check"]) == 0
    assert "ok" in capsys.readouterr().out


def test_run_command_and_missing_block(tmp_path, capsys):
    good = tmp_path / "c.yaml"
    good.write_text(yaml.safe_dump({
        "topology": {"kind": "full", "servers": 2},
        "partition": {"clients": 4},
        "data": {"num_classes": 2, "per_class": 10, "feature_dim": 2},
        "sync": {"tau1": 1, "K": 3},
    }))
    assert main(["run", str(good), "--output", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "summary.csv").exists()
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"sync": {"K": 3}}))
    assert main(["run", str(bad)]) == 2
    assert "topology: required block is missing" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sdfeel", "topology", "--kind", "full", "--servers", "4"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "zeta = 0.000000" in proc.stdout
