import glob
import json
import os
import subprocess
import sys

import numpy as np

from fedscore.cli import main
from fedscore.config import load_config
from fedscore.fedgt import matrix

CONFIG = {"num_clients": 4, "rounds": 3, "dataset": {"samples": 600}, "methods": ["cos", "mr_qi"],
          "attackers": 1, "repetitions": 2}


def _config(tmp_path, **kw):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({**CONFIG, **kw}))
    return p


def test_run_then_replay(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(_config(tmp_path)), "--out-dir", str(out), "--threads", "2"]) == 0
    assert {p.name for p in out.iterdir()} == {"results.csv", "plot.csv", "summary.csv", "manifest.json"}
    assert "final F1" in capsys.readouterr().out
    again = tmp_path / "again"
    assert main(["replay", str(out / "manifest.json"), "--out-dir", str(again)]) == 0
    assert "match" in capsys.readouterr().out
    assert (again / "results.csv").read_bytes() == (out / "results.csv").read_bytes()


def test_replay_detects_tampering(tmp_path):
    out = tmp_path / "out"
    main(["run", str(_config(tmp_path)), "--out-dir", str(out)])
    m = json.loads((out / "manifest.json").read_text())
    m["digests"]["results.csv"] = "0" * 64
    (out / "manifest.json").write_text(json.dumps(m))
    assert main(["replay", str(out / "manifest.json"), "--out-dir", str(tmp_path / "b")]) == 1


def test_bad_config_exit_code(tmp_path, capsys):
    assert main(["run", str(_config(tmp_path, bogus=1)), "--out-dir", str(tmp_path)]) == 2
    assert "bogus" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    assert main(["run", str(_config(tmp_path)), "--threads", "0"]) == 2


def test_matrix_gen_and_check(tmp_path, capsys):
    f = tmp_path / "a.txt"
    assert main(["matrix", "gen", str(f), "-n", "15", "-l", "6", "-k", "5", "--seed", "3"]) == 0
    A = matrix.read(f)
    assert A.shape == (6, 15)
    assert main(["matrix", "check", str(f)]) == 0
    assert "ok: 6x15" in capsys.readouterr().out
    bad = tmp_path / "eye.txt"
    matrix.write(bad, np.eye(3, dtype=int))
    assert main(["matrix", "check", str(bad)]) == 1
    assert "isolates" in capsys.readouterr().out
    (tmp_path / "junk.txt").write_text("2 2\n")
    assert main(["matrix", "check", str(tmp_path / "junk.txt")]) == 2


def test_module_entry_point(tmp_path):
    f = tmp_path / "a.txt"
    res = subprocess.run([sys.executable, "-m", "fedscore", "matrix", "gen", str(f), "-n", "5", "-l", "3", "-k", "3"],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert f.read_text().startswith("3 5 3\n")


def test_shipped_configs_load():
    paths = glob.glob(os.path.join(os.path.dirname(__file__), "..", "configs", "*.json"))
    assert len(paths) >= 5
    for p in paths:
        load_config(p)
