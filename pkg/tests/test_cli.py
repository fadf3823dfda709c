import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from hktl.cli import JobConfig, main
from hktl.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, obj, name="job.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return str(p)


GH_SMALL = {
    "structure": {"potential": {"sources": [{"center": [1, 0, 0], "sigma": 1}, {"center": [-1, 0, 0], "sigma": 1}]}},
    "sample": {"seed": 4, "count": 50},
}


def test_config_roundtrip():
    raw = json.loads((CONFIGS / "gh_two_source_hk.json").read_text())
    cfg = JobConfig.from_dict(raw)
    again = JobConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()
    assert cfg.to_dict()["twist"]["lambda"] == -1.0


@pytest.mark.parametrize(
    "bad",
    [
        {"structure": {"flat": {"n": 1}}, "nonsense": 1},
        {"structure": {"flat": {"n": 1}}, "tolerances": {"pde": -1}},
        {"structure": {"potential": {"sources": [{"center": [0, 0, 0], "sigma": 3}]}}},
        {"structure": {"flat": {"n": 1}}, "twist": {"mode": "bogus"}},
        {"structure": {"flat": {"n": 1}}, "twist": {"mode": "hk"}, "hkt": {"h": {}}},
    ],
)
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        JobConfig.from_dict(bad)


def test_malformed_json_exit_2(capsys):
    assert main(["verify", str(CONFIGS / "malformed.json")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError"
    assert (err["line"], err["column"]) == (2, 1)


def test_missing_file_exit_4(tmp_path):
    assert main(["verify", str(tmp_path / "absent.json")]) == 4


def test_unwritable_output_exit_4(tmp_path):
    cfg = write(tmp_path, GH_SMALL)
    assert main(["verify", cfg, "--out", str(tmp_path / "no" / "such" / "dir" / "r.json")]) == 4


def test_runtime_error_exit_3(tmp_path, capsys):
    job = {"sphere": {"center": [0, 0, 0], "radius": 1.0, "h": {"sources": [{"center": [1, 0, 0], "sigma": 1}]}}}
    assert main(["flux", write(tmp_path, job)]) == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "QuadratureHazardError" and err["point"] == [1.0, 0.0, 0.0]


def test_verify_pass_and_outputs(tmp_path):
    cfg = write(tmp_path, GH_SMALL)
    out, csv = tmp_path / "r.json", tmp_path / "r.csv"
    assert main(["verify", cfg, "--out", str(out), "--csv", str(csv)]) == 0
    report = json.loads(out.read_text())
    names = [c["name"] for c in report["checks"]]
    assert names == ["d_omega_I", "d_omega_J", "d_omega_K", "monopole"]
    assert all(c["anchor"] for c in report["checks"])
    lines = csv.read_text().splitlines()
    assert lines[0] == "x0,x1,x2,x3,check,residual"
    assert len(lines) - 1 == 50 * len(names)
    assert report["environment"]["seed"] == 4


def test_overrides(tmp_path):
    cfg = write(tmp_path, GH_SMALL)
    out = tmp_path / "r.json"
    assert main(["verify", cfg, "--out", str(out), "--seed", "9", "--samples", "20", "--tolerance-pde", "1e-20"]) == 1
    env = json.loads(out.read_text())["environment"]
    assert env["seed"] == 9 and env["samples"] == 20 and env["tolerances"]["pde"] == 1e-20
    assert main(["verify", cfg, "--samples", "0"]) == 2


def test_byte_identical(tmp_path):
    cfg = write(tmp_path, GH_SMALL)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["verify", cfg, "--out", str(a)]) == 0
    assert main(["verify", cfg, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_flux_cli(tmp_path, capsys):
    assert main(["flux", str(CONFIGS / "flux_minus.json")]) == 0
    captured = capsys.readouterr()
    assert "nearest -1" in captured.err
    report = json.loads(captured.out)
    assert report["checks"][0]["nearest_integer"] == -1
    empty = {"sphere": {"center": [0, 0, 0], "radius": 1.0, "h": {"constant": 2.0, "poly": {"x*y": 1}}}}
    assert main(["flux", write(tmp_path, empty)]) == 0
    assert "nearest 0" in capsys.readouterr().err


def test_flat_unmodification_fails(tmp_path):
    job = json.loads((CONFIGS / "flat_unmodification.json").read_text())
    job["sample"]["count"] = 500
    assert main(["verify", write(tmp_path, job)]) == 1


def test_hk_twist_config_passes(tmp_path):
    job = json.loads((CONFIGS / "gh_two_source_hk.json").read_text())
    job["sample"]["count"] = 100
    assert main(["verify", write(tmp_path, job)]) == 0


def test_module_entry_point_and_threads(tmp_path):
    cfg = write(tmp_path, GH_SMALL)
    env = dict(os.environ, HKTL_THREADS="1")
    outs = []
    for threads in ("1", "4"):
        env["HKTL_THREADS"] = threads
        res = subprocess.run([sys.executable, "-m", "hktl", "verify", cfg], env=env, capture_output=True)
        assert res.returncode == 0, res.stderr.decode()
        outs.append(res.stdout)
    assert outs[0] == outs[1]
