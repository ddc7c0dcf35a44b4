import json
import subprocess
import sys

import pytest

from adhoc_idid.cli import main


def _run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, out


def test_oracle_grid(tmp_path):
    code, out = _run(tmp_path, "oracle", "--domain", "grid1shot")
    assert code == 0
    data = json.loads((out / "oracle.json").read_text())
    assert data["value"] == 40
    assert (data["pi_i"]["action"], data["pi_j"]["action"]) == ("ME", "MN")
    manifest = json.loads((out / "manifest.json").read_text())
    assert "oracle.json" in str(manifest["outputs"]) and manifest["argv"][0] == "oracle"


def test_oracle_guard_exit_code(tmp_path, capsys):
    code, _ = _run(tmp_path, "oracle", "--domain", "grid3", "--horizon", "3")
    assert code == 2
    assert "5^13" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["solve", "--domain", "nowhere"],
    ["solve", "--domain", "mabc", "--horizon", "0"],
    ["solve", "--config", "/nonexistent/config.json"],
])
def test_config_errors(tmp_path, argv):
    assert _run(tmp_path, *argv)[0] == 1


def test_solve_grid_variants(tmp_path):
    expected = {(): ("MW", 30), ("--level", "2"): ("MW", 30), ("--augmented",): ("ME", 40)}
    for k, (extra, (act, val)) in enumerate(expected.items()):
        code, out = _run(tmp_path, "solve", "--domain", "grid1shot", *extra, name=f"s{k}")
        assert code == 0
        assert json.loads((out / "policy.json").read_text())["action"] == act
        assert json.loads((out / "value.json").read_text())["value"] == pytest.approx(val)


def test_learn_then_solve_from_candidates(tmp_path):
    code, learned = _run(tmp_path, "learn", "--domain", "grid1shot", name="learn")
    assert code == 0
    cands = json.loads((learned / "candidates.json").read_text())["candidates"]
    assert max(c["utility"] for c in cands) == 40
    assert (learned / "trace.csv").read_text().startswith("restart,iteration")
    code, out = _run(tmp_path, "solve", "--domain", "grid1shot", "--augmented",
                     "--learned", str(learned / "candidates.json"), name="solve")
    assert code == 0
    assert json.loads((out / "value.json").read_text())["value"] == 40


def test_outputs_are_reproducible(tmp_path):
    argv = ["compare", "--domain", "mabc", "--trials", "2", "--steps", "4",
            "--agents", "opat-po", "--teammates", "random", "--rollouts", "5", "--workers", "1"]
    blobs = []
    for k in range(2):
        code, out = _run(tmp_path, *argv, name=f"c{k}")
        assert code == 0
        blobs.append([(out / f).read_bytes() for f in ("summary.csv", "episodes.csv", "beliefs.csv")])
    assert blobs[0] == blobs[1]


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"domain": "grid1shot", "level": 2}))
    code, out = _run(tmp_path, "solve", "--config", str(cfg), "--level", "1")
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["level"] == 1 and manifest["config"]["domain"] == "grid1shot"


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "adhoc_idid", "oracle", "--domain", "grid1shot",
                          "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads((tmp_path / "m" / "oracle.json").read_text())["value"] == 40
