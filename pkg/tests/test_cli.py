import hashlib
import json

import pytest

from leakymap.cli import main


def _run(tmp_path, name, command, config):
    cfg = tmp_path / f"{name}.json"
    cfg.write_text(json.dumps(config))
    out = tmp_path / name
    code = main([command, "--config", str(cfg), "--out", str(out)])
    return code, out


def test_check_without_hole_exits_zero(tmp_path):
    code, out = _run(tmp_path, "chk", "check", {"check": {"pilot": False}})
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["class_M"]["clause_a_distance"] == 1.0
    assert rep["passed"]


def test_check_failure_exit_code(tmp_path):
    # (A4) fails for a hole around the fixed point 1/2
    code, out = _run(tmp_path, "chk", "check", {"hole": [[0.45, 0.55]], "check": {"pilot": False}})
    assert code == 3
    assert "A4" in json.loads((out / "report.json").read_text())["failed"]


def test_accim_closed_system_eigenvalue(tmp_path):
    code, out = _run(tmp_path, "acc", "accim", {"n_cells": 8192})
    assert code == 0
    lines = (out / "eigenvalue.csv").read_text().splitlines()
    assert lines[0].startswith("# leakymap accim")
    assert lines[3] == "n_cells,lam"
    lam = float(lines[4].split(",")[1])
    assert abs(lam - 1.0) <= 5e-3


def test_escape_samples_zero_is_a_validation_error(tmp_path, capsys):
    code, _ = _run(tmp_path, "esc", "escape", {"samples": 0})
    assert code == 1
    assert "samples" in capsys.readouterr().err


def test_shrink_without_family_is_a_validation_error(tmp_path):
    code, out = _run(tmp_path, "shr", "shrink", {})
    assert code == 1
    assert json.loads((out / "report.json").read_text())["error"]["field"] == "shrink.holes"


def test_computational_failure_exit_code(tmp_path):
    # the critical value 1 sits on the hole boundary, so (A1) has r = 0
    code, out = _run(tmp_path, "tw", "tower", {"hole": [[0.99, 1.0]]})
    assert code == 2
    err = json.loads((out / "report.json").read_text())["error"]
    assert err["kind"] == "ComputationError"


def test_outputs_are_byte_stable_and_digested(tmp_path):
    cfg = {"hole": [[0.28, 0.30]], "samples": 20000, "n_cells": 1024, "escape": {"n_max": 60, "hist_steps": [20]}}
    c1, o1 = _run(tmp_path, "a", "escape", cfg)
    c2, o2 = _run(tmp_path, "b", "escape", cfg)
    assert c1 == c2 == 0
    man = json.loads((o1 / "manifest.json").read_text())
    assert set(man["files"]) == {"report.json", "survival.csv", "survival.dat", "survivors_n20.dat"}
    for name, digest in man["files"].items():
        assert (o1 / name).read_bytes() == (o2 / name).read_bytes()
        assert hashlib.sha256((o1 / name).read_bytes()).hexdigest() == digest
    assert man["config_sha256"] in (o1 / "survival.csv").read_text()


def test_seed_flag_overrides_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"hole": [[0.28, 0.30]], "samples": 20000, "n_cells": 1024, "escape": {"n_max": 40}}))
    main(["escape", "--config", str(cfg), "--out", str(tmp_path / "s1"), "--seed", "11"])
    man = json.loads((tmp_path / "s1" / "manifest.json").read_text())
    assert man["config"]["seed"] == 11


def test_reals_use_seventeen_significant_digits(tmp_path):
    code, out = _run(tmp_path, "acc", "accim", {"n_cells": 256})
    body = (out / "density.csv").read_text().splitlines()[4]
    assert len(body.split(",")[1].replace(".", "").replace("-", "").lstrip("0").split("e")[0]) <= 17


def test_bad_threads_flag(tmp_path):
    assert main(["accim", "--out", str(tmp_path / "t"), "--threads", "0"]) == 1
