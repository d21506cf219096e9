import filecmp
import json
import os
from pathlib import Path

import pytest

from berrygrip.cli import EXIT_BAD_INPUT, EXIT_CHECK_FAILED, main
from berrygrip.experiments import SCHEMA_VERSION, ExperimentSpec

GOLDEN = Path(__file__).parent / "golden"

CASES = [
    ("fig12", ["force_reliability.csv", "force_reliability.json"]),
    ("fig13", ["actuation.csv"]),
    ("fig14", ["retention.csv"]),
    ("fig17", ["fingertip_force.csv"]),
    ("analyze-fingers", ["finger_analysis.csv"]),
    ("calibrate", ["calibration.csv"]),
]


@pytest.mark.parametrize("cmd,files", CASES)
def test_golden(tmp_path, cmd, files):
    assert main([cmd, "--out", str(tmp_path)]) == 0
    for f in files:
        assert (tmp_path / f).read_bytes() == (GOLDEN / f).read_bytes(), f


def _tree(d):
    return {p.name: p.read_bytes() for p in Path(d).iterdir()}


def test_idempotent_and_parallel_invariant(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for out, par in ((a, "1"), (b, "1"), (c, "4")):
        assert main(["--seed", "9", "fig12", "--out", str(out), "--parallel", par, "--trials", "3"]) == 0
        assert main(["sim-loop", "--seed", "9", "--out", str(out), "--every", "50"]) == 0
    assert _tree(a) == _tree(b) == _tree(c)


def test_check_exit_codes(tmp_path, capsys):
    assert main(["fig12", "--check", "--out", str(tmp_path)]) == 0
    assert main(["fig12", "--preset", "field-2020", "--check", "--out", str(tmp_path)]) == EXIT_CHECK_FAILED
    rep = json.loads((tmp_path / "force_reliability.json").read_text())
    assert len(rep["saturated_setpoints"]) == 11
    # without --check a failed tolerance still exits 0
    assert main(["fig12", "--preset", "field-2020", "--out", str(tmp_path)]) == 0
    assert main(["fig13", "--csv", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == EXIT_BAD_INPUT
    assert "error" in capsys.readouterr().err


def test_bad_arguments():
    with pytest.raises(SystemExit):
        main(["fig12", "--seed", "-1"])
    with pytest.raises(SystemExit):
        main(["fig12", "--trials", "0"])
    with pytest.raises(SystemExit):
        main(["nope"])
    with pytest.raises(ValueError):
        ExperimentSpec("nope")


def test_flags_either_side(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--seed", "3", "--out", str(a), "sim-loop", "--every", "100"]) == 0
    assert main(["sim-loop", "--seed", "3", "--out", str(b), "--every", "100"]) == 0
    assert filecmp.cmp(a / "trajectory.csv", b / "trajectory.csv", shallow=False)


def test_config_env(tmp_path, monkeypatch):
    cfgp = tmp_path / "c.toml"
    cfgp.write_text('seed = 4\n[sensor]\npreset = "field-2020"\n')
    monkeypatch.setenv("BERRYGRIP_CONFIG", str(cfgp))
    assert main(["fig12", "--check", "--out", str(tmp_path)]) == EXIT_CHECK_FAILED
    assert main(["fig12", "--check", "--config", str(GOLDEN.parent.parent / "src/berrygrip/data/default.toml"),
                 "--out", str(tmp_path)]) == 0


def test_fit_command(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x,y\n0,1\n1,2\n2,5\n3,10\n")
    assert main(["fit", str(p), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "fit.json").read_text())
    assert rep["schema_version"] == SCHEMA_VERSION
    assert rep["coefficients"] == pytest.approx([1.0, 0.0, 1.0], abs=1e-9)
    q = tmp_path / "c.csv"
    q.write_text("u,v\n" + "".join(f"{x},{y}\n" for x, y in ((5, 0), (0, 5), (-5, 0), (0, -5))))
    assert main(["fit", str(q), "--model", "circle", "--x", "u", "--y", "v", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "fit.json").read_text())["radius"] == pytest.approx(5.0)
    assert main(["fit", str(q), "--x", "nope", "--out", str(tmp_path)]) == EXIT_BAD_INPUT


def test_digitised_inputs(tmp_path):
    k = tmp_path / "k.csv"
    k.write_text("retraction_mm,force_N,curvature_1_per_m\n0,0,0\n2,2,5.2\n4,4,11.0\n6,6,17.8\n")
    assert main(["fig13", "--csv", str(k), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "actuation.json").read_text())
    assert rep["source"] == "csv"
    r = tmp_path / "r.csv"
    r.write_text("shape,retraction_mm,force_N\nsphere,4,3.0\n")
    assert main(["fig14", "--csv", str(r), "--out", str(tmp_path), "--check"]) == 0
    f = tmp_path / "f.csv"
    f.write_text("retraction_mm,diameter_mm,force_N\n9,47,5.0\n8,47,4.0\n")
    assert main(["fig17", "--csv", str(f), "--out", str(tmp_path)]) == 0
    a = tmp_path / "a.csv"
    a.write_text("finger,mean_force_N\nthumb,1.0\nindex,0.5\n")
    assert main(["analyze-fingers", "--csv", str(a), "--out", str(tmp_path)]) == 0


def test_table2_small(tmp_path):
    cfgp = tmp_path / "c.toml"
    src = (GOLDEN.parent.parent / "src/berrygrip/data/default.toml").read_text()
    cfgp.write_text(src.replace("calibration_trials = 2000", "calibration_trials = 200")
                    .replace("calibration_restarts = 4", "calibration_restarts = 0"))
    outs = []
    for par in ("1", "3"):
        out = tmp_path / f"o{par}"
        main(["table2", "--config", str(cfgp), "--trials", "300", "--parallel", par, "--out", str(out)])
        outs.append(out)
    assert _tree(outs[0]) == _tree(outs[1])
    rep = json.loads((outs[0] / "campaign_summary.json").read_text())
    assert [r["policy"] for r in rep["rows"]] == ["FB 1", "FB 2", "FB 3", "No FB", "Hand"]
    lines = (outs[0] / "campaign_trials.csv").read_text().splitlines()
    assert lines[0] == "trial,policy,setpoint_N,success,damaged,time_s,peak_force_N"
    assert len(lines) == 1 + 4 * 300
