import csv
import json
from pathlib import Path

import numpy as np
import pytest

from ctdispatch.cli import RunConfig, main

DATA = Path(__file__).resolve().parent.parent / "data"


def scenario_file(tmp_path, **over):
    data = json.loads((DATA / "two_unit.json").read_text())
    data.update(over)
    p = tmp_path / "s.json"
    p.write_text(json.dumps(data))
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_solve_two_unit(tmp_path):
    out = tmp_path / "run.csv"
    assert main(["solve", "--scenario", str(DATA / "two_unit.json"), "--intervals", "10", "--out", str(out)]) == 0
    rows = read_csv(out)
    header = rows[0]
    assert header[:3] == ["t", "y", "lambda"]
    assert header[3:9] == ["x_u1", "mu_hi_u1", "mu_lo_u1", "gamma_hi_u1", "gamma_lo_u1", "beta_u1"]
    assert len(header) == 3 + 6 * 2
    lam = np.array([float(r[2]) for r in rows[1:]])
    assert np.allclose(lam, 2.0, atol=1e-6)
    report = json.loads(out.with_suffix(".json").read_text())
    assert report["marginal_set"][0] == ["u1", "u2"]
    hourly = read_csv(tmp_path / "run_hourly.csv")
    assert float(hourly[1][-1]) == pytest.approx(3.0, abs=1e-9)


def test_solve_output_is_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}.csv"
        main(["solve", "--scenario", str(DATA / "two_unit.json"), "--scheme", "spline", "--intervals", "8",
              "--out", str(out)])
        outs.append((out.read_bytes(), out.with_suffix(".json").read_bytes()))
    assert outs[0] == outs[1]
    assert b"\r\n" not in outs[0][0]


def test_ingestion_error_exit_code(tmp_path, capsys):
    p = scenario_file(tmp_path, units=[{"id": "g", "p_min": 5, "p_max": 3}])
    assert main(["solve", "--scenario", str(p)]) == 2
    assert "p_min > p_max" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path):
    assert main(["solve", "--scenario", str(tmp_path / "nope.json")]) == 2


def test_infeasible_without_slack_exit_code(tmp_path, capsys):
    data = json.loads((DATA / "two_unit.json").read_text())
    data["load"]["values"] = [30, 30, 30]
    data["slack"] = {"enabled": False, "price": 100}
    p = tmp_path / "s.json"
    p.write_text(json.dumps(data))
    assert main(["solve", "--scenario", str(p)]) == 3
    assert "slack" in capsys.readouterr().err


def test_verify_lift_mode(tmp_path):
    out = tmp_path / "v.json"
    code = main(["verify", "--mode", "theorem1", "--scenario", str(DATA / "two_unit.json"), "--intervals", "400",
                 "--out", str(out)])
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["rel_error"] <= 1e-2


def test_verify_with_eta_file(tmp_path):
    t = np.linspace(0, 1, 21)
    eta = tmp_path / "eta.json"
    eta.write_text(json.dumps({"times": t.tolist(), "values": np.sin(np.pi * t).tolist()}))
    out = tmp_path / "v.json"
    assert main(["verify", "--mode", "theorem1", "--scenario", str(DATA / "two_unit.json"), "--eta", str(eta),
                 "--intervals", "100", "--out", str(out)]) == 0


def test_refine_needs_three_counts():
    assert main(["verify", "--mode", "refine", "--counts", "4,8", "--scenario", str(DATA / "two_unit.json")]) == 2


def test_verify_modes_run(tmp_path):
    for mode in ("kkt", "cross", "refine"):
        out = tmp_path / f"{mode}.json"
        assert main(["verify", "--mode", mode, "--scenario", str(DATA / "two_unit.json"), "--intervals", "20",
                     "--counts", "5,10,20", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["mode"] == mode


def test_duckgen_flat(tmp_path):
    out = tmp_path / "duck.json"
    assert main(["duckgen", "--morning-peak", "0", "--evening-peak", "0", "--solar-depth", "0", "--samples", "24",
                 "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert set(data["load"]["values"]) == {1000.0}
    assert main(["solve", "--scenario", str(out), "--intervals", "24", "--out", str(tmp_path / "d.csv")]) == 0


def test_duckgen_rejects_bad_width(tmp_path):
    assert main(["duckgen", "--solar-width", "0", "--out", str(tmp_path / "x.json")]) == 2


def test_run_config_invariants():
    with pytest.raises(ValueError):
        RunConfig("solve", intervals=1)
    with pytest.raises(ValueError):
        RunConfig("solve", tol=0)


def test_verify_failure_exit_code(tmp_path, capsys):
    # binding ramp limits put O(1/dt) spikes into the price, so the sup-norm refinement fails
    duck = tmp_path / "duck.json"
    main(["duckgen", "--out", str(duck)])
    out = tmp_path / "v.json"
    code = main(["verify", "--mode", "refine", "--counts", "50,100,200", "--scenario", str(duck), "--out", str(out)])
    assert code == 4
    assert "refine" in capsys.readouterr().err
    assert json.loads(out.read_text())["passed"] is False
