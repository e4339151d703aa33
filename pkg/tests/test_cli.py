import csv
import json

import numpy as np
import pytest

from solentrunc import cli
from solentrunc.grid import load_snapshot

SMALL = ["--ladder-override", "h=0.125,0.08333333333333333", "--ladder-override", "k=1,16,256"]


def _run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("name", cli.bundled_scenarios())
def test_bundled_scenarios_round_trip(name):
    sc = cli.read_scenario(name)
    again = cli.Scenario.from_dict(json.loads(json.dumps(sc.to_dict())))
    assert again == sc
    assert again.canonical_json() == sc.canonical_json()


def test_toml_and_json_agree(tmp_path):
    sc = cli.read_scenario("ns2_linear.toml")
    path = tmp_path / "copy.json"
    path.write_text(json.dumps(sc.to_dict()))
    assert cli.read_scenario(path).hash == sc.hash
    # the output directory does not enter the hash
    moved = cli.Scenario.from_dict({**sc.to_dict(), "output": "elsewhere"})
    assert moved.hash == sc.hash


@pytest.mark.parametrize(
    "raw, field",
    [
        ({"model": {"p": "two"}}, "model.p"),
        ({"model": {"p": 1.0}}, "model.p"),
        ({"domain": {"size": 3}}, "domain.size"),
        ({"domain": {"mask": "torus"}}, "domain.mask"),
        ({"forcing": {"a": 1.6, "q": 2.0}}, "forcing.a"),
        ({"forcing": {"q": 2.5}}, "forcing.q"),
        ({"ladders": {"h": [0.3]}}, "ladders.h[0]"),
        ({"ladders": {"k": [1, -2]}}, "ladders.k[1]"),
        ({"solver": {"navier_stokes": "yes"}}, "solver.navier_stokes"),
        ({"seed": 1.5}, "seed"),
        ({"colour": "red"}, "colour"),
    ],
)
def test_malformed_scenario_names_field(tmp_path, capsys, raw, field):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(raw))
    code, _, err = _run(capsys, "verify", "--scenario", str(path), "--out", str(tmp_path / "o"))
    assert code == 2
    assert f"'{field}'" in err


def test_unparseable_file_and_bad_override(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[domain\nn = 4")
    code, _, err = _run(capsys, "whitney", "--scenario", str(path))
    assert code == 2 and "cannot parse" in err
    code, _, err = _run(capsys, "verify", "--scenario", "p2_q19.json", "--ladder-override", "z=1,2")
    assert code == 2 and "ladders.z" in err
    code, _, err = _run(capsys, "verify", "--scenario", "p2_q19.json", "--ladder-override", "k=1,abc")
    assert code == 2 and "ladders.k" in err
    code, _, err = _run(capsys, "verify", "--scenario", "missing.json")
    assert code == 2 and "no such scenario" in err


def test_overrides_are_validated():
    sc = cli.apply_overrides(cli.read_scenario("p2_q19.json"), ["k=1,2", "q=2,1.9"], seed=7)
    assert sc.ladders["k"] == [1.0, 2.0] and sc.ladders["q"] == [2.0, 1.9] and sc.seed == 7
    with pytest.raises(cli.ScenarioError, match="ladders.q"):
        cli.apply_overrides(sc, ["q=3"])


def test_whitney_on_ball(tmp_path, capsys):
    code, out, _ = _run(capsys, "whitney", "--scenario", "whitney_ball.json", "--out", str(tmp_path))
    assert code == 0 and "pass" in out
    rep = json.loads((tmp_path / "whitney.json").read_text())
    assert rep["all_pass"] and rep["sets"]["domain"]["all_pass"]
    rows = _rows(tmp_path / "whitney.csv")
    assert rows[0][-1] == "scenario_hash" and rows[1][0] == "domain"
    assert {r[-1] for r in rows[1:]} == {rep["scenario_hash"]}


def test_verify_smoke(tmp_path, capsys):
    code, out, _ = _run(capsys, "verify", "--scenario", "p2_q19.json", "--out", str(tmp_path), *SMALL)
    assert code == 0, out
    rows = _rows(tmp_path / "verify.csv")
    header, body = rows[0], rows[1:]
    assert header[-1] == "scenario_hash"
    kinds = [r[0] for r in body]
    assert kinds.count("mt1") == kinds.count("mt2") == 2 * 4
    assert kinds.count("layer-cake") == 2
    summary = json.loads((tmp_path / "verify.json").read_text())
    assert summary["all_pass"] and {r[-1] for r in body} == {summary["scenario_hash"]}
    gp = (tmp_path / "verify_ratios.gp").read_text()
    assert "verify_ratios.dat" in gp and (tmp_path / "verify_ratios.dat").exists()
    assert not (tmp_path / "verify_ratios.png").exists()


def test_failed_stability_gives_exit_one(tmp_path, capsys):
    # factor 1 cannot hold across two grids
    path = tmp_path / "tight.json"
    raw = cli.read_scenario("p2_q19.json").to_dict()
    raw["estimates"]["factor"] = 1.0
    path.write_text(json.dumps(raw))
    code, out, _ = _run(capsys, "verify", "--scenario", str(path), "--out", str(tmp_path / "o"), *SMALL)
    assert code == 1 and "FAIL" in out


def test_module_error_gives_exit_three(tmp_path, capsys):
    path = tmp_path / "ns.json"
    path.write_text(json.dumps({"solver": {"navier_stokes": True}, "ladders": {"h": [0.125], "k": [1]}}))
    code, _, err = _run(capsys, "verify", "--scenario", str(path), "--out", str(tmp_path / "o"))
    assert code == 3 and "regime" in err


def test_env_output_root_and_solve(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path))
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"name": "tiny", "domain": {"mask": "ball", "n": 10}, "model": {"p": 3.0}, "forcing": {"a": 0.5, "q": 1.4}}))
    code, _, _ = _run(capsys, "solve", "--scenario", str(path), "--vtk")
    assert code == 0
    out = tmp_path / "tiny"
    u, h, tag = load_snapshot(out / "velocity.bin")
    assert u.shape == (3, 10, 10, 10) and h == pytest.approx(0.1) and tag == "cell"
    assert np.abs(u).max() > 0
    assert (out / "solution.vtk").read_text().startswith("# vtk DataFile")
    diag = json.loads((out / "solve.json").read_text())["diagnostics"]
    assert diag["residual"] <= 1e-10
    assert json.loads((out / "scenario.json").read_text())["name"] == "tiny"


def test_truncate_and_scan(tmp_path, capsys):
    path = tmp_path / "t.json"
    path.write_text(json.dumps({"domain": {"mask": "ball", "n": 16}, "ladders": {"lambda": [0, 2, 4], "k": [1, 256], "q": [2.0, 1.8]}}))
    code, _, _ = _run(capsys, "truncate", "--scenario", str(path), "--out", str(tmp_path / "t"))
    assert code == 0
    rows = _rows(tmp_path / "t" / "truncation.csv")
    assert rows[0][0] == "lambda" and rows[0][-1] == "scenario_hash" and len(rows) == 5
    code, _, _ = _run(capsys, "scan", "--scenario", str(path), "--out", str(tmp_path / "s"))
    assert code == 0
    scan = json.loads((tmp_path / "s" / "scan.json").read_text())
    assert [r["q"] for r in scan["rows"]] == [2.0, 1.8]
    assert scan["rows"][0]["stable"] and not scan["rows"][0]["in_Lq"]


def test_threads_must_be_positive(capsys):
    code, _, err = _run(capsys, "verify", "--scenario", "p2_q19.json", "--threads", "0")
    assert code == 2 and "--threads" in err
