import csv
import io
import json
from pathlib import Path

import pytest

from mgw.cli import EXIT_INVALID, EXIT_OK, EXIT_USAGE, run

LAWS = Path(__file__).resolve().parents[1] / "data" / "laws"


def law(name):
    return str(LAWS / f"{name}.json")


def call(capsys, *argv):
    code = run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_classify(capsys):
    code, out, _ = call(capsys, "classify", "--law", law("binary"))
    assert code == EXIT_OK
    obj = json.loads(out)
    assert obj["schema"] == 1
    assert obj["verdict"] == "Generic"
    assert obj["theta_c"] == pytest.approx(1.5**0.5, abs=1e-10)


def test_classify_non_generic(capsys):
    code, out, _ = call(capsys, "classify", "--law", law("powerlaw_a3"))
    assert json.loads(out)["branch"] == "rho=1"
    code, out, _ = call(capsys, "classify", "--law", law("finite_radius_nongeneric"))
    obj = json.loads(out)
    assert obj["verdict"] == "NonGeneric"
    assert obj["diagnostics"]["inequality_holds"] is True


def test_supercritical_and_invalid_laws(capsys):
    code, _, err = call(capsys, "classify", "--law", law("supercritical"))
    assert code == EXIT_INVALID
    assert json.loads(err)["condition"] == "subcritical"
    code, _, err = call(capsys, "classify", "--law", law("unmarked"))
    assert code == EXIT_INVALID
    assert json.loads(err)["condition"] == "condq"
    code, _, err = call(capsys, "classify", "--law", "/nonexistent.json")
    assert code == EXIT_INVALID


def test_usage_errors(capsys):
    assert call(capsys)[0] == EXIT_USAGE
    assert call(capsys, "classify")[0] == EXIT_USAGE
    assert call(capsys, "frobnicate", "--law", law("binary"))[0] == EXIT_USAGE
    assert call(capsys, "pmf", "--law", law("binary"), "--target", "Q", "--upto", "3")[0] == EXIT_USAGE
    assert call(capsys, "diagnose", "--law", law("binary"), "--kind", "B", "--grid", "5,3")[0] == EXIT_USAGE
    assert call(capsys, "sample", "--law", law("binary"), "--mode", "cond:x")[0] == EXIT_USAGE


def test_tilt(capsys):
    code, out, _ = call(capsys, "tilt", "--law", law("binary_q05"), "--theta", "1.1", "--upto", "3")
    obj = json.loads(out)
    assert code == EXIT_OK
    assert sum(obj["p"]) == pytest.approx(1.0)
    assert obj["law"]["tilt"]["theta"] == 1.1
    code, _, err = call(capsys, "tilt", "--law", law("binary_q05"), "--theta", "10")
    assert code == EXIT_INVALID
    assert json.loads(err)["condition"] == "admissible-theta"


def test_pmf_csv_and_jsonl(capsys):
    code, out, _ = call(capsys, "pmf", "--law", law("binary_q05"), "--target", "N", "--upto", "5")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == EXIT_OK
    assert [r["index"] for r in rows] == [str(i) for i in range(6)]
    assert float(rows[0]["probability"]) > 0
    code, out, _ = call(capsys, "pmf", "--law", law("binary_q1"), "--target", "M", "--upto", "3", "--out", "jsonl")
    lines = [json.loads(x) for x in out.splitlines()]
    assert lines[3]["probability"] == pytest.approx(0.144)
    code, out, _ = call(capsys, "pmf", "--law", law("critical_q05"), "--target", "Sn:4", "--upto", "4", "--out", "json")
    assert len(json.loads(out)["rows"]) == 5


def test_pmf_to_file(capsys, tmp_path):
    path = tmp_path / "n.csv"
    code, out, _ = call(capsys, "pmf", "--law", law("binary_q05"), "--target", "W:2", "--upto", "4", "--out", str(path))
    assert code == EXIT_OK and out == ""
    assert path.read_text().startswith("index,probability,tail_mass")


def test_sample_modes(capsys):
    code, out, _ = call(capsys, "sample", "--law", law("binary_q05"), "--mode", "mgw", "--count", "5", "--seed", "3", "--workers", "1")
    trees = [json.loads(x) for x in out.splitlines()]
    assert code == EXIT_OK and len(trees) == 5
    code, again, _ = call(capsys, "sample", "--law", law("binary_q05"), "--mode", "mgw", "--count", "5", "--seed", "3", "--workers", "1")
    assert again == out
    code, out, _ = call(capsys, "sample", "--law", law("binary_q05"), "--mode", "cond:4", "--count", "3", "--out", "json", "--workers", "1")
    obj = json.loads(out)
    assert len(obj["trees"]) == 3
    assert obj["stats"]["attempts"] >= 3
    code, out, _ = call(capsys, "sample", "--law", law("critical_q05"), "--mode", "kesten:2", "--count", "2")
    assert all(json.loads(x)["degree"] == 2 for x in out.splitlines())
    code, out, _ = call(capsys, "sample", "--law", law("powerlaw_a3"), "--mode", "condens:2", "--count", "2")
    assert code == EXIT_OK and len(out.splitlines()) == 2
    code, _, err = call(capsys, "sample", "--law", law("binary_q05"), "--mode", "kesten:2")
    assert code == EXIT_INVALID


def test_sample_attempt_cap(capsys):
    code, _, err = call(capsys, "sample", "--law", law("binary_q05"), "--mode", "cond:80", "--attempt-cap", "10", "--workers", "1")
    assert code == EXIT_INVALID
    assert "attempt cap" in json.loads(err)["error"]


def test_limitprob(capsys, tmp_path):
    root = Path(__file__).resolve().parents[1] / "data" / "root.json"
    code, out, _ = call(capsys, "limitprob", "--law", law("critical_q05"), "--tree", str(root), "--x", "root", "--kind", "kesten")
    assert json.loads(out)["probability"] == pytest.approx(0.5)
    text = tmp_path / "t.txt"
    text.write_text("(2,0)[(0,1)(0,0)]")
    code, out, _ = call(capsys, "limitprob", "--law", law("powerlaw_a3"), "--tree", str(text), "--x", "root", "--k", "3", "--kind", "condensation")
    assert code == EXIT_OK and 0 < json.loads(out)["probability"] < 1
    code, _, err = call(capsys, "limitprob", "--law", law("powerlaw_a3"), "--tree", str(text), "--x", "7", "--kind", "condensation")
    assert code == EXIT_INVALID


def test_diagnose(capsys):
    code, out, _ = call(capsys, "diagnose", "--law", law("critical_q05"), "--kind", "B", "--grid", "20,80", "--eta", "1")
    rep = json.loads(out)["report"]
    assert rep["predicted_limit"] == pytest.approx(0.5)
    code, out, _ = call(capsys, "diagnose", "--law", law("critical_q05"), "--kind", "strong-ratio", "--grid", "50,100", "--m", "1", "--u", "1")
    assert code == EXIT_OK
    code, _, err = call(capsys, "diagnose", "--law", law("binary_q05"), "--kind", "strong-ratio", "--grid", "50")
    assert code == EXIT_INVALID
    code, out, _ = call(capsys, "diagnose", "--law", law("powerlaw_a3"), "--kind", "tail", "--grid", "100,200")
    obj = json.loads(out)
    assert set(obj["reports"]) == {"N", "Z1", "Z0"}
    assert obj["constants"]["consistency"]["agree"] is True


def test_converge(capsys):
    code, out, _ = call(capsys, "converge", "--law", law("critical_q05"), "--h", "1", "--grid", "10,40", "--samples", "2e4", "--workers", "1")
    rep = json.loads(out)["report"]
    assert code == EXIT_OK
    assert len(rep["values"]) == 2 and len(rep["ci_halfwidth"]) == 2


def test_limitprob_inline_tree(capsys):
    code, out, _ = call(capsys, "limitprob", "--law", law("critical_q05"), "--tree", "(2,0)[(0,1)(0,0)]",
                     "--x", "2", "--kind", "kesten")
    assert code == EXIT_OK
    # unmarked binary root and a marked leaf, times E[X (1 - q)] for the unmarked graft node
    assert json.loads(out)["probability"] == pytest.approx(0.25 * 0.25 * 0.5)
