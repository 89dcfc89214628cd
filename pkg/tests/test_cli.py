import csv
import io
import json

import numpy as np
import pytest
import yaml

from reslim import acceptance
from reslim.acceptance import CriterionResult
from reslim.cli import load_manifest, ManifestError, main
from reslim.metric_core import FiniteMetricSpace, RootedMeasuredSpace, save_space
from reslim.process import KilledPath
from reslim.resistance import path_network, save_network

from conftest import line_space


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_seed_list_is_a_schema_error(tmp_path, capsys):
    m = write(tmp_path, "m.yaml", "experiment: criterion\nseeds: []\noutput: out\n"
                                  "parameters:\n  id: A1\n")
    assert main(["run", str(m)]) == 2
    err = capsys.readouterr().err
    assert "at least one seed required" in err
    assert "m.yaml:2:" in err


@pytest.mark.parametrize("text, line, message", [
    ("experiment: criterion\nseeds: [0]\noutput: o\nbogus: 1\n", 4, "unknown key"),
    ("experiment: criterion\nseeds: [0]\noutput: o\nparameters:\n  id: A1\n  extra: 3\n", 6,
     "unknown parameter"),
    ("experiment: nope\nseeds: [0]\noutput: o\n", 1, "unknown experiment"),
    ("experiment: gwcrt\nseeds: [0, x]\noutput: o\n", 2, "not an integer"),
    ("experiment: gwcrt\nseeds: [0]\noutput: o\nparameters:\n  n: [0]\n", 5, "positive"),
])
def test_schema_errors_name_the_line(tmp_path, text, line, message):
    m = write(tmp_path, "m.yaml", text)
    with pytest.raises(ManifestError) as exc:
        load_manifest(m)
    assert f"m.yaml:{line}:" in str(exc.value)
    assert message in str(exc.value)


def test_missing_key_is_reported(tmp_path):
    m = write(tmp_path, "m.yaml", "experiment: criterion\nseeds: [0]\n")
    with pytest.raises(ManifestError, match="missing required key 'output'"):
        load_manifest(m)


def test_criterion_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "a8"
    assert main(["run", "--criterion", "A8", "--out", str(out)]) == 0
    assert "A8 PASS" in capsys.readouterr().out
    results = json.loads((out / "results.json").read_text())
    assert results["criteria"] == {"A8": True}
    lock = yaml.safe_load((out / "manifest.lock").read_text())
    assert lock["experiment"] == "criterion" and lock["seeds"] == [0]
    assert (out / "data.csv").exists()


def test_manifest_runs_are_deterministic(tmp_path):
    m = write(tmp_path, "m.yaml", "experiment: criterion\nseeds: [0, 1]\noutput: o\n"
                                  "parameters:\n  id: A3\n")
    blobs = []
    for name in ("r1", "r2"):
        assert main(["run", str(m), "--out", str(tmp_path / name)]) == 0
        res = json.loads((tmp_path / name / "results.json").read_text())
        res.pop("timestamp")
        blobs.append((res, (tmp_path / name / "data.csv").read_text()))
    assert blobs[0] == blobs[1]


def test_numerical_failure_exits_3(tmp_path, capsys, monkeypatch):
    monkeypatch.setitem(acceptance.CRITERIA, "A1",
                        lambda seed: CriterionResult("A1", False, {"max_error": 1.0}))
    assert main(["run", "--criterion", "A1", "--out", str(tmp_path / "f")]) == 3
    captured = capsys.readouterr()
    assert "A1 FAIL" in captured.out
    assert "criterion A1 failed" in captured.err


def test_unknown_criterion_exits_2(capsys):
    assert main(["run", "--criterion", "A99"]) == 2


def test_entropy_subcommand_prints_csv(tmp_path, capsys):
    p = tmp_path / "s.json"
    save_space(RootedMeasuredSpace(line_space([0, 1, 2, 3]), 0, None), p)
    assert main(["entropy", str(p)]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert rows[0]["k"] == "0" and rows[0]["N"] == "2"   # closed radius-1 balls around 1 and 3
    assert int(rows[-1]["N"]) == 4


def test_ghp_subcommand(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_space(RootedMeasuredSpace(line_space([0, 1]), 0, None), a)
    save_space(RootedMeasuredSpace(line_space([0, 1.5]), 0, None), b)
    assert main(["ghp", str(a), str(b)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["bound"] == pytest.approx(0.25, abs=1e-6)


def test_resistance_subcommand(tmp_path, capsys):
    p = tmp_path / "net.json"
    save_network(path_network(3), p)
    assert main(["resistance", "--net", str(p)]) == 0
    R = np.loadtxt(io.StringIO(capsys.readouterr().out), delimiter=",")
    np.testing.assert_allclose(R, [[0, 1, 2], [1, 0, 1], [2, 1, 0]], atol=1e-12)
    assert main(["resistance", "--net", str(p), "--alpha", "1"]) == 0


def test_simulate_subcommand_prints_jsonl(tmp_path, capsys):
    p = tmp_path / "net.json"
    save_network(path_network(3), p)
    assert main(["simulate", "--net", str(p), "--replicas", "3", "--horizon", "2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    recs = [json.loads(line) for line in lines]
    assert [r["replica"] for r in recs] == [0, 1, 2]
    for r in recs:
        assert sum(r["local_times"]) == pytest.approx(2.0)   # unit measure: total time


def test_skorokhod_subcommand(tmp_path, capsys):
    space = tmp_path / "z.json"
    save_space(RootedMeasuredSpace(FiniteMetricSpace(np.array([[0, 0.1], [0.1, 0]])), 0, None),
               space)
    x, y = tmp_path / "x.jsonl", tmp_path / "y.jsonl"
    x.write_text(KilledPath(np.array([0.0]), np.array([0])).to_jsonl())
    y.write_text(KilledPath(np.array([0.0]), np.array([1])).to_jsonl())
    assert main(["skorokhod", "--space", str(space), str(x), str(y)]) == 0
    assert json.loads(capsys.readouterr().out)["distance"] == pytest.approx(0.2, abs=1e-9)


def test_gaussian_subcommand(tmp_path, capsys):
    p = tmp_path / "net.json"
    save_network(path_network(4), p)
    assert main(["gaussian", "--net", str(p), "--replicas", "500", "--n", "2"]) == 0
    row = json.loads(capsys.readouterr().out)
    assert "freq" in row and "rhs" in row
    assert main(["gaussian"]) == 2


def test_ust_subcommand(capsys):
    assert main(["ust", "--n", "3", "--dims", "2", "--samples", "2"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["all_spanning"]


def test_small_gwcrt_single_size_makes_no_trend_claim(tmp_path, capsys):
    m = write(tmp_path, "m.yaml", "experiment: gwcrt\nseeds: [0, 1]\noutput: o\n"
                                  "parameters:\n  n: [40]\n")
    assert main(["run", str(m), "--out", str(tmp_path / "g")]) == 0
    res = json.loads((tmp_path / "g" / "results.json").read_text())
    assert "ghp_decreasing" not in res["report"]
    assert "no trend assertion" in res["report"]["trend_note"]
