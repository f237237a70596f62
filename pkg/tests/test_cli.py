import json
import shutil
from pathlib import Path

import pytest

from asdflow.cli import run
from asdflow.io import read_asdf, read_path_csv
from asdflow.problem import ReportDocument

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


@pytest.fixture
def work(tmp_path):
    for f in PROBLEMS.glob("*.json"):
        shutil.copy(f, tmp_path / f.name)
    return tmp_path


def _report(path):
    return ReportDocument.model_validate(json.loads(Path(path).read_text()))


def test_solve_flow_writes_csv_and_report(work, monkeypatch, capsys):
    monkeypatch.chdir(work)
    assert run(["solve-flow", "quadratic_flow.json"]) == 0
    t, x = read_path_csv(work / "quadratic_flow.csv")
    assert len(t) == 1025
    doc = _report(work / "quadratic_flow.report.json")
    assert doc.solve.converged and doc.exit_code == 0
    assert "converged: True" in capsys.readouterr().out


def test_solve_flow_is_deterministic(work):
    a, b = work / "a.csv", work / "b.csv"
    run(["solve-flow", str(work / "abs_flow.json"), "--csv", str(a)])
    run(["solve-flow", str(work / "abs_flow.json"), "--csv", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_hamiltonian_and_second_order(work):
    assert run(["solve-hamiltonian", str(work / "hamiltonian.json"), "--csv", str(work / "h.csv"),
                "--report", str(work / "h.json")]) == 0
    _, x = read_path_csv(work / "h.csv")
    assert x.shape[1] == 2
    assert run(["solve-second-order", str(work / "second_order.json"), "--report", str(work / "s.json")]) == 0
    assert _report(work / "s.json").solve.extras["max_second_difference_gap"] <= 1e-6


def test_multiflow_outputs(work):
    assert run(["solve-multiflow", str(work / "multiflow.json"), "--csv", str(work / "m.csv"),
                "--asdf", str(work / "m.asdf"), "--report", str(work / "m.json")]) == 0
    assert read_asdf(work / "m.asdf").shape == (65, 65, 1)
    assert (work / "m.csv").read_text().splitlines()[0] == "s,t,x_1"
    assert _report(work / "m.json").multiflow.converged


def test_bad_grid_exits_1_naming_field(work, capsys):
    assert run(["solve-multiflow", str(work / "multiflow_bad.json")]) == 1
    assert "grid.M" in capsys.readouterr().err


def test_verify_asd_and_estimates(work, capsys):
    assert run(["verify-asd", str(work / "basic_quadratic.json")]) == 0
    out = capsys.readouterr().out
    assert "max gap: 0.000000e+00" in out
    assert run(["estimates", str(work / "multiflow.json"), "--report", str(work / "e.json")]) == 0
    assert _report(work / "e.json").estimates.all_ok


def test_nonconvergence_exit_2_still_writes(work):
    prob = json.loads((work / "abs_flow.json").read_text())
    prob["solver"] = {"max_iterations": 3}
    (work / "short.json").write_text(json.dumps(prob))
    assert run(["solve-flow", str(work / "short.json"), "--csv", str(work / "o.csv")]) == 2
    assert (work / "o.csv").exists()


def test_input_errors(work, capsys):
    (work / "broken.json").write_text("{not json")
    assert run(["solve-flow", str(work / "broken.json")]) == 1
    assert run(["solve-flow", str(work / "missing.json")]) == 1
    assert run(["solve-flow", str(work / "multiflow.json")]) == 1
    assert "kind" in capsys.readouterr().err
    prob = json.loads((work / "quadratic_flow.json").read_text())
    prob["phi"] = {"kind": "quadratic", "Q": [[1.0, 0.0], [0.0, 1.0]]}
    (work / "dim.json").write_text(json.dumps(prob))
    assert run(["solve-flow", str(work / "dim.json")]) == 1


def test_selftest_json_negative_control(monkeypatch, capsys):
    monkeypatch.setenv("ASDFLOW_SELFTEST_TOL_FLOW_ORACLE", "1e-20")
    assert run(["selftest", "--json"]) == 2
    doc = ReportDocument.model_validate(json.loads(capsys.readouterr().out))
    rows = {r.name: r for r in doc.selftest.rows}
    assert not rows["flow_oracle"].passed
    assert sum(not r.passed for r in doc.selftest.rows) == 1


def test_schema_command(capsys):
    assert run(["schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    published = json.loads((PROBLEMS.parent / "docs" / "report_schema.json").read_text())
    assert schema == published
