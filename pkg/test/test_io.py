"""文件读写"""

import csv
import json
from fractions import Fraction

import numpy as np
import pytest

from app import chvm, collision, io
from app.exceptions import ModelValidationError, SpreadsheetError
from app.models import CorrelationSet, SettingPair, Spreadsheet


def test_spreadsheet_csv(tmp_path):
    path = tmp_path / "sheet.csv"
    sheet = Spreadsheet.from_rows([(1, -1, 1, 1), (-1, None, 1, -1)])
    io.write_spreadsheet(path, sheet)
    assert path.read_text().splitlines() == ["A,Ap,B,Bp", "1,-1,1,1", "-1,,1,-1"]
    loaded = io.read_spreadsheet(path)
    np.testing.assert_array_equal(loaded.cells, sheet.cells)
    assert loaded.has_holes


def test_spreadsheet_plus_sign_accepted(tmp_path):
    path = tmp_path / "sheet.csv"
    path.write_text("A,Ap,B,Bp\n+1,-1,+1,1\n")
    assert io.read_spreadsheet(path).cells.tolist() == [[1, -1, 1, 1]]


@pytest.mark.parametrize("content, message", [
    ("", "empty file"),
    ("A,B,C,D\n1,1,1,1\n", "line 1"),
    ("A,Ap,B,Bp\n1,1,1\n", "line 2"),
    ("A,Ap,B,Bp\n1,1,1,1\n1,2,1,1\n", "line 3"),
])
def test_spreadsheet_errors_report_line(tmp_path, content, message):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    with pytest.raises(SpreadsheetError, match=message):
        io.read_spreadsheet(path)


def test_correlations_json(tmp_path):
    path = tmp_path / "corr.json"
    corr = CorrelationSet.from_values(
        [Fraction(1, 2), 0, Fraction(-1, 3), 1], counts={pair: 6 for pair in SettingPair}
    )
    io.write_correlations(path, corr)
    data = json.loads(path.read_text())
    assert data["e_ab"] == "1/2"
    assert data["S"] == "7/6"
    assert data["variant"] == "+-++"
    assert io.read_correlations(path) == corr


def test_correlations_json_errors(tmp_path):
    path = tmp_path / "corr.json"
    path.write_text('{"e_ab": 2, "e_abp": 0, "e_apb": 0, "e_apbp": 0}')
    with pytest.raises(ModelValidationError):
        io.read_correlations(path)
    path.write_text("{not json")
    with pytest.raises(ModelValidationError, match="invalid JSON"):
        io.read_correlations(path)


def test_contextual_model_json(tmp_path):
    path = tmp_path / "model.json"
    model = chvm.demonstration_model()
    io.write_contextual_model(path, model)
    assert json.loads(path.read_text())["p_x"] == ["4/5", "1/5"]
    assert io.read_contextual_model(path) == model


def test_shipped_model_matches_demonstration_model():
    assert io.read_contextual_model("scenarios/demo_contextual.json") == chvm.demonstration_model()


def test_contextual_model_error_path():
    data = json.loads(open("scenarios/demo_contextual.json", encoding="utf-8").read())
    data["a_x"][1][0] = 5
    with pytest.raises(ModelValidationError) as info:
        io.contextual_model_from_dict(data)
    assert "a_x[1][0]" in str(info.value)
    with pytest.raises(ModelValidationError):
        io.contextual_model_from_dict([1, 2, 3])


def test_event_and_trial_logs(tmp_path):
    events = chvm.simulate_contextual(chvm.demonstration_model(), 12, chvm.SYSTEMATIC, seed=1)
    assert io.write_events(tmp_path / "events.csv", events) == 12
    with open(tmp_path / "events.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["setting"] for r in rows[:4]] == [p.value for p in SettingPair]
    assert {r["outA"] for r in rows} <= {"-1", "0", "1"}

    run = collision.run_experiment(8, "systematic", seed=1)
    assert io.write_trial_log(tmp_path / "trials.csv", run) == 8
    with open(tmp_path / "trials.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ["trial", "v", "v1", "v2", "setting", "outA", "outB"]
    assert float(rows[0]["v1"]) == pytest.approx(2 * float(rows[0]["v"]) / 5)
