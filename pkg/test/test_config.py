"""配置加载与校验"""

import pytest

from app.config import Config, load_scenario, scenario_from_dict
from app.exceptions import ConfigurationError


def test_defaults_without_file(tmp_path, monkeypatch):
    for name in ("SEED", "THREADS", "OUT", "SCENARIO", "LOG_LEVEL", "METRICS_ENABLED"):
        monkeypatch.delenv(f"BELLSIM_{name}", raising=False)
    cfg = Config(str(tmp_path / "missing.yaml"))
    assert cfg.SEED == 1
    assert cfg.SCENARIO == "reproduce"
    assert cfg.METRICS_ENABLED
    cfg.validate()


def test_yaml_then_env_precedence(tmp_path, monkeypatch):
    path = tmp_path / "config.yaml"
    path.write_text("runtime:\n  seed: 5\n  threads: 2\nlogging:\n  level: debug\n", encoding="utf-8")
    monkeypatch.delenv("BELLSIM_THREADS", raising=False)
    monkeypatch.delenv("BELLSIM_LOG_LEVEL", raising=False)
    monkeypatch.setenv("BELLSIM_SEED", "9")
    cfg = Config(str(path))
    assert cfg.SEED == 9
    assert cfg.THREADS == 2
    assert cfg.LOG_LEVEL == "DEBUG"
    assert cfg.to_dict()["runtime"]["seed"] == 9


@pytest.mark.parametrize("attr, value, path", [
    ("THREADS", 0, "runtime.threads"),
    ("CHUNK_SIZE", 0, "runtime.chunk_size"),
    ("SEED", -1, "runtime.seed"),
    ("LOG_LEVEL", "LOUD", "logging.level"),
])
def test_validate_reports_path(tmp_path, attr, value, path):
    cfg = Config(str(tmp_path / "missing.yaml"))
    setattr(cfg, attr, value)
    with pytest.raises(ConfigurationError) as info:
        cfg.validate()
    assert info.value.path == path


def test_shipped_scenarios_load():
    for name in ("spreadsheet", "gill", "quantum", "chvm", "collision", "end_to_end", "reproduce"):
        scenario = load_scenario(f"scenarios/{name}.yaml")
        assert scenario.scenario == name.replace("_", "-")
        assert scenario.seed == 1


def test_overrides_ignore_none():
    scenario = scenario_from_dict({"scenario": "gill", "seed": 3}, scenario=None, seed=8)
    assert scenario.scenario == "gill"
    assert scenario.seed == 8


def test_unknown_key_names_path():
    with pytest.raises(ConfigurationError) as info:
        scenario_from_dict({"scenario": "gill", "seed": 1, "gill": {"replicatons": 5}})
    assert info.value.path == "gill.replicatons"


def test_invalid_value_names_path():
    with pytest.raises(ConfigurationError) as info:
        scenario_from_dict({"scenario": "collision", "seed": 1, "collision": {"schedule": "alternating"}})
    assert info.value.path == "collision.schedule"


def test_scenario_file_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        load_scenario(str(tmp_path / "missing.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("scenario: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_scenario(str(bad))
    listed = tmp_path / "list.yaml"
    listed.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigurationError, match="mapping"):
        load_scenario(str(listed))


@pytest.mark.parametrize("section, params, path", [
    ("spreadsheet", {"n_rows": 400, "sample_size": 500}, "spreadsheet.sample_size"),
    ("collision", {"spreadsheet_rows": 100, "sample_size": 1000}, "collision.sample_size"),
    ("end_to_end", {"n_trials": 1000, "sample_size": 2000}, "end_to_end.sample_size"),
])
def test_sample_size_cannot_exceed_rows(section, params, path):
    with pytest.raises(ConfigurationError, match="exceeds") as info:
        scenario_from_dict({"scenario": "reproduce", "seed": 1, section: params})
    assert info.value.path == path


def test_sample_size_equal_to_rows_is_accepted():
    scenario = scenario_from_dict({"scenario": "spreadsheet", "seed": 1,
                                   "spreadsheet": {"n_rows": 100, "sample_size": 100}})
    assert scenario.spreadsheet.sample_size == 100


def test_axis_accepts_comma_separated_string():
    scenario = scenario_from_dict({"scenario": "quantum", "seed": 1, "quantum": {
        "a": "0,0,1", "ap": "1, 0, 0", "b": [0.6, 0.0, 0.8], "bp": "-0.6,0,0.8"}})
    assert scenario.quantum.a == [0.0, 0.0, 1.0]
    assert scenario.quantum.ap == [1.0, 0.0, 0.0]
    assert scenario.quantum.bp == [-0.6, 0.0, 0.8]


@pytest.mark.parametrize("axis", ["0,1", "0,,1", "x,y,z", [0.0, 1.0]])
def test_malformed_axis_names_path(axis):
    with pytest.raises(ConfigurationError) as info:
        scenario_from_dict({"scenario": "quantum", "seed": 1, "quantum": {"a": axis}})
    assert info.value.path == "quantum.a"
