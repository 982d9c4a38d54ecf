"""
Experiment config tests: schema validation with line numbers, presets,
the parameter table and the run manifest.
"""

import json
import sys
from pathlib import Path

import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from core.artifact_manager import ArtifactManager
from core.config_manager import load_experiment
from core.presets import METHOD_PRESETS, preset_settings
from core.settings_database import (get_categories, get_parameter_info, search_parameters, section_defaults,
                                    validate_parameter)
from errors import ConfigError

FIXTURES = Path(__file__).parent / "fixtures"

VALID = """{
  "name": "unit",
  "generator": {"kind": "box_bump", "n": 6, "seed": 3, "params": {"resolution": 8}},
  "preprocessing": {"spacing": 0.25},
  "methods": [
    {"name": "pbm", "preset": "particles", "settings": {"num_particles": 16}},
    {"preset": "spherical", "seed": 4}
  ],
  "metrics": {"k_max": 3},
  "output_dir": "runs/unit"
}
"""


def write_config(tmp_path, text):
    path = tmp_path / "experiment.json"
    path.write_text(text, encoding="utf-8")
    return path


def expect_error(tmp_path, text, line):
    with pytest.raises(ConfigError) as info:
        load_experiment(write_config(tmp_path, text))
    assert info.value.line == line
    return str(info.value)


# ==================== SCHEMA ====================

def test_valid_experiment_merges_presets(tmp_path):
    _, experiment = load_experiment(write_config(tmp_path, VALID))
    assert experiment.name == "unit"
    assert experiment.generator.n == 6
    assert experiment.generator.params == {"resolution": 8}
    assert experiment.preprocessing.spacing == 0.25
    assert [m.name for m in experiment.methods] == ["pbm", "spherical"]
    pbm = experiment.method("pbm")
    assert pbm.kind == "particles"
    assert pbm.settings["num_particles"] == 16
    assert pbm.settings["iterations_per_split"] == preset_settings("particles")["iterations_per_split"]
    assert experiment.metrics.k_max == 3
    assert experiment.metrics.specificity_samples == 1000
    assert experiment.validation.clusters == 4
    assert experiment.seeds() == {"metrics": 0, "validation": 0, "generator": 3,
                                  "method.pbm": 0, "method.spherical": 4}
    assert len(experiment.config_hash) == 64


def test_smoke_fixture_is_valid():
    _, experiment = load_experiment(FIXTURES / "smoke_experiment.json")
    assert {m.kind for m in experiment.methods} == {"particles", "spherical", "deform"}


def test_malformed_json_reports_line(tmp_path):
    message = expect_error(tmp_path, '{\n  "name": "x",\n  "methods": [\n}\n', 4)
    assert message.startswith("line 4:")


def test_unknown_top_level_key_reports_line(tmp_path):
    text = VALID.replace('"output_dir"', '"outptu_dir"')
    assert "outptu_dir" in expect_error(tmp_path, text, 10)


def test_unknown_method_setting_reports_line(tmp_path):
    text = VALID.replace('{"preset": "spherical", "seed": 4}', '{"preset": "spherical", "settings": {"degree": 4}}')
    message = expect_error(tmp_path, text, 7)
    assert "degree" in message and "l_max" in message


def test_out_of_range_value_reports_line(tmp_path):
    text = VALID.replace('"k_max": 3', '"k_max": 0')
    assert "metrics.k_max" in expect_error(tmp_path, text, 9)


def test_generator_and_input_dir_are_exclusive(tmp_path):
    both = VALID.replace('"output_dir"', '"input_dir": "meshes",\n  "output_dir"')
    with pytest.raises(ConfigError, match="exactly one"):
        load_experiment(write_config(tmp_path, both))
    neither = '{"methods": [{"preset": "spherical"}]}'
    with pytest.raises(ConfigError, match="exactly one"):
        load_experiment(write_config(tmp_path, neither))


def test_relative_input_dir_resolves_next_to_config(tmp_path):
    text = '{\n  "input_dir": "meshes",\n  "methods": [{"preset": "spherical"}]\n}\n'
    with pytest.raises(ConfigError, match="does not exist") as info:
        load_experiment(write_config(tmp_path, text))
    assert info.value.line == 2
    (tmp_path / "meshes").mkdir()
    _, experiment = load_experiment(write_config(tmp_path, text))
    assert experiment.input_dir == tmp_path / "meshes"


def test_method_list_rules(tmp_path):
    empty = json.loads(VALID)
    empty["methods"] = []
    with pytest.raises(ConfigError, match="non-empty"):
        load_experiment(write_config(tmp_path, json.dumps(empty, indent=2)))
    duplicate = VALID.replace('{"preset": "spherical", "seed": 4}', '{"name": "pbm", "preset": "spherical"}')
    with pytest.raises(ConfigError, match="duplicate"):
        load_experiment(write_config(tmp_path, duplicate))
    spaced = VALID.replace('"name": "pbm"', '"name": "my pbm"')
    with pytest.raises(ConfigError, match="letters, digits"):
        load_experiment(write_config(tmp_path, spaced))
    clash = VALID.replace('{"preset": "spherical", "seed": 4}', '{"preset": "spherical", "kind": "deform"}')
    with pytest.raises(ConfigError, match="not deform"):
        load_experiment(write_config(tmp_path, clash))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_experiment(tmp_path / "absent.json")


def test_preset_catalogue():
    assert set(METHOD_PRESETS) == {"particles", "spherical", "deform_sphere", "deform_mean"}
    assert METHOD_PRESETS["spherical"]["kind"] == "spherical"
    assert preset_settings("deform_mean")["template"] == "mean"
    assert preset_settings("spherical", {"l_max": 4})["l_max"] == 4


# ==================== PARAMETER TABLE ====================

def test_parameter_search_and_info():
    assert "preprocessing.register" in search_parameters("icp")
    assert "experiment.workers" in search_parameters("THREADS")
    assert get_parameter_info("spherical.l_max")["default"] == 12
    assert get_parameter_info("nope") == {}
    assert "Preprocessing" in get_categories()
    assert section_defaults("validation")["cluster_source"] == "method"


def test_validate_parameter_types():
    assert validate_parameter("metrics.k_max", 5) == (True, "")
    assert not validate_parameter("metrics.k_max", True)[0]
    assert not validate_parameter("preprocessing.spacing", "0.1")[0]
    assert validate_parameter("deform.template", "mean")[0]
    ok, message = validate_parameter("deform.template", "torus")
    assert not ok and "torus" in message
    assert not validate_parameter("box_bump.bump_range", [0.6, 0.4])[0]
    assert not validate_parameter("unknown.key", 1)[0]


# ==================== RUN MANIFEST ====================

def test_artifact_manifest_tracks_files(tmp_path):
    artifacts = ArtifactManager(tmp_path / "run")
    out = artifacts.stage_dir("metrics") / "a.csv"
    out.write_text("K\n1\n", encoding="utf-8")
    assert artifacts.record(out, "evaluate")["size"] == 4
    assert artifacts.record(tmp_path / "run" / "ghost.csv", "evaluate") is None
    artifacts.mark_stage("evaluate", "ok", "1 file")
    assert artifacts.save()

    reopened = ArtifactManager(tmp_path / "run")
    assert reopened.files("evaluate") == ["metrics/a.csv"]
    assert reopened.stages["evaluate"]["status"] == "ok"
    out.write_text("K\n2\n", encoding="utf-8")
    assert reopened.modified() == ["metrics/a.csv"]
    out.unlink()
    assert reopened.missing() == ["metrics/a.csv"]
    reopened.clear_stage("evaluate")
    assert reopened.files() == []


def test_config_snapshot_is_recorded(tmp_path):
    config = write_config(tmp_path, VALID)
    artifacts = ArtifactManager(tmp_path / "run")
    target = artifacts.snapshot_config(config)
    assert json.loads(target.read_text(encoding="utf-8"))["name"] == "unit"
    assert artifacts.files("config") == ["config.json"]
    assert artifacts.snapshot_config(tmp_path / "missing.json") is None
