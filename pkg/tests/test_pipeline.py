"""
Pipeline and command line tests. The full runs are marked slow.
"""

import json
import sys
from pathlib import Path

import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from constants import AppConstants
from core.config_manager import load_experiment
from errors import ConfigError
from main import main
from pipeline import ExperimentRunner, write_report

FIXTURES = Path(__file__).parent / "fixtures"


def write_experiment(tmp_path, **changes):
    data = json.loads((FIXTURES / "smoke_experiment.json").read_text(encoding="utf-8"))
    data.update(changes)
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    return path


def box_bump_experiment(tmp_path):
    return write_experiment(
        tmp_path,
        generator={"kind": "box_bump", "n": 4, "seed": 2, "params": {"resolution": 6}},
        preprocessing={"spacing": 0.5, "padding": 1.0, "smoothing_iterations": 0},
    )


def read_summary(run_dir):
    return (run_dir / AppConstants.SUMMARY_FILE).read_text(encoding="utf-8").splitlines()


# ==================== STAGES ====================

def test_generate_writes_both_ensembles(tmp_path):
    manager, experiment = load_experiment(box_bump_experiment(tmp_path))
    runner = ExperimentRunner(experiment, tmp_path / "run", manager)
    prepared = runner.generate()
    assert prepared.size == 4
    assert (tmp_path / "run" / "ensemble" / "boxbump_000.obj").is_file()
    assert (tmp_path / "run" / "preprocessed" / AppConstants.GROUND_TRUTH_FILE).is_file()
    assert "ensemble/boxbump_003.obj" in runner.artifacts.files("generate")
    assert runner.artifacts.stages["preprocess"]["status"] == "ok"

    ensemble, truth = runner.load_prepared()
    assert ensemble.ids == prepared.ids
    assert not truth.has_contours


def test_report_before_any_method_ran(tmp_path):
    manager, experiment = load_experiment(box_bump_experiment(tmp_path))
    runner = ExperimentRunner(experiment, tmp_path / "run", manager)
    runner.generate()
    report = write_report(tmp_path / "run", experiment)
    assert [row["method"] for row in report.rows] == ["pbm", "spharm", "atlas"]
    assert all(row["status"] == "missing" for row in report.rows)
    assert report.rows[0]["compactness@1"] == "n/a"
    lines = read_summary(tmp_path / "run")
    assert lines[0].startswith("method,status,compactness@1,compactness@2,compactness@5,generalization@1")
    assert lines[0].endswith(",ari,pass_count")


def test_bad_method_settings_point_at_their_line(tmp_path):
    path = write_experiment(tmp_path, methods=[{"name": "pbm", "preset": "particles",
                                                "settings": {"num_particles": 6}}])
    manager, experiment = load_experiment(path)
    with pytest.raises(ConfigError, match="power of two") as info:
        ExperimentRunner(experiment, tmp_path / "run", manager)
    assert info.value.line is not None


# ==================== COMMAND LINE ====================

def test_cli_config_errors_exit_with_two(tmp_path):
    assert main(["run", "--config", str(tmp_path / "absent.json")]) == AppConstants.EXIT_CONFIG_ERROR
    broken = tmp_path / "broken.json"
    broken.write_text('{"methods": [\n', encoding="utf-8")
    assert main(["generate", "--config", str(broken)]) == AppConstants.EXIT_CONFIG_ERROR
    bad = write_experiment(tmp_path, methods=[{"preset": "particles", "settings": {"num_particles": 6}}])
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "run")]) == AppConstants.EXIT_CONFIG_ERROR


def test_cli_stage_without_inputs_exits_with_three(tmp_path):
    config = box_bump_experiment(tmp_path)
    code = main(["correspond", "--config", str(config), "--out", str(tmp_path / "run")])
    assert code == AppConstants.EXIT_STAGE_FAILURE


def test_cli_params_lists_matches(capsys):
    assert main(["params", "icp"]) == AppConstants.EXIT_OK
    out = capsys.readouterr().out
    assert "preprocessing.register" in out
    assert out.startswith("[Preprocessing]")
    assert main(["params", "spherical.l_max"]) == AppConstants.EXIT_OK
    detail = capsys.readouterr().out
    assert detail.startswith("spherical.l_max (Harmonic Degree, Spherical)")
    assert "range=[0, 60]" in detail
    assert main(["params", "no-such-parameter"]) == AppConstants.EXIT_OK
    assert "No parameters match" in capsys.readouterr().out


def test_cli_report_on_empty_directory(tmp_path):
    assert main(["report", "--out", str(tmp_path / "run")]) == AppConstants.EXIT_OK
    assert read_summary(tmp_path / "run")[1:] == []
    assert (tmp_path / "run" / AppConstants.REPORT_FILE).is_file()


def test_report_lists_edited_artifacts(tmp_path):
    manager, experiment = load_experiment(box_bump_experiment(tmp_path))
    runner = ExperimentRunner(experiment, tmp_path / "run", manager)
    runner.generate()
    mesh = tmp_path / "run" / "ensemble" / "boxbump_000.obj"
    mesh.write_text(mesh.read_text(encoding="utf-8") + "# edited\n", encoding="utf-8")
    report = write_report(tmp_path / "run", experiment)
    assert report.modified == ["ensemble/boxbump_000.obj"]
    assert report.to_dict()["modified"] == ["ensemble/boxbump_000.obj"]


# ==================== FULL RUNS ====================

@pytest.mark.slow
def test_smoke_run_produces_report(tmp_path):
    config = write_experiment(tmp_path)
    run_dir = tmp_path / "run"
    assert main(["run", "--config", str(config), "--out", str(run_dir)]) in (AppConstants.EXIT_OK,
                                                                             AppConstants.EXIT_STAGE_FAILURE)
    report = json.loads((run_dir / AppConstants.REPORT_FILE).read_text(encoding="utf-8"))
    assert [row["method"] for row in report["methods"]] == ["pbm", "spharm", "atlas"]
    assert report["missing"] == []
    assert report["provenance"]["seeds"]["generator"] == 1
    assert len(report["provenance"]["config_hash"]) == 64
    assert "numpy" in report["provenance"]["versions"]
    assert "config.json" in report["files"]
    assert (run_dir / AppConstants.LOG_FILE).is_file()

    for row in report["methods"]:
        if row["status"] == "ok":
            assert (run_dir / "metrics" / f"{row['method']}_metrics.csv").is_file()
            assert (run_dir / "clustering" / f"{row['method']}.csv").is_file()
            assert 0.0 <= row["compactness@1"] <= 1.0
        else:
            assert f"correspond:{row['method']}" in report["failures"]
    assert (run_dir / "clustering" / "distance_transform.csv").is_file()

    # the report stage alone rebuilds the same table from the run directory
    before = read_summary(run_dir)
    assert main(["report", "--out", str(run_dir)]) in (AppConstants.EXIT_OK, AppConstants.EXIT_STAGE_FAILURE)
    assert read_summary(run_dir) == before


@pytest.mark.slow
def test_results_do_not_depend_on_worker_count(tmp_path):
    config = write_experiment(tmp_path, methods=[
        {"name": "pbm", "preset": "particles",
         "settings": {"num_particles": 8, "iterations_per_split": 3, "final_iterations": 3}},
        {"name": "spharm", "preset": "spherical", "settings": {"l_max": 3, "level": 1}},
    ])
    for workers in (1, 3):
        main(["run", "--config", str(config), "--out", str(tmp_path / f"w{workers}"), "--workers", str(workers)])
    assert read_summary(tmp_path / "w1") == read_summary(tmp_path / "w3")
    for name in ("pbm", "spharm"):
        first = sorted((tmp_path / "w1" / "correspondences" / name).glob("*.particles"))
        assert first
        for path in first:
            other = tmp_path / "w3" / "correspondences" / name / path.name
            assert path.read_text() == other.read_text()
