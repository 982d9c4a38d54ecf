"""
Pipeline - Stage orchestration for one experiment: generate, preprocess,
correspond, evaluate, cluster and validate, then report.

Every stage reads its inputs from the run directory, so stages can be rerun
one at a time. A failing method is recorded and the other methods continue.
"""

from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from analysis import clinical
from analysis.metrics import evaluate_model, write_metric_csv
from analysis.shapestats import CorrespondenceModel, export_mode_walks
from constants import AppConstants
from core.artifact_manager import ArtifactManager
from core.config_manager import ConfigManager, ExperimentConfig, MethodSpec
from core.ensembles import (AppendageParams, Ensemble, GroundTruth, gen_appendage, gen_box_bump,
                            load_ensemble, save_ensemble)
from core.geometry import preprocess_ensemble
from debug import log_error, log_info, log_warning
from errors import ConfigError, ParameterError, ShapeBenchError, StageError
from methods import deform, particles, spherical
from utils import default_worker_count, host_info, parallel_map, read_csv, safe_json_load, safe_json_save, write_csv

REPORT_KS = (1, 2, 5)
SUMMARY_METRICS = (("compactness", "compactness"), ("generalization", "generalization_mm"),
                   ("specificity", "specificity_mm"))
VERSIONED_PACKAGES = ("numpy", "scipy", "scikit-image", "scikit-learn", "trimesh", "numba", "psutil")


def build_method_config(spec: MethodSpec):
    if spec.kind == "particles":
        return particles.PbmConfig.from_dict(spec.settings)
    if spec.kind == "spherical":
        return spherical.SphericalConfig.from_dict(spec.settings)
    return deform.DeformConfig.from_dict(spec.settings)


def package_versions() -> Dict[str, str]:
    versions = {AppConstants.APP_NAME: AppConstants.VERSION}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


@dataclass
class MethodOutcome:
    name: str
    status: str
    detail: str = ""
    model: Optional[CorrespondenceModel] = None


@dataclass
class RunReport:
    rows: List[Dict[str, Any]]
    files: List[str]
    missing: List[str]
    failures: Dict[str, str]
    provenance: Dict[str, Any] = field(default_factory=dict)
    modified: List[str] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return bool(self.failures)

    def to_dict(self) -> dict:
        return {
            "methods": self.rows,
            "files": self.files,
            "missing": self.missing,
            "modified": self.modified,
            "failures": self.failures,
            "provenance": self.provenance,
        }


class ExperimentRunner:
    """Runs the stages of one experiment inside one run directory."""

    def __init__(self, experiment: ExperimentConfig, run_dir: Optional[Path] = None,
                 manager: Optional[ConfigManager] = None, workers: Optional[int] = None):
        self.experiment = experiment
        self.manager = manager
        self.run_dir = Path(run_dir) if run_dir else experiment.output_dir
        workers = experiment.workers if workers is None else workers
        self.workers = default_worker_count() if workers == 0 else workers
        self.artifacts = ArtifactManager(self.run_dir)
        self.method_configs = {}
        for index, spec in enumerate(experiment.methods):
            try:
                self.method_configs[spec.name] = build_method_config(spec)
            except (ParameterError, TypeError) as e:
                raise self._config_error(f"method '{spec.name}': {e}", ["methods", index, "settings"]) from e

    def _config_error(self, message: str, path: Sequence) -> ConfigError:
        if self.manager is not None:
            return self.manager.error(message, path)
        return ConfigError(message)

    def _methods(self, names: Optional[Sequence[str]]) -> List[MethodSpec]:
        if not names:
            return list(self.experiment.methods)
        return [self.experiment.method(n) for n in names]

    # ---------- generate + preprocess ----------

    def _source_ensemble(self):
        spec = self.experiment.generator
        if spec is None:
            return load_ensemble(self.experiment.input_dir), None
        try:
            if spec.kind == "box_bump":
                params = dict(spec.params)
                if "bump_range" in params:
                    params["bump_range"] = tuple(params["bump_range"])
                return gen_box_bump(spec.n, spec.seed, **params)
            return gen_appendage(spec.n, spec.seed, AppendageParams.from_dict(spec.params))
        except (ParameterError, TypeError) as e:
            raise self._config_error(f"generator: {e}", ["generator", "params"]) from e

    def generate(self) -> Ensemble:
        """Produce the ensemble and its preprocessed, world-frame copy."""
        try:
            ensemble, truth = self._source_ensemble()
            self.artifacts.clear_stage("generate")
            ensemble_dir = self.artifacts.stage_dir(AppConstants.ENSEMBLE_DIR)
            self.artifacts.record_many(save_ensemble(ensemble, ensemble_dir, include_volumes=False), "generate")
            if truth is not None:
                truth.save(ensemble_dir)
                self.artifacts.record_many(sorted(ensemble_dir.rglob("*.txt")) +
                                           [ensemble_dir / AppConstants.GROUND_TRUTH_FILE], "generate")
            self.artifacts.mark_stage("generate", "ok", f"{ensemble.size} samples")

            prepared = preprocess_ensemble(ensemble, self.experiment.preprocessing, self.workers)
            self.artifacts.clear_stage("preprocess")
            out_dir = self.artifacts.stage_dir(AppConstants.PREPROCESSED_DIR)
            self.artifacts.record_many(save_ensemble(prepared, out_dir), "preprocess")
            if truth is not None:
                truth.transformed(prepared.transforms).save(out_dir)
                self.artifacts.record_many(sorted(out_dir.rglob("*.txt")) +
                                           [out_dir / AppConstants.GROUND_TRUTH_FILE], "preprocess")
            self.artifacts.mark_stage("preprocess", "ok", f"grid {prepared.volumes[0].dims}")
            return prepared
        except ConfigError:
            raise
        except ShapeBenchError as e:
            self.artifacts.mark_stage("generate", "failed", str(e))
            raise StageError(f"generate: {e}") from e
        finally:
            self.artifacts.save()

    def load_prepared(self):
        directory = self.artifacts.path(AppConstants.PREPROCESSED_DIR)
        if not directory.is_dir():
            raise StageError(f"no preprocessed ensemble in {directory}; run 'generate' first")
        return load_ensemble(directory), GroundTruth.load(directory)

    # ---------- correspond ----------

    def _correspond_one(self, spec: MethodSpec, ensemble: Ensemble) -> MethodOutcome:
        config = self.method_configs[spec.name]
        out_dir = self.artifacts.path(AppConstants.CORRESPONDENCE_DIR, spec.name)
        written: List[Path] = []
        try:
            if spec.kind == "particles":
                result = particles.optimize(ensemble, config, spec.seed, self.workers)
                particles.write_trace_csv(result.trace, out_dir / "iterations.csv")
                written.append(out_dir / "iterations.csv")
            elif spec.kind == "spherical":
                result = spherical.correspond_spherical(ensemble, config, self.workers)
                spherical.write_reports(result.reports, out_dir / "report.json")
                written.append(out_dir / "report.json")
            else:
                result = deform.run_deform(ensemble, config, self.workers)
                result.atlas.save(out_dir / "atlas")
                written += [out_dir / "atlas" / "template.obj", out_dir / "atlas" / "atlas.json"]
            model = CorrespondenceModel(result.model.points, spec.name, tuple(ensemble.ids))
            written += model.save(out_dir)
        except (ShapeBenchError, np.linalg.LinAlgError) as e:
            log_error(f"method '{spec.name}' failed: {e}")
            return MethodOutcome(spec.name, "failed", str(e))
        self.artifacts.record_many(written, f"correspond:{spec.name}")
        return MethodOutcome(spec.name, "ok", f"{model.num_shapes} x {model.num_points} points", model)

    def correspond(self, names: Optional[Sequence[str]] = None) -> Dict[str, MethodOutcome]:
        """Run each method as an independent job."""
        specs = self._methods(names)
        ensemble, _ = self.load_prepared()
        for spec in specs:
            self.artifacts.clear_stage(f"correspond:{spec.name}")
        outcomes = parallel_map(lambda s: self._correspond_one(s, ensemble), specs, min(self.workers, len(specs)))
        for outcome in outcomes:
            self.artifacts.mark_stage(f"correspond:{outcome.name}", outcome.status, outcome.detail)
        self.artifacts.save()
        return {o.name: o for o in outcomes}

    def load_model(self, spec: MethodSpec, sample_ids: Sequence[str]) -> CorrespondenceModel:
        directory = self.artifacts.path(AppConstants.CORRESPONDENCE_DIR, spec.name)
        if not directory.is_dir():
            raise StageError(f"no correspondences for method '{spec.name}'")
        return CorrespondenceModel.load(directory, spec.name, sample_ids)

    # ---------- evaluate ----------

    def _evaluate_one(self, spec: MethodSpec, sample_ids: Sequence[str]) -> MethodOutcome:
        metrics = self.experiment.metrics
        stage = f"evaluate:{spec.name}"
        self.artifacts.clear_stage(stage)
        try:
            model = self.load_model(spec, sample_ids)
            pdm, curves = evaluate_model(model, metrics.k_max, metrics.specificity_samples, metrics.seed,
                                         self.workers)
        except (ShapeBenchError, OSError) as e:
            log_error(f"evaluating '{spec.name}' failed: {e}")
            return MethodOutcome(spec.name, "failed", str(e))
        model_dir = self.artifacts.path(AppConstants.MODELS_DIR, spec.name)
        pdm.save(model_dir / "pdm.json")
        written = [model_dir / "pdm.json"]
        written += export_mode_walks(pdm, model_dir / "modes", metrics.mode_walk_stds)
        csv_path = self.artifacts.path(AppConstants.METRICS_DIR, f"{spec.name}_metrics.csv")
        write_metric_csv(curves, csv_path)
        written.append(csv_path)
        self.artifacts.record_many(written, stage)
        return MethodOutcome(spec.name, "ok", f"{pdm.num_modes} modes", model)

    def evaluate(self, names: Optional[Sequence[str]] = None) -> Dict[str, MethodOutcome]:
        ensemble, _ = self.load_prepared()
        outcomes = {}
        for spec in self._methods(names):
            outcome = self._evaluate_one(spec, ensemble.ids)
            self.artifacts.mark_stage(f"evaluate:{spec.name}", outcome.status, outcome.detail)
            outcomes[spec.name] = outcome
        self.artifacts.save()
        return outcomes

    # ---------- cluster + validate ----------

    def _write_assignment(self, path: Path, sample_ids: Sequence[str], assignment, truth) -> Path:
        families = truth.labels if truth is not None and truth.labels is not None else None
        rows = []
        for i, sid in enumerate(sample_ids):
            family = AppConstants.FAMILY_NAMES.get(int(families[i]), "") if families is not None else "n/a"
            rows.append([sid, int(assignment.labels[i]), family])
        write_csv(path, ["sample_id", "cluster", "family"], rows)
        return path

    def validate(self, names: Optional[Sequence[str]] = None) -> Dict[str, Dict]:
        """Cluster every method's correspondences and run the measurement t-tests."""
        settings = self.experiment.validation
        ensemble, truth = self.load_prepared()
        summary: Dict[str, Dict] = {}
        self.artifacts.clear_stage("validate")
        if not settings.enabled:
            log_info("Validation disabled; skipping")
            self.artifacts.mark_stage("validate", "skipped", "disabled")
            self.artifacts.save()
            return summary
        if truth is not None:
            index = {sid: i for i, sid in enumerate(truth.sample_ids)}
            truth_rows = [index[sid] for sid in ensemble.ids]
            labels = None if truth.labels is None else truth.labels[truth_rows]
        else:
            labels = None

        written: List[Path] = []
        cluster_dir = self.artifacts.stage_dir(AppConstants.CLUSTERING_DIR)
        reference = clinical.cluster_distance_transforms(ensemble.volumes, settings.clusters, settings.seed,
                                                         settings.restarts)
        written.append(self._write_assignment(cluster_dir / "distance_transform.csv", ensemble.ids,
                                              reference, truth))
        dt_ari = clinical.adjusted_rand(reference.labels, labels) if labels is not None else None

        results = []
        for spec in self._methods(names):
            try:
                model = self.load_model(spec, ensemble.ids)
                assignment = clinical.kmeans(model.flattened(), settings.clusters, settings.seed, settings.restarts)
                written.append(self._write_assignment(cluster_dir / f"{spec.name}.csv", ensemble.ids,
                                                      assignment, truth))
                entry = {
                    "ari": clinical.adjusted_rand(assignment.labels, labels) if labels is not None else None,
                    "distance_transform_ari": dt_ari,
                    "center_agreement_mm": clinical.cluster_center_agreement(model, assignment, reference),
                }
                if truth is not None and truth.has_contours:
                    used = assignment if settings.cluster_source == "method" else reference
                    result = clinical.validate_method(model, truth, used, self.workers)
                    results.append(result)
                    entry["pass_count"] = result.pass_count()
                    entry["tests"] = sum(1 for r in result.table.values() if r is not None)
                    entry["skipped_clusters"] = result.skipped()
                else:
                    entry["pass_count"] = None
                summary[spec.name] = entry
            except (ShapeBenchError, OSError) as e:
                log_error(f"validating '{spec.name}' failed: {e}")
                summary[spec.name] = {"error": str(e)}
                self.artifacts.mark_stage(f"validate:{spec.name}", "failed", str(e))
            else:
                self.artifacts.mark_stage(f"validate:{spec.name}", "ok")

        if truth is None or not truth.has_contours:
            log_warning("no ground-truth contours; measurement validation marked n/a")
        if results:
            validation_dir = self.artifacts.stage_dir(AppConstants.VALIDATION_DIR)
            clinical.write_measurements_csv(results, validation_dir / "measurements.csv")
            clinical.write_pvalue_table(results, validation_dir / "pvalues.csv")
            written += [validation_dir / "measurements.csv", validation_dir / "pvalues.csv"]
        summary_path = cluster_dir / "summary.json"
        safe_json_save(summary, summary_path)
        written.append(summary_path)
        self.artifacts.record_many(written, "validate")
        self.artifacts.mark_stage("validate", "ok", f"{len(results)} method(s) validated")
        self.artifacts.save()
        return summary

    # ---------- composite ----------

    def run(self) -> RunReport:
        if self.experiment.source is not None:
            self.artifacts.snapshot_config(self.experiment.source)
        self.generate()
        outcomes = self.correspond()
        succeeded = [n for n, o in outcomes.items() if o.status == "ok"]
        if succeeded:
            self.evaluate(succeeded)
            self.validate(succeeded)
        return write_report(self.run_dir, self.experiment)


# ==================== REPORT ====================

def _metric_at(rows: List[dict], column: str, k: int) -> Any:
    for row in rows:
        if int(row["K"]) == k:
            value = row.get(column, "")
            return float(value) if value not in ("", "nan") else "n/a"
    return "n/a"


def _method_names(artifacts: ArtifactManager, experiment: Optional[ExperimentConfig]) -> List[str]:
    if experiment is not None:
        return [m.name for m in experiment.methods]
    names = {stage.split(":", 1)[1] for stage in artifacts.stages if stage.startswith("correspond:")}
    return sorted(names)


def write_report(run_dir: Path, experiment: Optional[ExperimentConfig] = None) -> RunReport:
    """Cross-method comparison table built from whatever the run directory holds."""
    artifacts = ArtifactManager(run_dir)
    if experiment is None and artifacts.path("config.json").exists():
        try:
            experiment = ConfigManager(artifacts.path("config.json")).experiment(check_paths=False)
        except ConfigError as e:
            log_warning(f"run config could not be read: {e}")
    validation = safe_json_load(artifacts.path(AppConstants.CLUSTERING_DIR, "summary.json"), default={}) or {}

    rows, failures = [], {}
    for stage, info in sorted(artifacts.stages.items()):
        if info.get("status") == "failed":
            failures[stage] = info.get("detail", "")
    for name in _method_names(artifacts, experiment):
        row: Dict[str, Any] = {"method": name}
        csv_path = artifacts.path(AppConstants.METRICS_DIR, f"{name}_metrics.csv")
        metric_rows = read_csv(csv_path) if csv_path.exists() else []
        for label, column in SUMMARY_METRICS:
            for k in REPORT_KS:
                row[f"{label}@{k}"] = _metric_at(metric_rows, column, k)
        entry = validation.get(name, {})
        row["ari"] = entry.get("ari") if entry.get("ari") is not None else "n/a"
        row["pass_count"] = entry.get("pass_count") if entry.get("pass_count") is not None else "n/a"
        status = artifacts.stages.get(f"correspond:{name}", {}).get("status", "missing")
        row["status"] = status
        rows.append(row)

    header = ["method", "status"] + [f"{label}@{k}" for label, _ in SUMMARY_METRICS for k in REPORT_KS]
    header += ["ari", "pass_count"]
    summary_path = artifacts.path(AppConstants.SUMMARY_FILE)
    write_csv(summary_path, header, [[row[h] for h in header] for row in rows])
    artifacts.record(summary_path, "report")

    missing = artifacts.missing()
    if missing:
        log_warning(f"{len(missing)} artifact(s) listed in the manifest are missing: {', '.join(missing[:5])}")
    modified = artifacts.modified()
    if modified:
        log_warning(f"{len(modified)} artifact(s) changed since they were recorded: {', '.join(modified[:5])}")
    provenance: Dict[str, Any] = {"versions": package_versions(), "host": host_info()}
    if experiment is not None:
        provenance.update({"experiment": experiment.name, "config_hash": experiment.config_hash,
                           "seeds": experiment.seeds()})
    report = RunReport(rows, [f for f in artifacts.files() if f not in missing], missing, failures, provenance,
                       modified)
    safe_json_save(report.to_dict(), artifacts.path(AppConstants.REPORT_FILE))
    artifacts.mark_stage("report", "ok", f"{len(rows)} method row(s)")
    artifacts.save()
    log_info(f"Report: {len(rows)} method(s), {len(failures)} failure(s) -> {summary_path}")
    return report
