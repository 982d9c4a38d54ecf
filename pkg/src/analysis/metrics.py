"""
Metrics - Compactness, generalization and specificity as functions of the
number of modes. Distances are mean per-point Euclidean distances in mm.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from core.geometry import fit_rigid
from debug import log_warning
from utils import parallel_map, write_csv
from .shapestats import PDM, CorrespondenceModel, build_pdm, procrustes_align


@dataclass
class MetricCurve:
    metric: str
    values: np.ndarray
    units: str

    @property
    def ks(self) -> np.ndarray:
        return np.arange(1, len(self.values) + 1)

    def at(self, k: int) -> float:
        """Value at K, holding the last value beyond the curve's end."""
        return float(self.values[min(k, len(self.values)) - 1])


def _check_k(pdm: PDM, k: int):
    if not 1 <= k <= pdm.num_modes:
        raise ValueError(f"K={k} outside 1..{pdm.num_modes}")


def _per_point_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mean point distance between shapes a (..., M, 3) and b (..., M, 3)."""
    return np.linalg.norm(a - b, axis=-1).mean(axis=-1)


def compactness(pdm: PDM, k: int) -> float:
    _check_k(pdm, k)
    total = pdm.total_variance
    if total <= 0:
        log_warning("zero total variance; compactness defined as 1.0")
        return 1.0
    return float(min(pdm.eigenvalues[:k].sum() / total, 1.0))


def compactness_curve(pdm: PDM, k_max: Optional[int] = None) -> MetricCurve:
    k_max = pdm.num_modes if k_max is None else min(k_max, pdm.num_modes)
    total = pdm.total_variance
    if total <= 0:
        log_warning("zero total variance; compactness defined as 1.0")
        values = np.ones(k_max)
    else:
        values = np.minimum(np.cumsum(pdm.eigenvalues)[:k_max] / total, 1.0)
    return MetricCurve("compactness", values, "fraction")


def _fold_errors(model: CorrespondenceModel, held_out: int, k_max: int, align: bool) -> np.ndarray:
    train = model.subset([i for i in range(model.num_shapes) if i != held_out])
    if align:
        train = procrustes_align(train).model
    pdm = build_pdm(train)
    target = model.points[held_out]
    mean = pdm.mean.reshape(-1, 3)
    if align:
        transform, _ = fit_rigid(target, mean)
        target = transform.apply(target)
    coefficients = pdm.project(target)
    errors = np.empty(k_max)
    for k in range(1, k_max + 1):
        kk = min(k, pdm.num_modes)
        recon = pdm.reconstruct(coefficients[:kk]).reshape(-1, 3)
        errors[k - 1] = _per_point_distance(recon, target)
    return errors


def generalization_curve(model: CorrespondenceModel, k_max: int, align: bool = True,
                         workers: int = 1) -> MetricCurve:
    """Leave-one-out reconstruction error for K = 1..k_max."""
    if model.num_shapes < 3:
        raise ValueError("generalization needs N >= 3")
    folds = parallel_map(lambda i: _fold_errors(model, i, k_max, align), range(model.num_shapes), workers)
    return MetricCurve("generalization", np.mean(folds, axis=0), "mm")


def generalization(model: CorrespondenceModel, k: int, align: bool = True) -> float:
    return generalization_curve(model, k, align).at(k)


@dataclass
class SpecificityResult:
    value: float
    standard_error: float
    distances: np.ndarray


def specificity_samples(pdm: PDM, model: CorrespondenceModel, k: int, n_samples: int = 1000,
                        seed: int = 0, chunk: int = 64) -> SpecificityResult:
    """Distances from model-sampled shapes to their nearest training shape."""
    _check_k(pdm, k)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    coefficients = rng.standard_normal((n_samples, k)) * np.sqrt(pdm.eigenvalues[:k])
    training = model.points
    distances = np.empty(n_samples)
    for start in range(0, n_samples, chunk):
        block = coefficients[start:start + chunk]
        shapes = (pdm.mean + block @ pdm.eigenvectors[:, :k].T).reshape(len(block), 1, -1, 3)
        distances[start:start + len(block)] = _per_point_distance(shapes, training[None]).min(axis=1)
    error = float(distances.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    return SpecificityResult(float(distances.mean()), error, distances)


def specificity(pdm: PDM, model: CorrespondenceModel, k: int, n_samples: int = 1000, seed: int = 0) -> float:
    return specificity_samples(pdm, model, k, n_samples, seed).value


def specificity_curve(pdm: PDM, model: CorrespondenceModel, k_max: int, n_samples: int = 1000,
                      seed: int = 0, workers: int = 1) -> MetricCurve:
    k_max = min(k_max, pdm.num_modes)
    values = parallel_map(lambda k: specificity(pdm, model, k, n_samples, seed + k),
                          range(1, k_max + 1), workers)
    return MetricCurve("specificity", np.array(values), "mm")


def evaluate_model(model: CorrespondenceModel, k_max: int, n_samples: int = 1000, seed: int = 0,
                   workers: int = 1) -> Tuple[PDM, List[MetricCurve]]:
    """Align, build the PDM and compute all three curves."""
    aligned = procrustes_align(model).model
    pdm = build_pdm(aligned)
    k_max = max(1, min(k_max, pdm.num_modes))
    curves = [compactness_curve(pdm, k_max)]
    if model.num_shapes >= 3:
        curves.append(generalization_curve(model, k_max, workers=workers))
    else:
        curves.append(MetricCurve("generalization", np.full(k_max, np.nan), "mm"))
    curves.append(specificity_curve(pdm, aligned, k_max, n_samples, seed, workers))
    return pdm, curves


def write_metric_csv(curves: List[MetricCurve], path: Path):
    by_name = {c.metric: c for c in curves}
    k_max = max(len(c.values) for c in curves)
    rows = []
    for k in range(1, k_max + 1):
        rows.append([k] + [by_name[m].at(k) if m in by_name and k <= len(by_name[m].values) else float("nan")
                           for m in ("compactness", "generalization", "specificity")])
    write_csv(path, ["K", "compactness", "generalization_mm", "specificity_mm"], rows)
