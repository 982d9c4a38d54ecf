"""
Shape statistics - Correspondence models, Procrustes alignment and the
PCA point distribution model.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from constants import AppConstants
from core.formats import read_points, write_points
from core.geometry import RigidTransform, fit_rigid
from debug import log_debug, log_warning
from errors import ShapeStatsError


@dataclass(frozen=True, eq=False)
class CorrespondenceModel:
    """N shapes x M ordered points (mm); column m is the same locus on every shape."""

    points: np.ndarray
    method: str = "unknown"
    sample_ids: Tuple[str, ...] = ()

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim != 3 or points.shape[2] != 3:
            raise ShapeStatsError(f"correspondence points must be N x M x 3, got {points.shape}")
        if points.shape[0] < 2:
            raise ShapeStatsError(f"correspondence model needs N >= 2 shapes, got {points.shape[0]}")
        if points.shape[1] < 1:
            raise ShapeStatsError("correspondence model has no points")
        if not np.isfinite(points).all():
            raise ShapeStatsError(f"{self.method}: correspondence points contain NaN or inf")
        ids = tuple(self.sample_ids) or tuple(f"sample_{i:03d}" for i in range(points.shape[0]))
        if len(ids) != points.shape[0]:
            raise ShapeStatsError(f"{len(ids)} sample ids for {points.shape[0]} shapes")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "sample_ids", ids)

    @property
    def num_shapes(self) -> int:
        return self.points.shape[0]

    @property
    def num_points(self) -> int:
        return self.points.shape[1]

    def flattened(self) -> np.ndarray:
        return self.points.reshape(self.num_shapes, -1)

    def mean_shape(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def with_points(self, points: np.ndarray) -> "CorrespondenceModel":
        return CorrespondenceModel(points, self.method, self.sample_ids)

    def subset(self, indices: Sequence[int]) -> "CorrespondenceModel":
        indices = list(indices)
        return CorrespondenceModel(self.points[indices], self.method,
                                   tuple(self.sample_ids[i] for i in indices))

    def transformed(self, transform: RigidTransform) -> "CorrespondenceModel":
        return self.with_points(transform.apply(self.points))

    def save(self, directory: Path) -> List[Path]:
        directory = Path(directory)
        paths = []
        for sid, pts in zip(self.sample_ids, self.points):
            path = directory / f"{sid}{AppConstants.PARTICLE_SUFFIX}"
            write_points(pts, path)
            paths.append(path)
        return paths

    @classmethod
    def load(cls, directory: Path, method: str, sample_ids: Sequence[str]) -> "CorrespondenceModel":
        directory = Path(directory)
        points = [read_points(directory / f"{sid}{AppConstants.PARTICLE_SUFFIX}") for sid in sample_ids]
        return cls(np.stack(points), method, tuple(sample_ids))


# ==================== PROCRUSTES ====================

@dataclass
class AlignmentResult:
    model: CorrespondenceModel
    transforms: List[RigidTransform]
    scales: List[float]
    residuals: List[float] = field(default_factory=list)


def procrustes_align(model: CorrespondenceModel, scaling: bool = False, tol: float = 1e-9,
                     max_iterations: int = 100) -> AlignmentResult:
    """Generalized Procrustes: align every shape to the running mean until it stops moving."""
    shapes = model.points
    centered = shapes - shapes.mean(axis=1, keepdims=True)
    sizes = np.sqrt((centered ** 2).sum(axis=(1, 2)))
    degenerate = np.flatnonzero(sizes < 1e-12)
    if len(degenerate):
        raise ShapeStatsError(f"sample {model.sample_ids[degenerate[0]]} has all points coincident")

    mean = centered.mean(axis=0)
    if np.sqrt((mean ** 2).sum()) < 1e-6 * sizes.mean():
        mean = centered[0].copy()
    anchor = mean.copy()

    residuals: List[float] = []
    transforms: List[RigidTransform] = []
    scales: List[float] = []
    aligned = shapes.copy()
    for iteration in range(max_iterations):
        transforms, scales = [], []
        for n in range(model.num_shapes):
            transform, scale = fit_rigid(shapes[n], mean, scaling=scaling)
            transforms.append(transform)
            scales.append(scale)
            aligned[n] = scale * (shapes[n] @ transform.rotation.T) + transform.translation
        residuals.append(float(((aligned - mean) ** 2).sum()))
        new_mean = aligned.mean(axis=0)
        # pin the gauge: keep the mean's pose anchored to the starting mean
        gauge, _ = fit_rigid(new_mean, anchor)
        new_mean = gauge.apply(new_mean)
        shift = float(np.abs(new_mean - mean).max())
        mean = new_mean
        if shift < tol:
            break
    else:
        log_warning(f"Procrustes did not settle within {max_iterations} iterations")

    # final pass against the settled mean
    transforms, scales = [], []
    for n in range(model.num_shapes):
        transform, scale = fit_rigid(shapes[n], mean, scaling=scaling)
        transforms.append(transform)
        scales.append(scale)
        aligned[n] = scale * (shapes[n] @ transform.rotation.T) + transform.translation
    log_debug(f"Procrustes settled after {len(residuals)} iteration(s)")
    return AlignmentResult(model.with_points(aligned), transforms, scales, residuals)


# ==================== POINT DISTRIBUTION MODEL ====================

@dataclass(frozen=True, eq=False)
class PDM:
    mean: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    n_samples: int
    n_points: int

    @property
    def num_modes(self) -> int:
        return len(self.eigenvalues)

    @property
    def total_variance(self) -> float:
        return float(self.eigenvalues.sum())

    def project(self, shape: np.ndarray, k: Optional[int] = None) -> np.ndarray:
        k = self.num_modes if k is None else k
        return self.eigenvectors[:, :k].T @ (np.ravel(shape) - self.mean)

    def reconstruct(self, coefficients: np.ndarray) -> np.ndarray:
        coefficients = np.asarray(coefficients, dtype=float)
        return self.mean + self.eigenvectors[:, :len(coefficients)] @ coefficients

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenvectors": self.eigenvectors.tolist(),
            "N": self.n_samples,
            "M": self.n_points,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PDM":
        return cls(np.array(data["mean"]), np.array(data["eigenvalues"]),
                   np.array(data["eigenvectors"]).reshape(len(data["mean"]), -1),
                   int(data["N"]), int(data["M"]))

    def save(self, path: Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "PDM":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _complete_basis(basis: np.ndarray, count: int) -> np.ndarray:
    """Orthonormal columns orthogonal to `basis`, deterministic."""
    if count <= 0:
        return np.zeros((basis.shape[0], 0))
    rng = np.random.default_rng(0)
    candidates = rng.standard_normal((basis.shape[0], count))
    q, _ = np.linalg.qr(np.hstack([basis, candidates]))
    return q[:, basis.shape[1]:basis.shape[1] + count]


def build_pdm(model: CorrespondenceModel) -> PDM:
    """PCA through the N x N Gram matrix (covariance divisor N - 1)."""
    x = model.flattened()
    n, dim = x.shape
    mean = x.mean(axis=0)
    y = x - mean
    gram = y @ y.T / (n - 1)
    values, vectors = np.linalg.eigh(gram)
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]

    k = min(n - 1, dim)
    values = np.clip(values[:k], 0.0, None)
    scale = max(float(np.trace(gram)), 1e-300)
    kept = values > 1e-12 * scale
    modes = np.zeros((dim, k))
    if kept.any():
        u = vectors[:, :k][:, kept]
        modes[:, kept] = y.T @ u / np.sqrt((n - 1) * values[kept])
    values[~kept] = 0.0
    if (~kept).any():
        modes[:, ~kept] = _complete_basis(modes[:, kept], int((~kept).sum()))
        log_debug(f"{int((~kept).sum())} zero-variance mode(s) completed with an orthonormal basis")

    for j in range(k):
        pivot = np.argmax(np.abs(modes[:, j]))
        if modes[pivot, j] < 0:
            modes[:, j] = -modes[:, j]
    return PDM(mean, values, modes, n, model.num_points)


def sample_mode(pdm: PDM, k: int, t: float) -> np.ndarray:
    """mean + t * sqrt(lambda_k) * v_k, with k 1-based."""
    if not 1 <= k <= pdm.num_modes:
        raise ShapeStatsError(f"mode {k} outside 1..{pdm.num_modes}")
    if pdm.eigenvalues[k - 1] == 0.0:
        if t != 0:
            log_warning(f"mode {k} has zero variance; returning the mean shape")
        return pdm.mean.copy()
    return pdm.mean + t * np.sqrt(pdm.eigenvalues[k - 1]) * pdm.eigenvectors[:, k - 1]


def mode_walk(pdm: PDM, k: int, stds: Sequence[float]) -> List[Tuple[float, np.ndarray]]:
    """Shape instances along mode k, each as M x 3."""
    return [(float(t), sample_mode(pdm, k, t).reshape(-1, 3)) for t in stds]


def export_mode_walks(pdm: PDM, directory: Path, stds: Sequence[float], modes: int = 2) -> List[Path]:
    directory = Path(directory)
    paths = []
    for k in range(1, min(modes, pdm.num_modes) + 1):
        for t, points in mode_walk(pdm, k, stds):
            path = directory / f"mode{k}_t{t:+g}.particles"
            write_points(points, path)
            paths.append(path)
    return paths
