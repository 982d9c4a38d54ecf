"""
Particles - Groupwise correspondence with interacting particle systems.

Every shape carries M particles held on its zero level set. The optimizer
lowers Q = H(Z) - sum_n H(X_n): a Gaussian entropy of the stacked particle
vectors across shapes against per-shape Parzen entropies that keep the
particles spread over each surface. Particles start from one seed per shape
and double by splitting until M is reached, optimizing at every level.
"""

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from analysis.shapestats import CorrespondenceModel
from core.geometry import SignedDistanceVolume, project_points
from debug import log_debug, log_info, log_warning
from errors import OptimizationError, ParameterError, ProjectionError
from utils import parallel_map, spawn_rngs, write_csv

SIGMA_FLOOR = 1e-9
TRACE_HEADER = ["iter", "particles", "H_Z", "sum_H_X", "Q"]


@dataclass
class PbmConfig:
    num_particles: int = 128
    iterations_per_split: int = 40
    final_iterations: int = 120
    ensemble_weight: float = 1.0
    sampling_weight: float = 1.0
    alpha: Optional[float] = None      # mm^2; None means (0.1 * first-level spacing)^2
    alpha_decay: float = 0.5
    split_offset: float = 0.2
    step_cap: float = 0.5
    max_backtracks: int = 8
    divergence_window: int = 10

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "PbmConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(f"unknown particle settings: {', '.join(unknown)}")
        config = cls(**data)
        config.validate()
        return config

    def validate(self):
        m = self.num_particles
        if not isinstance(m, int) or m < 1 or m & (m - 1):
            raise ParameterError(f"num_particles must be a power of two, got {m}")
        if self.alpha is not None and self.alpha <= 0:
            raise ParameterError("alpha must be positive")
        if self.ensemble_weight < 0 or self.sampling_weight < 0:
            raise ParameterError("entropy weights must be non-negative")
        if not 0 < self.alpha_decay <= 1:
            raise ParameterError("alpha_decay must lie in (0, 1]")
        if self.iterations_per_split < 0 or self.final_iterations < 0:
            raise ParameterError("iteration counts must be non-negative")
        if self.split_offset <= 0 or self.step_cap <= 0:
            raise ParameterError("split_offset and step_cap must be positive")


@dataclass
class ParticleSystem:
    positions: np.ndarray
    volumes: List[SignedDistanceVolume]
    sample_ids: Tuple[str, ...]

    @property
    def num_shapes(self) -> int:
        return self.positions.shape[0]

    @property
    def num_particles(self) -> int:
        return self.positions.shape[1]

    def surface_error(self) -> float:
        """Largest |sdf| over all particles."""
        return float(max(np.abs(v.sample(p)).max() for v, p in zip(self.volumes, self.positions)))


@dataclass
class ParticleResult:
    model: CorrespondenceModel
    system: ParticleSystem
    trace: List[Tuple] = field(default_factory=list)


# ==================== ENTROPY TERMS ====================

def _ensemble_terms(positions: np.ndarray, alpha: float, gradient: bool = True):
    n = positions.shape[0]
    y = positions.reshape(n, -1)
    y = y - y.mean(axis=0)
    dim = y.shape[1]
    gram = y @ y.T / (n - 1)
    eigenvalues = np.clip(np.linalg.eigvalsh(gram), 0.0, None)
    value = 0.5 * float(np.log(eigenvalues + alpha).sum()) + 0.5 * (dim - n) * float(np.log(alpha))
    if not gradient:
        return value, None
    grad = np.linalg.solve(alpha * np.eye(n) + gram, y) / (n - 1)
    return value, grad.reshape(positions.shape)


def ensemble_entropy(positions: np.ndarray, alpha: float) -> float:
    """Half the log-determinant of the regularized particle covariance, via the N x N Gram matrix."""
    positions = np.asarray(positions, dtype=float)
    if positions.shape[0] < 2:
        raise ParameterError("ensemble entropy needs N >= 2 shapes")
    return _ensemble_terms(positions, alpha, gradient=False)[0]


def ensemble_entropy_gradient(positions: np.ndarray, alpha: float) -> np.ndarray:
    return _ensemble_terms(np.asarray(positions, dtype=float), alpha)[1]


def _sampling_terms(points: np.ndarray, gradient: bool = True):
    m = len(points)
    if m < 2:
        return 0.0, np.zeros_like(points), np.full(m, np.nan)
    diff = points[:, None, :] - points[None, :, :]
    d2 = (diff ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    nearest = np.argmin(d2, axis=1)
    rows = np.arange(m)
    sigma = np.maximum(np.sqrt(d2[rows, nearest]), SIGMA_FLOOR)
    exponent = -d2 / (2.0 * sigma[:, None] ** 2)
    log_sums = logsumexp(exponent, axis=1)
    value = float((log_sums - 2.0 * np.log(sigma)).sum())
    if not gradient:
        return value, None, sigma

    weights = np.exp(exponent - log_sums[:, None])
    coef = weights / sigma[:, None] ** 2
    weighted = coef[..., None] * diff
    grad = -weighted.sum(axis=1) + weighted.sum(axis=0)

    np.fill_diagonal(d2, 0.0)
    d_sigma = (weights * d2).sum(axis=1) / sigma ** 3 - 2.0 / sigma
    chain = (d_sigma / sigma)[:, None] * diff[rows, nearest]
    grad += chain
    np.add.at(grad, nearest, -chain)
    return value, grad, sigma


def sampling_entropy(points: np.ndarray) -> float:
    """Parzen surface-sampling term of one shape; lower when particles are spread out."""
    return _sampling_terms(np.asarray(points, dtype=float).reshape(-1, 3), gradient=False)[0]


def sampling_entropy_gradient(points: np.ndarray) -> np.ndarray:
    return _sampling_terms(np.asarray(points, dtype=float).reshape(-1, 3))[1]


# ==================== OPTIMIZER ====================

class ParticleOptimizer:
    """Projected, preconditioned gradient descent on Q with particle splitting."""

    def __init__(self, ensemble, config: PbmConfig, seed: int = 0, workers: int = 1):
        config.validate()
        ensemble.require_statistical()
        self.volumes = ensemble.volumes
        self.sample_ids = tuple(ensemble.ids)
        self.config = config
        self.workers = workers
        rngs = spawn_rngs(seed, len(self.volumes) + 1)
        self.shape_rngs = rngs[:-1]
        self.split_rng = rngs[-1]
        self.areas = np.array([v.surface_area() for v in self.volumes])
        self.trace: List[Tuple] = []
        self.alpha = config.alpha if config.alpha is not None else (0.1 * self.ideal_spacing(1)) ** 2

    @property
    def num_shapes(self) -> int:
        return len(self.volumes)

    def ideal_spacing(self, m: int) -> float:
        return float(np.sqrt(self.areas.mean() / m))

    # ---------- projection ----------

    def _reseed(self, n: int) -> np.ndarray:
        volume = self.volumes[n]
        vertices = volume.surface_vertices()
        for _ in range(10):
            start = vertices[self.shape_rngs[n].integers(len(vertices))]
            try:
                return project_points(start[None], volume)[0]
            except ProjectionError:
                continue
        raise OptimizationError(f"{self.sample_ids[n]}: could not place a particle on the surface", self.trace)

    def _project_or_reseed(self, n: int, points: np.ndarray) -> np.ndarray:
        try:
            return project_points(points, self.volumes[n])
        except ProjectionError:
            pass
        placed = np.empty_like(points)
        for i, point in enumerate(points):
            try:
                placed[i] = project_points(point[None], self.volumes[n])[0]
            except ProjectionError:
                log_warning(f"{self.sample_ids[n]}: particle {i} failed to project; reseeding")
                placed[i] = self._reseed(n)
        return placed

    def _project_trial(self, positions: np.ndarray) -> Optional[np.ndarray]:
        try:
            return np.stack([project_points(p, v) for p, v in zip(positions, self.volumes)])
        except ProjectionError:
            return None

    def _normals(self, positions: np.ndarray) -> np.ndarray:
        return np.stack([v.normals(p) for v, p in zip(self.volumes, positions)])

    # ---------- seeding and splitting ----------

    def seed_particles(self) -> np.ndarray:
        """One particle per shape at the surface point nearest the mean surface centroid."""
        centroid = np.mean([v.to_mesh().centroid for v in self.volumes], axis=0)
        seeds = []
        for n, volume in enumerate(self.volumes):
            vertices = volume.surface_vertices()
            start = vertices[np.argmin(np.linalg.norm(vertices - centroid, axis=1))]
            seeds.append(self._project_or_reseed(n, start[None]))
        return np.stack(seeds)

    def split(self, positions: np.ndarray) -> np.ndarray:
        """Duplicate every particle along one shared random direction, tangent to each surface."""
        m = positions.shape[1]
        offset = self.config.split_offset * self.ideal_spacing(m)
        directions = self.split_rng.standard_normal((m, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        normals = self._normals(positions)
        result = []
        for n in range(self.num_shapes):
            tangent = directions - (directions * normals[n]).sum(axis=1, keepdims=True) * normals[n]
            length = np.linalg.norm(tangent, axis=1)
            flat = length < 1e-6
            if flat.any():
                fallback = np.cross(normals[n][flat], [1.0, 0.0, 0.0])
                weak = np.linalg.norm(fallback, axis=1) < 1e-6
                fallback[weak] = np.cross(normals[n][flat][weak], [0.0, 1.0, 0.0])
                tangent[flat] = fallback
                length[flat] = np.linalg.norm(fallback, axis=1)
            tangent /= length[:, None]
            moved = np.concatenate([positions[n] + offset * tangent, positions[n] - offset * tangent])
            result.append(self._project_or_reseed(n, moved))
        return np.stack(result)

    # ---------- objective ----------

    def objective(self, positions: np.ndarray, alpha: float, gradient: bool = True):
        """Returns (Q, H(Z), sum of sampling terms, gradient, per-particle sigma)."""
        cfg = self.config
        h, h_grad = _ensemble_terms(positions, alpha, gradient)
        terms = parallel_map(lambda p: _sampling_terms(p, gradient), list(positions), self.workers)
        s = float(sum(t[0] for t in terms))
        q = cfg.ensemble_weight * h + cfg.sampling_weight * s
        if not gradient:
            return q, h, s, None, None
        grad = cfg.ensemble_weight * h_grad + cfg.sampling_weight * np.stack([t[1] for t in terms])
        sigma = np.stack([t[2] for t in terms])
        return q, h, s, grad, sigma

    def direction(self, positions: np.ndarray, grad: np.ndarray, sigma: np.ndarray, alpha: float) -> np.ndarray:
        cfg = self.config
        m = positions.shape[1]
        sigma = np.where(np.isfinite(sigma), sigma, self.ideal_spacing(m))
        normals = self._normals(positions)
        grad = grad - (grad * normals).sum(axis=2, keepdims=True) * normals

        # common motion sees the sampling curvature only; differential motion adds the ensemble curvature
        sampling_curvature = np.maximum(cfg.sampling_weight / sigma ** 2, 1e-12)
        ensemble_curvature = cfg.ensemble_weight / (alpha * (self.num_shapes - 1))
        common = grad.mean(axis=0)
        step = -(common / sampling_curvature.mean(axis=0)[:, None])[None]
        step = step - (grad - common) / (sampling_curvature + ensemble_curvature)[..., None]
        step -= (step * normals).sum(axis=2, keepdims=True) * normals

        limit = cfg.step_cap * sigma
        lengths = np.linalg.norm(step, axis=2)
        over = lengths > limit
        step[over] *= (limit[over] / lengths[over])[:, None]
        return step

    def iterate(self, positions: np.ndarray, alpha: float, iterations: int) -> np.ndarray:
        cfg = self.config
        q, h, s, grad, sigma = self.objective(positions, alpha)
        if not np.isfinite(q):
            raise OptimizationError(f"objective is not finite ({q})", self.trace)
        self._record(positions, h, s, q)
        rises = 0
        for iteration in range(iterations):
            step = self.direction(positions, grad, sigma, alpha)
            t = 1.0
            accepted = None
            for _ in range(cfg.max_backtracks):
                trial = self._project_trial(positions + t * step)
                if trial is not None:
                    trial_q = self.objective(trial, alpha, gradient=False)[0]
                    if np.isfinite(trial_q) and trial_q <= q + 1e-12 * max(1.0, abs(q)):
                        accepted = (trial, trial_q)
                        break
                t *= 0.5
            if accepted is None:
                log_debug(f"M={positions.shape[1]}: line search stalled after {iteration} iteration(s)")
                break
            rises = rises + 1 if accepted[1] > q else 0
            if rises >= cfg.divergence_window:
                raise OptimizationError(f"Q increased for {rises} consecutive accepted steps", self.trace)
            positions = accepted[0]
            q, h, s, grad, sigma = self.objective(positions, alpha)
            if not np.isfinite(q) or not np.isfinite(grad).all():
                raise OptimizationError("objective or gradient became non-finite", self.trace)
            self._record(positions, h, s, q)
        return positions

    def _record(self, positions: np.ndarray, h: float, s: float, q: float):
        self.trace.append((len(self.trace), positions.shape[1], h, -s, q))

    # ---------- schedule ----------

    def initialize(self) -> Tuple[np.ndarray, float]:
        """Seed, then split and optimize level by level until M particles per shape."""
        alpha = self.alpha
        positions = self.seed_particles()
        positions = self.iterate(positions, alpha, self.config.iterations_per_split)
        while positions.shape[1] < self.config.num_particles:
            positions = self.split(positions)
            alpha *= self.config.alpha_decay
            positions = self.iterate(positions, alpha, self.config.iterations_per_split)
            log_debug(f"split to M={positions.shape[1]}, alpha={alpha:.3g}, Q={self.trace[-1][4]:.6g}")
        return positions, alpha

    def run(self) -> ParticleSystem:
        positions, alpha = self.initialize()
        positions = self.iterate(positions, alpha, self.config.final_iterations)
        log_info(f"Particles: {self.num_shapes} shapes x {positions.shape[1]} particles, "
                 f"Q={self.trace[-1][4]:.6g} after {len(self.trace)} evaluations")
        return ParticleSystem(positions, self.volumes, self.sample_ids)


def initialize_particles(ensemble, config: PbmConfig, seed: int = 0, workers: int = 1) -> ParticleSystem:
    optimizer = ParticleOptimizer(ensemble, config, seed, workers)
    positions, _ = optimizer.initialize()
    return ParticleSystem(positions, optimizer.volumes, optimizer.sample_ids)


def optimize(ensemble, config: PbmConfig, seed: int = 0, workers: int = 1) -> ParticleResult:
    optimizer = ParticleOptimizer(ensemble, config, seed, workers)
    system = optimizer.run()
    model = CorrespondenceModel(system.positions, "particles", system.sample_ids)
    return ParticleResult(model, system, optimizer.trace)


def write_trace_csv(trace: List[Tuple], path: Path):
    write_csv(path, TRACE_HEADER, trace)
