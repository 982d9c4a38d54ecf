"""
Deform - Atlas-based correspondence with kernel deformations.

A deformation is a Gaussian-kernel velocity field carried by control points
and momenta, integrated with fixed explicit steps while the control points
ride along. Meshes are compared as varifolds. Atlas estimation alternates
per-subject momentum updates with a joint template and control-point update;
correspondences are template points pushed through each subject's flow.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.spatial.distance import cdist

from analysis.shapestats import CorrespondenceModel
from constants import AppConstants
from core.formats import read_obj, write_obj
from core.geometry import TriangleMesh, icosphere
from debug import log_debug, log_info, log_warning
from errors import DeformationError, GeometryError, ParameterError
from utils import parallel_map

VARIFOLD_CHUNK = 256


@dataclass
class DeformConfig:
    template: str = "sphere"
    template_level: int = 2
    control_points: int = 64
    sigma: Optional[float] = None
    sigma_fraction: float = 0.15
    sigma_w: Optional[float] = None
    sigma_w_fraction: float = 0.08
    steps: int = 10
    iterations: int = 30
    noise_fraction: float = 0.01
    initial_step_fraction: float = 0.1
    optimize_template: bool = True
    optimize_control_points: bool = True
    num_points: int = 128
    sample_seed: int = 0

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "DeformConfig":
        data = dict(data or {})
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise ParameterError(f"unknown deformation settings: {', '.join(unknown)}")
        config = cls(**data)
        config.validate()
        return config

    def validate(self):
        if self.template not in ("sphere", "mean"):
            raise ParameterError(f"template must be 'sphere' or 'mean', got '{self.template}'")
        grid = round(self.control_points ** (1.0 / 3.0))
        if self.control_points < 1 or grid ** 3 != self.control_points:
            raise ParameterError(f"control_points must be a cube number, got {self.control_points}")
        for name in ("sigma", "sigma_w"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ParameterError(f"{name} must be positive")
        if self.sigma_fraction <= 0 or self.sigma_w_fraction <= 0 or self.noise_fraction <= 0:
            raise ParameterError("kernel and noise fractions must be positive")
        if self.steps < 1:
            raise ParameterError("steps must be >= 1")
        if self.iterations < 0 or self.num_points < 1:
            raise ParameterError("iterations must be >= 0 and num_points >= 1")

    @property
    def grid_size(self) -> int:
        return int(round(self.control_points ** (1.0 / 3.0)))


@dataclass
class DeformationParams:
    control_points: np.ndarray
    momenta: np.ndarray
    sigma: float

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=float).reshape(-1, 3)
        self.momenta = np.asarray(self.momenta, dtype=float).reshape(-1, 3)
        if len(self.control_points) < 1:
            raise ParameterError("deformation needs at least one control point")
        if self.momenta.shape != self.control_points.shape:
            raise ParameterError("one momentum vector per control point is required")
        if self.sigma <= 0:
            raise ParameterError("kernel width must be positive")


# ==================== KERNEL FLOW ====================

def gaussian_kernel(x: np.ndarray, y: np.ndarray, sigma: float) -> np.ndarray:
    """K(x, y) = exp(-|x - y|^2 / sigma^2)."""
    return np.exp(-cdist(x, y, "sqeuclidean") / sigma ** 2)


def deformation_field(params: DeformationParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    points = x.reshape(-1, 3)
    velocity = gaussian_kernel(points, params.control_points, params.sigma) @ params.momenta
    return velocity.reshape(x.shape)


def _shoot(points: np.ndarray, control_points: np.ndarray, momenta: np.ndarray, sigma: float,
           steps: int) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Explicit Euler states of points and control points, both carried by the field."""
    dt = 1.0 / steps
    xs, qs = [points], [control_points]
    x, q = points, control_points
    for _ in range(steps):
        vx = gaussian_kernel(x, q, sigma) @ momenta
        vq = gaussian_kernel(q, q, sigma) @ momenta
        largest = dt * max(np.linalg.norm(vx, axis=1).max(initial=0.0), np.linalg.norm(vq, axis=1).max())
        if largest > sigma:
            raise DeformationError(f"flow step moves {largest:.3g} mm, more than sigma={sigma:.3g}; "
                                   f"use more steps than {steps}")
        x = x + dt * vx
        q = q + dt * vq
        xs.append(x)
        qs.append(q)
    return xs, qs


def flow(params: DeformationParams, points: np.ndarray, steps: int = 10) -> np.ndarray:
    if steps < 1:
        raise ParameterError("flow needs steps >= 1")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    return _shoot(points, params.control_points, params.momenta, params.sigma, steps)[0][-1]


def _kernel_vjp(x: np.ndarray, q: np.ndarray, momenta: np.ndarray, cotangent: np.ndarray, sigma: float):
    """Pullback of the cotangent through v = K(x, q) @ momenta, as (d/dx, d/dq, d/dmomenta)."""
    kernel = gaussian_kernel(x, q, sigma)
    a = (cotangent @ momenta.T) * kernel
    scale = 2.0 / sigma ** 2
    gx = -scale * (x * a.sum(axis=1)[:, None] - a @ q)
    gq = scale * (a.T @ x - q * a.sum(axis=0)[:, None])
    return gx, gq, kernel.T @ cotangent


def _regularity(control_points: np.ndarray, momenta: np.ndarray, sigma: float) -> float:
    return float(np.sum(momenta * (gaussian_kernel(control_points, control_points, sigma) @ momenta)))


# ==================== VARIFOLDS ====================

def _face_data(vertices: np.ndarray, faces: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    tri = vertices[faces]
    return tri.mean(axis=1), 0.5 * np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])


def _varifold_product(ca, na, cb, nb, sigma_w: float) -> float:
    """sum_kl K(c_k, c_l) (N_k . N_l)^2 / (|N_k| |N_l|) over area normals."""
    norm_b = np.linalg.norm(nb, axis=1)
    total = 0.0
    for start in range(0, len(ca), VARIFOLD_CHUNK):
        c, n = ca[start:start + VARIFOLD_CHUNK], na[start:start + VARIFOLD_CHUNK]
        kernel = gaussian_kernel(c, cb, sigma_w)
        dots = n @ nb.T
        total += float((kernel * dots ** 2 / np.outer(np.linalg.norm(n, axis=1), norm_b)).sum())
    return total


def _varifold_product_grad(ca, na, cb, nb, sigma_w: float):
    """Product and its gradient with respect to the face centers and area normals of the first set."""
    norm_a = np.linalg.norm(na, axis=1)
    norm_b = np.linalg.norm(nb, axis=1)
    g_c = np.empty_like(ca)
    g_n = np.empty_like(na)
    total = 0.0
    for start in range(0, len(ca), VARIFOLD_CHUNK):
        stop = start + VARIFOLD_CHUNK
        c, n, nrm = ca[start:stop], na[start:stop], norm_a[start:stop]
        kernel = gaussian_kernel(c, cb, sigma_w)
        dots = n @ nb.T
        scaled = kernel * dots / np.outer(nrm, norm_b)
        weight = scaled * dots
        total += float(weight.sum())
        row = weight.sum(axis=1)
        g_c[start:stop] = -2.0 / sigma_w ** 2 * (c * row[:, None] - weight @ cb)
        g_n[start:stop] = 2.0 * scaled @ nb - n * (row / nrm ** 2)[:, None]
    return total, g_c, g_n


def _faces_to_vertices(vertices: np.ndarray, faces: np.ndarray, g_c: np.ndarray, g_n: np.ndarray) -> np.ndarray:
    tri = vertices[faces]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    d1 = 0.5 * np.cross(e2, g_n)
    d2 = 0.5 * np.cross(g_n, e1)
    third = g_c / 3.0
    grad = np.zeros_like(vertices)
    np.add.at(grad, faces[:, 0], third - d1 - d2)
    np.add.at(grad, faces[:, 1], third + d1)
    np.add.at(grad, faces[:, 2], third + d2)
    return grad


def varifold_sqdist(a: TriangleMesh, b: TriangleMesh, sigma_w: float) -> float:
    ca, na = a.face_centers, a.area_normals
    cb, nb = b.face_centers, b.area_normals
    return (_varifold_product(ca, na, ca, na, sigma_w) - 2.0 * _varifold_product(ca, na, cb, nb, sigma_w)
            + _varifold_product(cb, nb, cb, nb, sigma_w))


def varifold_distance(a: TriangleMesh, b: TriangleMesh, sigma_w: float) -> float:
    """Orientation-free varifold distance; symmetric and zero on identical surfaces."""
    if sigma_w <= 0:
        raise ParameterError("varifold kernel width must be positive")
    return float(np.sqrt(max(varifold_sqdist(a, b, sigma_w), 0.0)))


# ==================== TEMPLATES ====================

def sphere_template(ensemble, level: int = 2) -> TriangleMesh:
    """Icosphere at the mean centroid with the mean equal-area radius."""
    meshes = ensemble.meshes
    center = np.mean([m.centroid for m in meshes], axis=0)
    radius = float(np.mean([np.sqrt(m.area / (4.0 * np.pi)) for m in meshes]))
    return icosphere(level, radius, center)


def mean_shape_template(ensemble, level: int = 2) -> TriangleMesh:
    """The sphere template pushed radially onto the zero level set of the mean distance volume."""
    ensemble.require_common_grid()
    volumes = ensemble.volumes
    mean_volume = volumes[0].with_values(np.mean([v.values for v in volumes], axis=0))
    sphere = sphere_template(ensemble, level)
    center = sphere.vertices.mean(axis=0)
    if mean_volume.sample(center[None])[0] >= 0:
        raise GeometryError("mean shape does not contain the template center")
    reach = float(np.linalg.norm(mean_volume.upper - mean_volume.origin))
    radial = lambda r, u: float(mean_volume.sample((center + r * u)[None])[0])
    radii = np.arange(1, int(2.0 * reach / mean_volume.spacing) + 1) * 0.5 * mean_volume.spacing
    vertices = []
    for vertex in sphere.vertices:
        u = (vertex - center) / np.linalg.norm(vertex - center)
        values = mean_volume.sample(center + radii[:, None] * u)
        outside = np.flatnonzero(values > 0)
        if len(outside) == 0:
            raise GeometryError("mean level set is not closed around the template center")
        hi = radii[outside[0]]
        lo = radii[outside[0] - 1] if outside[0] > 0 else 0.0
        vertices.append(center + brentq(radial, lo, hi, args=(u,), xtol=1e-6 * mean_volume.spacing) * u)
    return TriangleMesh(np.array(vertices), sphere.faces)


# ==================== ATLAS ====================

@dataclass
class Atlas:
    template: TriangleMesh
    control_points: np.ndarray
    momenta: np.ndarray
    sigma: float
    sigma_w: float
    steps: int
    sample_ids: Tuple[str, ...]
    trace: List[float] = field(default_factory=list)

    def params(self, index: int) -> DeformationParams:
        return DeformationParams(self.control_points, self.momenta[index], self.sigma)

    def flow(self, index: int, points: np.ndarray) -> np.ndarray:
        return flow(self.params(index), points, self.steps)

    def deformed_template(self, index: int) -> TriangleMesh:
        return TriangleMesh(self.flow(index, self.template.vertices), self.template.faces)

    def save(self, directory: Path):
        directory = Path(directory)
        write_obj(self.template, directory / "template.obj")
        data = {
            "control_points": self.control_points.tolist(),
            "momenta": {sid: m.tolist() for sid, m in zip(self.sample_ids, self.momenta)},
            "sigma": self.sigma,
            "sigma_w": self.sigma_w,
            "steps": self.steps,
            "objective": self.trace,
        }
        (directory / "atlas.json").write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: Path) -> "Atlas":
        directory = Path(directory)
        data = json.loads((directory / "atlas.json").read_text(encoding="utf-8"))
        ids = tuple(data["momenta"])
        return cls(read_obj(directory / "template.obj"), np.array(data["control_points"], dtype=float),
                   np.array([data["momenta"][sid] for sid in ids], dtype=float), float(data["sigma"]),
                   float(data["sigma_w"]), int(data["steps"]), ids, list(data.get("objective", [])))


def control_grid(bounds: np.ndarray, grid: int) -> np.ndarray:
    lower, upper = bounds
    if grid == 1:
        return ((lower + upper) / 2.0)[None]
    axes = [np.linspace(lower[i], upper[i], grid) for i in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


class AtlasEstimator:
    """Alternating descent over per-subject momenta and the shared template/control points."""

    def __init__(self, ensemble, template: TriangleMesh, config: DeformConfig, workers: int = 1):
        config.validate()
        ensemble.require_statistical()
        if not template.is_watertight:
            raise GeometryError("atlas template must be watertight")
        diagonal = ensemble.bounding_diagonal()
        self.config = config
        self.workers = workers
        self.sample_ids = tuple(ensemble.ids)
        self.sigma = config.sigma or config.sigma_fraction * diagonal
        self.sigma_w = config.sigma_w or config.sigma_w_fraction * diagonal
        self.faces = template.faces
        self.template = template.vertices.copy()
        self.control_points = control_grid(template.bounds, config.grid_size)
        self.targets = [_face_data(m.vertices, m.faces) for m in ensemble.meshes]
        self.target_norms = parallel_map(lambda t: _varifold_product(t[0], t[1], t[0], t[1], self.sigma_w),
                                         self.targets, workers)
        self.noise = config.noise_fraction * float(np.mean(self.target_norms))
        self.momenta = np.zeros((len(self.targets), len(self.control_points), 3))
        initial = config.initial_step_fraction * self.sigma
        self.momentum_steps = [initial] * len(self.targets)
        self.shared_step = initial
        self.trace: List[float] = []

    # ---------- per-subject energy ----------

    def subject_energy(self, index: int, template: np.ndarray, control_points: np.ndarray,
                       momenta: np.ndarray) -> Tuple[float, float]:
        """(energy, data term) without gradients.

        The data term is the squared varifold distance divided by `noise`, so the
        energy is d^2 / noise + regularity and trace values carry that scale.
        """
        x = _shoot(template, control_points, momenta, self.sigma, self.config.steps)[0][-1]
        c, n = _face_data(x, self.faces)
        tc, tn = self.targets[index]
        sq = (_varifold_product(c, n, c, n, self.sigma_w) - 2.0 * _varifold_product(c, n, tc, tn, self.sigma_w)
              + self.target_norms[index])
        data = sq / self.noise
        return data + _regularity(control_points, momenta, self.sigma), data

    def subject_gradient(self, index: int, template: np.ndarray, control_points: np.ndarray,
                         momenta: np.ndarray):
        """(energy, data term, d/dtemplate, d/dcontrol_points, d/dmomenta) by backpropagation through the flow."""
        sigma, steps = self.sigma, self.config.steps
        xs, qs = _shoot(template, control_points, momenta, sigma, steps)
        x = xs[-1]
        c, n = _face_data(x, self.faces)
        tc, tn = self.targets[index]
        aa, gaa_c, gaa_n = _varifold_product_grad(c, n, c, n, self.sigma_w)
        ab, gab_c, gab_n = _varifold_product_grad(c, n, tc, tn, self.sigma_w)
        data = (aa - 2.0 * ab + self.target_norms[index]) / self.noise
        lam_x = _faces_to_vertices(x, self.faces, 2.0 * (gaa_c - gab_c), 2.0 * (gaa_n - gab_n)) / self.noise

        dt = 1.0 / steps
        lam_q = np.zeros_like(control_points)
        g_mu = np.zeros_like(momenta)
        for s in range(steps - 1, -1, -1):
            gx1, gq1, gm1 = _kernel_vjp(xs[s], qs[s], momenta, lam_x, sigma)
            gx2, gq2, gm2 = _kernel_vjp(qs[s], qs[s], momenta, lam_q, sigma)
            lam_x = lam_x + dt * gx1
            lam_q = lam_q + dt * (gq1 + gx2 + gq2)
            g_mu += dt * (gm1 + gm2)

        reg = _regularity(control_points, momenta, sigma)
        gx, gq, gm = _kernel_vjp(control_points, control_points, momenta, momenta, sigma)
        g_mu += 2.0 * gm
        lam_q = lam_q + gx + gq
        return data + reg, data, lam_x, lam_q, g_mu

    # ---------- updates ----------

    def _update_momenta(self, index: int) -> bool:
        energy, _, _, _, grad = self.subject_gradient(index, self.template, self.control_points,
                                                      self.momenta[index])
        scale = np.abs(grad).max()
        if not np.isfinite(energy) or not np.isfinite(scale):
            raise DeformationError(f"{self.sample_ids[index]}: energy became non-finite", self.trace)
        if scale < 1e-15:
            return False
        for _ in range(6):
            step = self.momentum_steps[index]
            trial = self.momenta[index] - step * grad / scale
            try:
                trial_energy = self.subject_energy(index, self.template, self.control_points, trial)[0]
            except DeformationError:
                trial_energy = np.inf
            if trial_energy < energy:
                self.momenta[index] = trial
                self.momentum_steps[index] = step * 1.5
                return True
            self.momentum_steps[index] = step * 0.5
        return False

    def total_energy(self, template: np.ndarray, control_points: np.ndarray) -> Tuple[float, float]:
        terms = parallel_map(lambda i: self.subject_energy(i, template, control_points, self.momenta[i]),
                             range(len(self.targets)), self.workers)
        return float(sum(t[0] for t in terms)), float(sum(t[1] for t in terms))

    def _update_shared(self) -> bool:
        cfg = self.config
        results = parallel_map(lambda i: self.subject_gradient(i, self.template, self.control_points,
                                                               self.momenta[i]),
                               range(len(self.targets)), self.workers)
        energy = float(sum(r[0] for r in results))
        g_template = np.sum([r[2] for r in results], axis=0) if cfg.optimize_template else 0.0 * self.template
        g_control = (np.sum([r[3] for r in results], axis=0) if cfg.optimize_control_points
                     else 0.0 * self.control_points)
        scale = max(np.abs(g_template).max(), np.abs(g_control).max())
        if scale < 1e-15:
            return False
        for _ in range(6):
            step = self.shared_step
            template = self.template - step * g_template / scale
            control_points = self.control_points - step * g_control / scale
            tri = template[self.faces]
            areas = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
            trial_energy = np.inf
            if areas.min() > AppConstants.DEGENERATE_AREA:
                try:
                    trial_energy = self.total_energy(template, control_points)[0]
                except DeformationError:
                    pass
            if trial_energy < energy:
                self.template, self.control_points = template, control_points
                self.shared_step = step * 1.5
                return True
            self.shared_step = step * 0.5
        return False

    def run(self) -> Atlas:
        cfg = self.config
        energy, initial_data = self.total_energy(self.template, self.control_points)
        self.trace.append(energy)
        for iteration in range(cfg.iterations):
            moved = parallel_map(self._update_momenta, range(len(self.targets)), self.workers)
            shared = False
            if cfg.optimize_template or cfg.optimize_control_points:
                shared = self._update_shared()
            energy, data = self.total_energy(self.template, self.control_points)
            if not np.isfinite(energy):
                raise DeformationError("atlas objective became non-finite", self.trace)
            self.trace.append(energy)
            log_debug(f"atlas iteration {iteration + 1}: objective {energy:.6g}")
            if not any(moved) and not shared:
                break
        final_data = self.total_energy(self.template, self.control_points)[1]
        if final_data > initial_data:
            log_warning(f"atlas data term rose from {initial_data:.4g} to {final_data:.4g}")
        log_info(f"Atlas: {len(self.targets)} subjects, {len(self.control_points)} control points, "
                 f"objective {self.trace[0]:.4g} -> {self.trace[-1]:.4g}")
        return Atlas(TriangleMesh(self.template, self.faces), self.control_points.copy(), self.momenta.copy(),
                     self.sigma, self.sigma_w, cfg.steps, self.sample_ids, list(self.trace))


def estimate_atlas(ensemble, template_init: TriangleMesh, config: Optional[DeformConfig] = None,
                   workers: int = 1) -> Atlas:
    return AtlasEstimator(ensemble, template_init, config or DeformConfig(), workers).run()


# ==================== CORRESPONDENCE ====================

def farthest_point_sample(points: np.ndarray, count: int, seed: int = 0) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if not 1 <= count <= len(points):
        raise ParameterError(f"cannot sample {count} of {len(points)} template vertices")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(len(points)))]
    nearest = np.linalg.norm(points - points[chosen[0]], axis=1)
    for _ in range(count - 1):
        index = int(np.argmax(nearest))
        chosen.append(index)
        nearest = np.minimum(nearest, np.linalg.norm(points - points[index], axis=1))
    return np.array(chosen)


@dataclass
class DeformResult:
    model: CorrespondenceModel
    atlas: Atlas
    template_points: np.ndarray


def correspond_deform(atlas: Atlas, num_points: int = 128, seed: int = 0, workers: int = 1) -> DeformResult:
    indices = farthest_point_sample(atlas.template.vertices, num_points, seed)
    points = atlas.template.vertices[indices]
    rows = parallel_map(lambda n: atlas.flow(n, points), range(len(atlas.sample_ids)), workers)
    return DeformResult(CorrespondenceModel(np.stack(rows), "deform", atlas.sample_ids), atlas, points)


def build_template(ensemble, config: DeformConfig) -> TriangleMesh:
    if config.template == "mean":
        return mean_shape_template(ensemble, config.template_level)
    return sphere_template(ensemble, config.template_level)


def run_deform(ensemble, config: Optional[DeformConfig] = None, workers: int = 1) -> DeformResult:
    config = config or DeformConfig()
    atlas = estimate_atlas(ensemble, build_template(ensemble, config), config, workers)
    return correspond_deform(atlas, config.num_points, config.sample_seed, workers)
