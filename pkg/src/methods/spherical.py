"""
Spherical - Pairwise correspondence through spherical parameterization.

Each shape is mapped to the unit sphere by radial projection about its
centroid, the parameter sphere is rotated onto the axes of the shape's
first-order ellipsoid, the coordinate functions are expanded in spherical
harmonics, and the expansion is resampled at icosahedron vertices. Shapes
never see each other; correspondence comes from the shared parameter
locations.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import trimesh
from scipy.special import gammaln, lpmv

from analysis.shapestats import CorrespondenceModel
from core import kernels
from core.geometry import TriangleMesh
from debug import log_info, log_warning
from errors import ParameterError, SpharmError
from utils import parallel_map, safe_json_save

AXIS_RATIO_TOLERANCE = 1.05
MAX_CONDITION = 1e6          # on the basis matrix, i.e. 1e12 on the normal equations
CANONICAL_TARGETS = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


@dataclass
class SphericalConfig:
    l_max: int = 12
    level: int = 3
    align: bool = True

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "SphericalConfig":
        data = dict(data or {})
        unknown = sorted(set(data) - {"l_max", "level", "align"})
        if unknown:
            raise ParameterError(f"unknown spherical settings: {', '.join(unknown)}")
        config = cls(**data)
        config.validate()
        return config

    def validate(self):
        if self.l_max < 0:
            raise ParameterError("l_max must be >= 0")
        if self.level < 0:
            raise ParameterError("icosahedron level must be >= 0")


@dataclass
class SphericalParam:
    theta: np.ndarray
    phi: np.ndarray
    centroid: np.ndarray
    area_distortion: float
    spherical_area: float
    bijective: bool = True
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    semi_axes: Optional[np.ndarray] = None
    ambiguous: bool = False

    @property
    def directions(self) -> np.ndarray:
        return spherical_to_cartesian(self.theta, self.phi)


@dataclass
class SpharmCoeffs:
    """Complex coefficients, row l*l + l + m, one column per coordinate."""

    coefficients: np.ndarray
    l_max: int
    residual_rms: float

    def reconstruct(self, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
        return np.real(ylm_basis(self.l_max, theta, phi) @ self.coefficients)

    def coefficient(self, l: int, m: int) -> np.ndarray:
        return self.coefficients[l * l + l + m]


def spherical_to_cartesian(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    sin_t = np.sin(theta)
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), np.cos(theta)], axis=-1)


def cartesian_to_spherical(directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    directions = np.asarray(directions, dtype=float)
    unit = directions / np.linalg.norm(directions, axis=-1, keepdims=True)
    theta = np.arccos(np.clip(unit[..., 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(unit[..., 1], unit[..., 0]), 2.0 * np.pi)
    return theta, phi


# ==================== PARAMETERIZATION ====================

def spherical_parameterize(mesh: TriangleMesh) -> SphericalParam:
    """Radial projection about the area centroid; rejects non-genus-0 or non-star-shaped meshes."""
    if mesh.euler_characteristic != 2:
        raise SpharmError(f"mesh is not genus-0 (Euler characteristic {mesh.euler_characteristic})")
    centroid = mesh.centroid
    facing = ((mesh.face_centers - centroid) * mesh.area_normals).sum(axis=1)
    if np.any(facing <= 0):
        raise SpharmError(f"mesh is not star-shaped about its centroid: "
                          f"{int((facing <= 0).sum())} face(s) turn toward it")
    solid = kernels.face_solid_angles(np.ascontiguousarray(centroid), mesh.triangles)
    spherical_area = float(np.abs(solid).sum())
    if abs(spherical_area - 4.0 * np.pi) > 0.01 * 4.0 * np.pi:
        raise SpharmError(f"radial projection overlaps: spherical area {spherical_area:.4f} != 4*pi")

    offsets = mesh.vertices - centroid
    radii = np.linalg.norm(offsets, axis=1)
    if np.any(radii < 1e-12):
        raise SpharmError("a vertex coincides with the centroid")
    directions = offsets / radii[:, None]
    theta, phi = cartesian_to_spherical(directions)

    projected = directions[mesh.faces]
    flat = 0.5 * np.linalg.norm(np.cross(projected[:, 1] - projected[:, 0],
                                         projected[:, 2] - projected[:, 0]), axis=1)
    ratios = (flat / flat.sum()) / (mesh.face_areas / mesh.area)
    distortion = float(max(ratios.max(), 1.0 / ratios.min()))
    return SphericalParam(theta, phi, centroid, distortion, spherical_area)


def ellipsoid_align(param: SphericalParam, mesh: TriangleMesh) -> SphericalParam:
    """Rotate the parameter sphere so first-order ellipsoid axes land on z, x, y (longest first)."""
    directions = param.directions
    design = np.hstack([np.ones((len(directions), 1)), directions])
    coef, *_ = np.linalg.lstsq(design, mesh.vertices, rcond=None)
    linear = coef[1:].T
    u, s, vt = np.linalg.svd(linear)
    v = vt.T
    for i in range(3):
        if u[:, i] @ CANONICAL_TARGETS[i] < 0:
            u[:, i] = -u[:, i]
            v[:, i] = -v[:, i]
    rotation = CANONICAL_TARGETS.T @ v.T
    if np.linalg.det(rotation) < 0:
        v[:, 2] = -v[:, 2]
        rotation = CANONICAL_TARGETS.T @ v.T

    ambiguous = bool(s[0] < AXIS_RATIO_TOLERANCE * s[1] or s[1] < AXIS_RATIO_TOLERANCE * s[2])
    if ambiguous:
        log_warning(f"ellipsoid axes {np.round(s, 4).tolist()} are nearly equal; axis mapping is ambiguous")
    theta, phi = cartesian_to_spherical(directions @ rotation.T)
    return SphericalParam(theta, phi, param.centroid, param.area_distortion, param.spherical_area,
                          param.bijective, rotation @ param.rotation, s, ambiguous)


# ==================== SPHERICAL HARMONICS ====================

def evaluate_ylm(l: int, m: int, theta, phi):
    """Complex orthonormal spherical harmonic of degree l and order m."""
    if l < 0 or abs(m) > l:
        raise ParameterError(f"invalid harmonic degree/order ({l}, {m})")
    if m < 0:
        return (-1) ** m * np.conj(evaluate_ylm(l, -m, theta, phi))
    norm = np.sqrt((2 * l + 1) / (4.0 * np.pi) * np.exp(gammaln(l - m + 1) - gammaln(l + m + 1)))
    return norm * lpmv(m, l, np.cos(theta)) * np.exp(1j * m * np.asarray(phi))


def ylm_basis(l_max: int, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    basis = np.empty(theta.shape + ((l_max + 1) ** 2,), dtype=complex)
    for l in range(l_max + 1):
        for m in range(-l, l + 1):
            basis[..., l * l + l + m] = evaluate_ylm(l, m, theta, phi)
    return basis


def fit_spharm(mesh: TriangleMesh, param: SphericalParam, l_max: int) -> SpharmCoeffs:
    count = (l_max + 1) ** 2
    if mesh.num_vertices < count:
        raise SpharmError(f"{mesh.num_vertices} vertices cannot determine {count} coefficients; lower l_max")
    basis = ylm_basis(l_max, param.theta, param.phi)
    condition = np.linalg.cond(basis)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise SpharmError(f"harmonic fit is ill-conditioned (cond {condition:.3g}); "
                          f"sample the surface more densely or lower l_max={l_max}")
    coefficients, *_ = np.linalg.lstsq(basis, mesh.vertices.astype(complex), rcond=None)
    misfit = np.real(basis @ coefficients) - mesh.vertices
    residual = float(np.sqrt((misfit ** 2).sum(axis=1).mean()))
    return SpharmCoeffs(coefficients, l_max, residual)


@lru_cache(maxsize=8)
def icosahedron_directions(level: int) -> np.ndarray:
    sphere = trimesh.creation.icosphere(subdivisions=level, radius=1.0)
    vertices = np.asarray(sphere.vertices, dtype=float)
    vertices = vertices / np.linalg.norm(vertices, axis=1, keepdims=True)
    vertices.setflags(write=False)
    return vertices


def sample_icosahedron(coeffs: SpharmCoeffs, level: int) -> np.ndarray:
    """Reconstruction at the 10 * 4**level + 2 icosahedron vertices, in a fixed order."""
    if level < 0:
        raise ParameterError("icosahedron level must be >= 0")
    theta, phi = cartesian_to_spherical(icosahedron_directions(level))
    return coeffs.reconstruct(theta, phi)


# ==================== PIPELINE ====================

@dataclass
class SphericalResult:
    model: CorrespondenceModel
    reports: List[Dict]

    @property
    def ambiguous_samples(self) -> List[str]:
        return [r["sample_id"] for r in self.reports if r["ambiguous"]]


def correspond_spherical(ensemble, config: Optional[SphericalConfig] = None, workers: int = 1) -> SphericalResult:
    config = config or SphericalConfig()
    config.validate()

    def process(sample) -> Tuple[np.ndarray, Dict]:
        try:
            param = spherical_parameterize(sample.mesh)
            if config.align:
                param = ellipsoid_align(param, sample.mesh)
            coeffs = fit_spharm(sample.mesh, param, config.l_max)
        except SpharmError as e:
            raise SpharmError(f"{sample.sample_id}: {e}") from e
        report = {
            "sample_id": sample.sample_id,
            "area_distortion": param.area_distortion,
            "spherical_area": param.spherical_area,
            "residual_rms": coeffs.residual_rms,
            "ambiguous": param.ambiguous,
            "semi_axes": None if param.semi_axes is None else param.semi_axes.tolist(),
        }
        return sample_icosahedron(coeffs, config.level), report

    results = parallel_map(process, list(ensemble.samples), workers)
    points = np.stack([r[0] for r in results])
    reports = [r[1] for r in results]
    flagged = sum(r["ambiguous"] for r in reports)
    log_info(f"Spherical: {len(reports)} shapes at l_max={config.l_max}, {points.shape[1]} points"
             + (f", {flagged} with ambiguous axes" if flagged else ""))
    return SphericalResult(CorrespondenceModel(points, "spherical", tuple(ensemble.ids)), reports)


def write_reports(reports: List[Dict], path: Path) -> bool:
    return safe_json_save({"samples": reports}, path)
