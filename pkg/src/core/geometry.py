"""
Geometry - Meshes, signed distance volumes, rigid transforms and the
preprocessing chain every correspondence method consumes.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import trimesh
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage import measure

from constants import AppConstants
from debug import log_debug, log_info, log_warning
from errors import GeometryError, ProjectionError
from utils import parallel_map
from . import kernels


# ==================== RIGID TRANSFORMS ====================

@dataclass(frozen=True, eq=False)
class RigidTransform:
    """x -> R x + t, with R a proper rotation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=float).reshape(3, 3)
        translation = np.array(self.translation, dtype=float).reshape(3)
        tol = AppConstants.ORIENTATION_TOL
        if np.abs(rotation.T @ rotation - np.eye(3)).max() >= tol:
            raise GeometryError("rotation matrix is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) >= tol:
            raise GeometryError("rotation matrix has determinant != +1")
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle_deg: float,
                        translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(rotation_matrix(axis, angle_deg), translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def apply_vectors(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other."""
        rotation = _orthonormalize(self.rotation @ other.rotation)
        return RigidTransform(rotation, self.rotation @ other.translation + self.translation)

    def angle_deg(self) -> float:
        cos = np.clip((np.trace(self.rotation) - 1.0) / 2.0, -1.0, 1.0)
        return float(np.degrees(np.arccos(cos)))

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "RigidTransform":
        return cls(np.array(data["rotation"]), np.array(data["translation"]))


def rotation_matrix(axis: Sequence[float], angle_deg: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    angle = np.radians(angle_deg)
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def _orthonormalize(matrix: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(matrix)
    rotation = u @ vt
    if np.linalg.det(rotation) < 0:
        u[:, -1] *= -1
        rotation = u @ vt
    return rotation


def fit_rigid(source: np.ndarray, target: np.ndarray, weights: Optional[np.ndarray] = None,
              scaling: bool = False) -> Tuple[RigidTransform, float]:
    """Least-squares rotation/translation (and optional scale) mapping source onto target."""
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    if weights is None:
        weights = np.ones(len(source))
    w = weights / weights.sum()
    cs = w @ source
    ct = w @ target
    a = source - cs
    b = target - ct
    h = (a * w[:, None]).T @ b
    u, s, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    correction = np.diag([1.0, 1.0, d])
    rotation = _orthonormalize(vt.T @ correction @ u.T)
    scale = 1.0
    if scaling:
        var = float((w * (a ** 2).sum(axis=1)).sum())
        if var > 0:
            scale = float((s * np.diag(correction)).sum() / var)
    return RigidTransform(rotation, ct - scale * rotation @ cs), scale


# ==================== TRIANGLE MESHES ====================

@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Immutable triangle surface in mm."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=float)
        faces = np.array(self.faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3 or len(vertices) == 0:
            raise GeometryError("mesh needs a non-empty (V, 3) vertex array")
        if faces.ndim != 2 or faces.shape[1] != 3 or len(faces) == 0:
            raise GeometryError("mesh needs a non-empty (F, 3) face array")
        if faces.min() < 0 or faces.max() >= len(vertices):
            raise GeometryError(f"face index out of range [0, {len(vertices) - 1}]")
        if not np.isfinite(vertices).all():
            raise GeometryError("mesh vertices contain NaN or inf")
        tri = vertices[faces]
        areas = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
        degenerate = np.flatnonzero(areas <= AppConstants.DEGENERATE_AREA)
        if len(degenerate):
            raise GeometryError(f"{len(degenerate)} degenerate faces, first: {degenerate[:5].tolist()}")
        vertices.setflags(write=False)
        faces.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)

    @cached_property
    def _tm(self) -> trimesh.Trimesh:
        return trimesh.Trimesh(vertices=self.vertices, faces=self.faces, process=False, validate=False)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def triangles(self) -> np.ndarray:
        return np.ascontiguousarray(self.vertices[self.faces])

    @cached_property
    def area_normals(self) -> np.ndarray:
        """Face normals scaled by face area."""
        tri = self.triangles
        return 0.5 * np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])

    @cached_property
    def face_areas(self) -> np.ndarray:
        return np.linalg.norm(self.area_normals, axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        return self.area_normals / self.face_areas[:, None]

    @cached_property
    def face_centers(self) -> np.ndarray:
        return self.triangles.mean(axis=1)

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    @property
    def volume(self) -> float:
        """Signed enclosed volume; positive for outward orientation."""
        return float(self._tm.volume)

    @cached_property
    def centroid(self) -> np.ndarray:
        return (self.face_areas[:, None] * self.face_centers).sum(axis=0) / self.area

    @property
    def bounds(self) -> np.ndarray:
        return np.vstack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @property
    def diagonal(self) -> float:
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        edges = self._tm.edges_sorted
        single = trimesh.grouping.group_rows(edges, require_count=1)
        return edges[single]

    @property
    def is_watertight(self) -> bool:
        return bool(self._tm.is_watertight and self._tm.is_winding_consistent)

    @property
    def euler_characteristic(self) -> int:
        return int(self._tm.euler_number)

    def transformed(self, transform: RigidTransform) -> "TriangleMesh":
        return TriangleMesh(transform.apply(self.vertices), self.faces)

    def translated(self, offset: Sequence[float]) -> "TriangleMesh":
        return TriangleMesh(self.vertices + np.asarray(offset, dtype=float), self.faces)

    def flipped(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.faces[:, ::-1])

    def distance_to(self, points: np.ndarray) -> np.ndarray:
        """Unsigned distance from points to this surface."""
        return kernels.unsigned_distance(np.ascontiguousarray(points, dtype=float), self.triangles)


def icosphere(level: int, radius: float = 1.0, center: Sequence[float] = (0.0, 0.0, 0.0)) -> TriangleMesh:
    sphere = trimesh.creation.icosphere(subdivisions=level, radius=radius)
    return TriangleMesh(np.asarray(sphere.vertices) + np.asarray(center, dtype=float), np.asarray(sphere.faces))


def box_mesh(extents: Sequence[float], center: Sequence[float] = (0.0, 0.0, 0.0)) -> TriangleMesh:
    box = trimesh.creation.box(extents=extents)
    return TriangleMesh(np.asarray(box.vertices) + np.asarray(center, dtype=float), np.asarray(box.faces))


def symmetric_mean_distance(a: TriangleMesh, b: TriangleMesh) -> float:
    """Mean of vertex-to-surface distances in both directions."""
    return 0.5 * (float(b.distance_to(a.vertices).mean()) + float(a.distance_to(b.vertices).mean()))


# ==================== SIGNED DISTANCE VOLUMES ====================

@dataclass(frozen=True, eq=False)
class SignedDistanceVolume:
    """Scalar grid, negative inside; values[i, j, k] sits at origin + spacing * (i, j, k)."""

    values: np.ndarray
    spacing: float
    origin: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        origin = np.array(self.origin, dtype=float).reshape(3)
        spacing = np.asarray(self.spacing, dtype=float)
        if spacing.ndim > 0:
            if spacing.size != 3 or not np.allclose(spacing, spacing.flat[0]):
                raise GeometryError(f"anisotropic spacing {spacing.tolist()} is not supported")
            spacing = spacing.flat[0]
        spacing = float(spacing)
        if spacing <= 0:
            raise GeometryError("voxel spacing must be positive")
        if values.ndim != 3 or min(values.shape) < 2:
            raise GeometryError(f"volume needs at least 2 voxels per axis, got {values.shape}")
        if not np.isfinite(values).all():
            raise GeometryError("volume contains NaN or inf")
        values.setflags(write=False)
        origin.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def from_function(cls, func: Callable[[np.ndarray], np.ndarray], lower: Sequence[float],
                      upper: Sequence[float], spacing: float) -> "SignedDistanceVolume":
        """Sample an analytic field on a grid covering [lower, upper]."""
        lower = np.asarray(lower, dtype=float)
        dims = _grid_dims(lower, np.asarray(upper, dtype=float), spacing)
        points = _grid_points(lower, dims, spacing)
        return cls(func(points).reshape(dims), spacing, lower)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.values.shape)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.spacing * (np.array(self.dims) - 1)

    def same_grid(self, other: "SignedDistanceVolume") -> bool:
        return (self.dims == other.dims and self.spacing == other.spacing
                and np.array_equal(self.origin, other.origin))

    def grid_points(self) -> np.ndarray:
        return _grid_points(self.origin, self.dims, self.spacing)

    def to_index(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.origin) / self.spacing

    def contains(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points >= self.origin + margin) & (points <= self.upper - margin), axis=1)

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Trilinear interpolation; points outside the grid take the border value."""
        idx = self.to_index(np.atleast_2d(points))
        return ndimage.map_coordinates(self.values, idx.T, order=1, mode="nearest")

    @cached_property
    def _gradient_volumes(self) -> List[np.ndarray]:
        return np.gradient(self.values, self.spacing)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        idx = self.to_index(np.atleast_2d(points)).T
        return np.stack([ndimage.map_coordinates(g, idx, order=1, mode="nearest")
                         for g in self._gradient_volumes], axis=1)

    def normals(self, points: np.ndarray) -> np.ndarray:
        g = self.gradient(points)
        norm = np.linalg.norm(g, axis=1, keepdims=True)
        return g / np.maximum(norm, 1e-12)

    def with_values(self, values: np.ndarray) -> "SignedDistanceVolume":
        return SignedDistanceVolume(values, self.spacing, self.origin)

    def extract_surface(self) -> Tuple[np.ndarray, np.ndarray]:
        """Marching-cubes zero level set as raw (vertices, faces) in mm."""
        if not (self.values.min() < 0.0 < self.values.max()):
            raise GeometryError("volume has an empty zero level set")
        verts, faces, _, _ = measure.marching_cubes(
            self.values, level=0.0, spacing=(self.spacing,) * 3, gradient_direction="ascent")
        return verts + self.origin, faces

    @cached_property
    def _surface(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.extract_surface()

    def surface_vertices(self) -> np.ndarray:
        return self._surface[0]

    def surface_area(self) -> float:
        verts, faces = self._surface
        tri = verts[faces]
        return float(0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1).sum())

    def surface_bounds(self) -> np.ndarray:
        verts = self._surface[0]
        return np.vstack([verts.min(axis=0), verts.max(axis=0)])

    def euler_characteristic(self) -> int:
        return _euler_characteristic(*self._surface)

    def to_mesh(self) -> TriangleMesh:
        """Zero level set as a mesh, dropping zero-area marching-cubes faces."""
        verts, faces = self._surface
        tri = verts[faces]
        areas = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
        return TriangleMesh(verts, faces[areas > AppConstants.DEGENERATE_AREA])


def _grid_dims(lower: np.ndarray, upper: np.ndarray, spacing: float) -> Tuple[int, int, int]:
    counts = np.ceil((upper - lower) / spacing - 1e-9).astype(int) + 1
    return tuple(int(max(c, 2)) for c in counts)


def _grid_points(origin: np.ndarray, dims: Sequence[int], spacing: float) -> np.ndarray:
    axes = [origin[i] + spacing * np.arange(dims[i]) for i in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def _euler_characteristic(vertices: np.ndarray, faces: np.ndarray) -> int:
    edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    num_edges = len(np.unique(edges, axis=0))
    num_vertices = len(np.unique(faces))
    return int(num_vertices - num_edges + len(faces))


def mesh_to_sdf(mesh: TriangleMesh, spacing: float, padding: float) -> SignedDistanceVolume:
    """Exact signed distance on a grid covering the mesh bounds plus padding."""
    if not mesh.is_watertight:
        edges = mesh.boundary_edges
        listed = ", ".join(f"({a},{b})" for a, b in edges[:10])
        raise GeometryError(f"mesh is not watertight: {len(edges)} boundary edges [{listed}]")
    lower, upper = mesh.bounds
    lower = lower - padding
    upper = upper + padding
    dims = _grid_dims(lower, upper, spacing)
    points = _grid_points(lower, dims, spacing)
    values = kernels.signed_distance(points, mesh.triangles)
    log_debug(f"SDF {dims} at spacing {spacing} from {mesh.num_faces} faces")
    return SignedDistanceVolume(values.reshape(dims), spacing, lower)


# ==================== SURFACE PROJECTION ====================

_PERTURB_DIRECTION = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)


def project_points(points: np.ndarray, sdf: SignedDistanceVolume, tol: Optional[float] = None,
                   max_iter: int = AppConstants.PROJECTION_MAX_ITER) -> np.ndarray:
    """Newton iterations along the interpolated gradient onto the zero level set."""
    x = np.array(points, dtype=float).reshape(-1, 3)
    if tol is None:
        tol = AppConstants.PROJECTION_TOL_FACTOR * sdf.spacing
    lower, upper = sdf.origin, sdf.upper
    active = np.arange(len(x))
    for _ in range(max_iter):
        d = sdf.sample(x[active])
        pending = np.abs(d) > tol
        active = active[pending]
        if len(active) == 0:
            return x
        d = d[pending]
        g = sdf.gradient(x[active])
        gn2 = (g * g).sum(axis=1)
        flat = gn2 < 1e-20
        step = np.empty_like(g)
        step[~flat] = -(d[~flat] / gn2[~flat])[:, None] * g[~flat]
        step[flat] = 0.5 * sdf.spacing * _PERTURB_DIRECTION
        lengths = np.linalg.norm(step, axis=1)
        clamp = lengths > sdf.spacing
        step[clamp] *= (sdf.spacing / lengths[clamp])[:, None]
        x[active] = np.clip(x[active] + step, lower, upper)
    raise ProjectionError(f"{len(active)} point(s) did not reach the surface after {max_iter} iterations")


def project_to_surface(point: Sequence[float], sdf: SignedDistanceVolume) -> np.ndarray:
    if not sdf.contains(np.asarray(point, dtype=float)[None])[0]:
        raise ProjectionError(f"point {list(point)} lies outside the volume grid")
    return project_points(np.asarray(point, dtype=float)[None], sdf)[0]


# ==================== REGISTRATION ====================

@dataclass
class RegistrationResult:
    transform: RigidTransform
    residual: float
    iterations: int
    converged: bool


def rigid_register(moving: TriangleMesh, reference: TriangleMesh, max_iterations: int = 60,
                   tolerance: float = 1e-10) -> RegistrationResult:
    """Iterative closest point (moving vertices to reference vertices), Kabsch inner step."""
    source = moving.vertices
    target = reference.vertices
    tree = cKDTree(target)
    transform = RigidTransform(np.eye(3), target.mean(axis=0) - source.mean(axis=0))
    best = (transform, np.inf)
    previous = np.inf
    converged = False
    iteration = 0
    for iteration in range(1, max_iterations + 1):
        moved = transform.apply(source)
        dist, idx = tree.query(moved)
        error = float(np.mean(dist ** 2))
        if error < best[1]:
            best = (transform, error)
        if error < 1e-20 or abs(previous - error) <= tolerance * max(previous, 1e-12):
            converged = True
            break
        previous = error
        transform, _ = fit_rigid(source, target[idx])
    if not converged:
        log_warning(f"ICP did not converge in {max_iterations} iterations (residual {best[1]:.4g})")
    return RegistrationResult(best[0], best[1], iteration, converged)


# ==================== SMOOTHING AND CROPPING ====================

def smooth_sdf(sdf: SignedDistanceVolume, iterations: int, sigma_voxels: float = 1.0,
               band_voxels: float = 3.0) -> SignedDistanceVolume:
    """Narrow-band Gaussian smoothing guarded by the zero level set's Euler characteristic."""
    if iterations < 0:
        raise GeometryError("smoothing iterations must be >= 0")
    if iterations == 0:
        return sdf
    reference_chi = sdf.euler_characteristic()
    current = sdf
    for i in range(iterations):
        band = np.abs(current.values) < band_voxels * sdf.spacing
        smoothed = ndimage.gaussian_filter(current.values, sigma_voxels, mode="nearest")
        candidate_values = np.where(band, smoothed, current.values)
        if not (candidate_values.min() < 0.0 < candidate_values.max()):
            log_warning(f"smoothing iteration {i + 1} erased the surface; rolled back")
            break
        candidate = current.with_values(candidate_values)
        chi = candidate.euler_characteristic()
        if chi != reference_chi:
            log_warning(f"smoothing iteration {i + 1} changed Euler characteristic "
                        f"{reference_chi} -> {chi}; rolled back")
            break
        current = candidate
    return current


def resample(sdf: SignedDistanceVolume, origin: np.ndarray, dims: Sequence[int],
             spacing: Optional[float] = None) -> SignedDistanceVolume:
    spacing = sdf.spacing if spacing is None else spacing
    points = _grid_points(np.asarray(origin, dtype=float), dims, spacing)
    values = sdf.sample(points).reshape(tuple(dims))
    return SignedDistanceVolume(values, spacing, origin)


def crop_to_common_box(volumes: Sequence[SignedDistanceVolume], padding: float,
                       sample_ids: Optional[Sequence[str]] = None) -> List[SignedDistanceVolume]:
    """Resample all volumes onto the union bounding box of their zero level sets.

    Outside a volume's original grid the resampled values repeat its border values
    rather than true distances; the zero level set is unaffected.
    """
    if not volumes:
        raise GeometryError("no volumes to crop")
    sample_ids = list(sample_ids) if sample_ids is not None else [str(i) for i in range(len(volumes))]
    spacing = volumes[0].spacing
    lower = np.full(3, np.inf)
    upper = np.full(3, -np.inf)
    for sid, volume in zip(sample_ids, volumes):
        if volume.spacing != spacing:
            raise GeometryError(f"sample {sid}: spacing {volume.spacing} differs from {spacing}")
        try:
            bounds = volume.surface_bounds()
        except GeometryError as e:
            raise GeometryError(f"sample {sid}: {e}") from e
        lower = np.minimum(lower, bounds[0])
        upper = np.maximum(upper, bounds[1])
    lower -= padding
    upper += padding
    dims = _grid_dims(lower, upper, spacing)
    return [resample(volume, lower, dims) for volume in volumes]


# ==================== PREPROCESSING ====================

@dataclass
class PreprocessParams:
    register: bool = True
    reference_index: int = 0
    spacing: float = 0.15
    padding: float = 0.6
    smoothing_iterations: int = 1

    def validate(self, ensemble_size: int):
        if not 0 <= self.reference_index < ensemble_size:
            raise GeometryError(f"reference_index {self.reference_index} outside 0..{ensemble_size - 1}")
        if self.spacing <= 0 or self.padding < 0:
            raise GeometryError("spacing must be positive and padding non-negative")


def preprocess_ensemble(ensemble, params: PreprocessParams, workers: int = 1):
    """Register to the reference sample, build and smooth SDFs, crop to a common box."""
    params.validate(ensemble.size)
    reference = ensemble.samples[params.reference_index].mesh

    def prepare(sample):
        if params.register and sample is not ensemble.samples[params.reference_index]:
            result = rigid_register(sample.mesh, reference)
            transform = result.transform
        else:
            transform = RigidTransform.identity()
        mesh = sample.mesh.transformed(transform)
        sdf = smooth_sdf(mesh_to_sdf(mesh, params.spacing, params.padding), params.smoothing_iterations)
        return mesh, sdf, transform

    prepared = parallel_map(prepare, ensemble.samples, workers)
    volumes = crop_to_common_box([p[1] for p in prepared], params.padding, ensemble.ids)
    samples = [sample.replace(mesh=mesh, sdf=volume, transform=transform.compose(sample.transform))
               for sample, (mesh, _, transform), volume in zip(ensemble.samples, prepared, volumes)]
    log_info(f"Preprocessed {ensemble.size} samples onto grid {volumes[0].dims} "
             f"(spacing {params.spacing})")
    provenance = dict(ensemble.provenance)
    provenance["preprocessing"] = {
        "register": params.register, "reference_index": params.reference_index,
        "spacing": params.spacing, "padding": params.padding,
        "smoothing_iterations": params.smoothing_iterations,
    }
    return ensemble.replace(samples=tuple(samples), world_frame=True, provenance=provenance)
