"""
Ensembles - Shape collections, synthetic generators with exact ground truth,
and on-disk ingestion.
"""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from constants import AppConstants
from debug import log_info
from errors import EnsembleError, MeshFormatError, ParameterError
from utils import safe_json_load, safe_json_save, spawn_rngs
from .formats import read_obj, read_points, read_volume, volume_paths, write_obj, write_points, write_volume
from .geometry import RigidTransform, SignedDistanceVolume, TriangleMesh


@dataclass(frozen=True, eq=False)
class ShapeSample:
    sample_id: str
    mesh: TriangleMesh
    sdf: Optional[SignedDistanceVolume] = None
    transform: RigidTransform = field(default_factory=RigidTransform.identity)

    def replace(self, **changes) -> "ShapeSample":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Ensemble:
    samples: Tuple[ShapeSample, ...]
    world_frame: bool = False
    provenance: Dict = field(default_factory=dict)

    def __post_init__(self):
        samples = tuple(self.samples)
        if not samples:
            raise EnsembleError("ensemble has no samples")
        ids = [s.sample_id for s in samples]
        if len(set(ids)) != len(ids):
            raise EnsembleError("sample ids must be unique")
        object.__setattr__(self, "samples", samples)

    @classmethod
    def from_meshes(cls, meshes: Sequence[TriangleMesh], ids: Optional[Sequence[str]] = None,
                    provenance: Optional[Dict] = None) -> "Ensemble":
        ids = list(ids) if ids is not None else [f"sample_{i:03d}" for i in range(len(meshes))]
        return cls(tuple(ShapeSample(i, m) for i, m in zip(ids, meshes)), provenance=dict(provenance or {}))

    @property
    def size(self) -> int:
        return len(self.samples)

    @property
    def ids(self) -> List[str]:
        return [s.sample_id for s in self.samples]

    @property
    def meshes(self) -> List[TriangleMesh]:
        return [s.mesh for s in self.samples]

    @property
    def volumes(self) -> List[SignedDistanceVolume]:
        self.require_volumes()
        return [s.sdf for s in self.samples]

    @property
    def transforms(self) -> List[RigidTransform]:
        return [s.transform for s in self.samples]

    def require_statistical(self):
        if self.size < 2:
            raise EnsembleError(f"statistical operations need N >= 2 samples, have {self.size}")

    def require_volumes(self):
        missing = [s.sample_id for s in self.samples if s.sdf is None]
        if missing:
            raise EnsembleError(f"samples without signed distance volumes: {', '.join(missing[:5])}")

    def require_common_grid(self):
        volumes = self.volumes
        for sample, volume in zip(self.samples[1:], volumes[1:]):
            if not volume.same_grid(volumes[0]):
                raise EnsembleError(f"sample {sample.sample_id} is not on the common grid")

    def bounding_diagonal(self) -> float:
        lower = np.min([m.bounds[0] for m in self.meshes], axis=0)
        upper = np.max([m.bounds[1] for m in self.meshes], axis=0)
        return float(np.linalg.norm(upper - lower))

    def replace(self, **changes) -> "Ensemble":
        return dataclasses.replace(self, **changes)

    def subset(self, indices: Sequence[int]) -> "Ensemble":
        return self.replace(samples=tuple(self.samples[i] for i in indices))


# ==================== GROUND TRUTH ====================

@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Generative parameters and, for appendages, exact ostium contours and plane normals."""

    kind: str
    sample_ids: Tuple[str, ...]
    parameters: Tuple[Dict, ...]
    contours: Optional[np.ndarray] = None
    ostium_normals: Optional[np.ndarray] = None
    septum_normals: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return len(self.sample_ids)

    @property
    def has_contours(self) -> bool:
        return self.contours is not None and self.contours.shape[1] > 0

    def parameter(self, name: str) -> np.ndarray:
        return np.array([p[name] for p in self.parameters], dtype=float)

    def feature_matrix(self, names: Sequence[str]) -> np.ndarray:
        return np.stack([self.parameter(n) for n in names], axis=1)

    def transformed(self, transforms: Sequence[RigidTransform]) -> "GroundTruth":
        """Carry contours and normals into each sample's world frame."""
        if len(transforms) != self.size:
            raise EnsembleError(f"{len(transforms)} transforms for {self.size} ground-truth samples")
        changes = {}
        if self.has_contours:
            changes["contours"] = np.stack([t.apply(c) for t, c in zip(transforms, self.contours)])
        for name in ("ostium_normals", "septum_normals"):
            normals = getattr(self, name)
            if normals is not None:
                changes[name] = np.stack([t.apply_vectors(n) for t, n in zip(transforms, normals)])
        return dataclasses.replace(self, **changes)

    def save(self, directory: Path):
        directory = Path(directory)
        data = {
            "kind": self.kind,
            "sample_ids": list(self.sample_ids),
            "parameters": list(self.parameters),
            "labels": None if self.labels is None else [int(v) for v in self.labels],
            "ostium_normals": None if self.ostium_normals is None else self.ostium_normals.tolist(),
            "septum_normals": None if self.septum_normals is None else self.septum_normals.tolist(),
        }
        safe_json_save(data, directory / AppConstants.GROUND_TRUTH_FILE)
        if self.has_contours:
            for sid, contour in zip(self.sample_ids, self.contours):
                write_points(contour, directory / "contours" / f"{sid}.txt")

    @classmethod
    def load(cls, directory: Path) -> Optional["GroundTruth"]:
        directory = Path(directory)
        data = safe_json_load(directory / AppConstants.GROUND_TRUTH_FILE)
        if data is None:
            return None
        ids = tuple(data["sample_ids"])
        contours = None
        contour_dir = directory / "contours"
        if contour_dir.is_dir():
            contours = np.stack([read_points(contour_dir / f"{sid}.txt") for sid in ids])
        as_array = lambda v: None if v is None else np.array(v, dtype=float)
        return cls(
            kind=data["kind"], sample_ids=ids, parameters=tuple(data["parameters"]),
            contours=contours, ostium_normals=as_array(data.get("ostium_normals")),
            septum_normals=as_array(data.get("septum_normals")),
            labels=None if data.get("labels") is None else np.array(data["labels"], dtype=int),
        )


# ==================== BOX-BUMP GENERATOR ====================

def _cube_lattice(resolution: int) -> Tuple[np.ndarray, np.ndarray]:
    """Unit-cube surface lattice with shared vertices, integer coords in [0, resolution]."""
    index: Dict[Tuple[int, int, int], int] = {}
    coords: List[Tuple[int, int, int]] = []
    faces: List[List[int]] = []

    def vertex(key):
        if key not in index:
            index[key] = len(coords)
            coords.append(key)
        return index[key]

    for axis in range(3):
        u_axis, v_axis = (axis + 1) % 3, (axis + 2) % 3
        for side in (0, resolution):
            for a in range(resolution):
                for b in range(resolution):
                    quad = []
                    for da, db in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        key = [0, 0, 0]
                        key[axis] = side
                        key[u_axis] = a + da
                        key[v_axis] = b + db
                        quad.append(vertex(tuple(key)))
                    if side == 0:
                        quad.reverse()
                    faces.append([quad[0], quad[1], quad[2]])
                    faces.append([quad[0], quad[2], quad[3]])
    return np.array(coords, dtype=float), np.array(faces, dtype=np.int64)


def box_bump_mesh(bump_x: float, resolution: int = 24, extent: float = AppConstants.BOX_EXTENT,
                  radius: float = AppConstants.BUMP_RADIUS) -> TriangleMesh:
    """Box centered at the origin with a hemispherical bump centered at (bump_x, 0) on the top face."""
    coords, faces = _cube_lattice(resolution)
    vertices = (coords / resolution - 0.5) * extent
    top = coords[:, 2] == resolution
    rho2 = (vertices[:, 0] - bump_x) ** 2 + vertices[:, 1] ** 2
    raised = top & (rho2 < radius ** 2)
    vertices[raised, 2] += np.sqrt(radius ** 2 - rho2[raised])
    return TriangleMesh(vertices, faces)


def gen_box_bump(n: int, seed: int, bump_range: Tuple[float, float] = (0.37, 0.63),
                 positions: Optional[Sequence[float]] = None, resolution: int = 24,
                 extent: float = AppConstants.BOX_EXTENT,
                 radius: float = AppConstants.BUMP_RADIUS) -> Tuple[Ensemble, GroundTruth]:
    """Boxes whose only variation is a bump sliding along the top face, parallel to one edge."""
    if positions is not None:
        positions = [float(p) for p in positions]
        n = len(positions)
    if n < 2:
        raise ParameterError("box-bump ensembles need n >= 2")
    lo, hi = (float(v) for v in bump_range)
    if not 0.0 < lo <= hi < 1.0:
        raise ParameterError(f"bump_range {bump_range} must lie inside (0, 1)")
    if radius <= 0 or 2 * radius >= extent:
        raise ParameterError(f"bump radius {radius} exceeds the box extent {extent}")
    if resolution < 4:
        raise ParameterError("resolution must be >= 4")

    if positions is None:
        positions = [float(rng.uniform(lo, hi)) for rng in spawn_rngs(seed, n)]
    for p in positions:
        if not (radius <= p * extent <= extent - radius):
            raise ParameterError(f"bump at fraction {p:.3f} does not fit on the top face")

    ids = [f"boxbump_{i:03d}" for i in range(n)]
    meshes, params = [], []
    for p in positions:
        bump_x = -0.5 * extent + p * extent
        meshes.append(box_bump_mesh(bump_x, resolution, extent, radius))
        params.append({"bump_fraction": p, "bump_position_mm": p * extent})
    provenance = {"generator": "box_bump", "n": n, "seed": seed, "bump_range": [lo, hi],
                  "resolution": resolution, "extent": extent, "radius": radius}
    log_info(f"Generated {n} box-bump samples (seed {seed})")
    ensemble = Ensemble.from_meshes(meshes, ids, provenance)
    return ensemble, GroundTruth("box_bump", tuple(ids), tuple(params))


# ==================== APPENDAGE GENERATOR ====================

@dataclass(frozen=True)
class FamilyParams:
    elongation: float
    a: float
    b: float
    bend: float
    septum_tilt_deg: float


DEFAULT_FAMILIES: Dict[int, FamilyParams] = {
    1: FamilyParams(elongation=5.0, a=11.0, b=9.0, bend=0.0, septum_tilt_deg=20.0),
    2: FamilyParams(elongation=16.0, a=8.0, b=6.5, bend=0.25, septum_tilt_deg=35.0),
    3: FamilyParams(elongation=14.0, a=10.0, b=8.5, bend=0.0, septum_tilt_deg=10.0),
    4: FamilyParams(elongation=9.0, a=9.0, b=7.5, bend=0.12, septum_tilt_deg=27.0),
}

DEFAULT_JITTER = FamilyParams(elongation=0.8, a=0.35, b=0.3, bend=0.015, septum_tilt_deg=1.5)

APPENDAGE_FEATURES = ("elongation", "a", "b", "bend", "septum_tilt_deg")
MAX_BEND = 0.35


@dataclass
class AppendageParams:
    families: Dict[int, FamilyParams] = field(default_factory=lambda: dict(DEFAULT_FAMILIES))
    jitter: FamilyParams = DEFAULT_JITTER
    body_height: float = 15.0
    ostium_height_ratio: float = 0.8
    lobe_rings: int = 10
    body_rings: int = 20

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "AppendageParams":
        data = dict(data or {})
        params = cls()
        if "families" in data:
            params.families = {int(k): FamilyParams(**v) for k, v in data.pop("families").items()}
        if "jitter" in data:
            params.jitter = FamilyParams(**data.pop("jitter"))
        for key, value in data.items():
            if not hasattr(params, key):
                raise ParameterError(f"unknown appendage parameter '{key}'")
            setattr(params, key, value)
        params.validate()
        return params

    def validate(self):
        if set(self.families) - {1, 2, 3, 4} or not self.families:
            raise ParameterError("family labels must be a non-empty subset of 1..4")
        if self.body_height <= 0 or not 0.0 < self.ostium_height_ratio < 1.0:
            raise ParameterError("body_height must be positive and ostium_height_ratio in (0, 1)")
        if self.lobe_rings < 2 or self.body_rings < 3:
            raise ParameterError("need lobe_rings >= 2 and body_rings >= 3")
        for label, fam in self.families.items():
            if fam.a <= 0 or fam.b <= 0 or fam.elongation < 0:
                raise ParameterError(f"family {label}: axes must be positive and elongation >= 0")
            if abs(fam.bend) > MAX_BEND:
                raise ParameterError(f"family {label}: |bend| must be <= {MAX_BEND}")
            if not 0.0 <= fam.septum_tilt_deg < 90.0:
                raise ParameterError(f"family {label}: septum tilt must be in [0, 90)")


def _rotate_about_y(points: np.ndarray, angles: np.ndarray) -> np.ndarray:
    c, s = np.cos(angles), np.sin(angles)
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    return np.stack([c * x + s * z, y, -s * x + c * z], axis=-1)


def appendage_mesh(elongation: float, a: float, b: float, bend: float, params: AppendageParams,
                   contour_points: int = AppConstants.CONTOUR_POINTS) -> Tuple[TriangleMesh, np.ndarray]:
    """Ellipsoidal body with a pouch rising over the ostium; returns (mesh, ostium ring)."""
    c_axis = params.body_height
    z0 = params.ostium_height_ratio * c_axis
    shrink = np.sqrt(1.0 - params.ostium_height_ratio ** 2)
    a_axis, b_axis = a / shrink, b / shrink
    gain = elongation / c_axis

    beta = 2.0 * np.pi * np.arange(contour_points) / contour_points
    rho = a * b / np.sqrt((b * np.cos(beta)) ** 2 + (a * np.sin(beta)) ** 2)
    ostium = np.stack([rho * np.cos(beta), rho * np.sin(beta), np.full_like(beta, z0)], axis=1)
    alpha_ostium = np.arctan2(rho, z0)

    def on_body(alpha):
        u = np.stack([np.sin(alpha) * np.cos(beta), np.sin(alpha) * np.sin(beta), np.cos(alpha)], axis=1)
        r = 1.0 / np.sqrt((u[:, 0] / a_axis) ** 2 + (u[:, 1] / b_axis) ** 2 + (u[:, 2] / c_axis) ** 2)
        return u, r

    rings = []
    for k in range(1, params.lobe_rings):
        s = k / params.lobe_rings
        weight = np.cos(0.5 * np.pi * s) ** 2
        u, r = on_body(s * alpha_ostium)
        rings.append(_rotate_about_y(u * (r * (1.0 + gain * weight))[:, None], np.full(len(beta), bend * weight)))
    rings.append(ostium)
    for j in range(1, params.body_rings):
        t = j / params.body_rings
        u, r = on_body(alpha_ostium + t * (np.pi - alpha_ostium))
        rings.append(u * r[:, None])

    tip = _rotate_about_y(np.array([0.0, 0.0, c_axis + elongation]), np.array(bend))
    bottom = np.array([0.0, 0.0, -c_axis])
    ring_stack = np.stack(rings)
    vertices = np.vstack([tip[None], ring_stack.reshape(-1, 3), bottom[None]])

    count = contour_points
    num_rings = len(rings)
    south = 1 + num_rings * count
    k = np.arange(count)
    k_next = (k + 1) % count
    faces = [np.stack([np.zeros(count, dtype=np.int64), 1 + k, 1 + k_next], axis=1)]
    for i in range(num_rings - 1):
        upper, lower = 1 + i * count, 1 + (i + 1) * count
        faces.append(np.stack([upper + k, lower + k, lower + k_next], axis=1))
        faces.append(np.stack([upper + k, lower + k_next, upper + k_next], axis=1))
    last = 1 + (num_rings - 1) * count
    faces.append(np.stack([last + k, np.full(count, south), last + k_next], axis=1))
    return TriangleMesh(vertices, np.vstack(faces)), ostium


def gen_appendage(n: int, seed: int, params=None) -> Tuple[Ensemble, GroundTruth]:
    """Four pouch families on an ellipsoidal body; labels assigned round-robin by index."""
    if n < 2:
        raise ParameterError("appendage ensembles need n >= 2")
    if not isinstance(params, AppendageParams):
        params = AppendageParams.from_dict(params)
    params.validate()
    labels_available = sorted(params.families)

    ids, meshes, records, labels, contours, septa = [], [], [], [], [], []
    for i, rng in enumerate(spawn_rngs(seed, n)):
        label = labels_available[i % len(labels_available)]
        mean = params.families[label]
        draw = {name: float(rng.normal(getattr(mean, name), getattr(params.jitter, name)))
                for name in APPENDAGE_FEATURES}
        draw["a"] = max(draw["a"], 1.0)
        draw["b"] = max(draw["b"], 1.0)
        draw["elongation"] = max(draw["elongation"], 0.0)
        draw["bend"] = float(np.clip(draw["bend"], -MAX_BEND, MAX_BEND))
        draw["septum_tilt_deg"] = float(np.clip(draw["septum_tilt_deg"], 0.0, 89.0))
        mesh, ring = appendage_mesh(draw["elongation"], draw["a"], draw["b"], draw["bend"], params)
        tilt = np.radians(draw["septum_tilt_deg"])
        sid = f"appendage_{i:03d}"
        ids.append(sid)
        meshes.append(mesh)
        records.append({**draw, "family": label, "family_name": AppConstants.FAMILY_NAMES[label]})
        labels.append(label)
        contours.append(ring)
        septa.append([0.0, -np.sin(tilt), np.cos(tilt)])

    provenance = {"generator": "appendage", "n": n, "seed": seed,
                  "families": {k: dataclasses.asdict(v) for k, v in params.families.items()},
                  "jitter": dataclasses.asdict(params.jitter)}
    log_info(f"Generated {n} appendage samples over {len(labels_available)} families (seed {seed})")
    truth = GroundTruth(
        kind="appendage", sample_ids=tuple(ids), parameters=tuple(records),
        contours=np.stack(contours), ostium_normals=np.tile([0.0, 0.0, 1.0], (n, 1)),
        septum_normals=np.array(septa), labels=np.array(labels, dtype=int),
    )
    return Ensemble.from_meshes(meshes, ids, provenance), truth


# ==================== DISK I/O ====================

def save_ensemble(ensemble: Ensemble, directory: Path, include_volumes: bool = True) -> List[Path]:
    directory = Path(directory)
    written = []
    for sample in ensemble.samples:
        path = directory / f"{sample.sample_id}.obj"
        write_obj(sample.mesh, path)
        written.append(path)
        if include_volumes and sample.sdf is not None:
            write_volume(sample.sdf, directory / sample.sample_id)
            written.extend(volume_paths(directory / sample.sample_id))
    transforms = {s.sample_id: s.transform.to_dict() for s in ensemble.samples}
    safe_json_save({"world_frame": ensemble.world_frame, "provenance": ensemble.provenance,
                    "transforms": transforms}, directory / "ensemble.json")
    written.append(directory / "ensemble.json")
    return written


def load_ensemble(directory: Path) -> Ensemble:
    """OBJ meshes in filename order, with volume sidecars when present."""
    directory = Path(directory)
    if not directory.is_dir():
        raise EnsembleError(f"ensemble directory {directory} does not exist")
    paths = sorted(directory.glob("*.obj"), key=lambda p: p.name)
    if not paths:
        raise EnsembleError(f"no OBJ meshes found in {directory}")
    meta = safe_json_load(directory / "ensemble.json", default={})
    transforms = meta.get("transforms", {})

    samples = []
    for path in paths:
        mesh = read_obj(path)
        sdf = None
        if path.with_suffix(".json").exists() and path.with_suffix(".raw").exists():
            sdf = read_volume(path.with_suffix(""))
        transform = RigidTransform.identity()
        if path.stem in transforms:
            try:
                transform = RigidTransform.from_dict(transforms[path.stem])
            except (KeyError, ValueError) as e:
                raise MeshFormatError(f"{directory / 'ensemble.json'}: bad transform for {path.stem}") from e
        samples.append(ShapeSample(path.stem, mesh, sdf, transform))
    provenance = dict(meta.get("provenance", {}))
    provenance["source"] = str(directory)
    return Ensemble(tuple(samples), world_frame=bool(meta.get("world_frame", False)), provenance=provenance)
