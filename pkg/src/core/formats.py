"""
Formats - OBJ meshes, raw volumes with JSON sidecars, and point files.
"""

import json
from pathlib import Path
from typing import Tuple

import numpy as np

from errors import MeshFormatError
from .geometry import SignedDistanceVolume, TriangleMesh


def read_obj(path: Path) -> TriangleMesh:
    """Read the `v x y z` / `f i j k` subset of OBJ (1-based indices, LF or CRLF)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise MeshFormatError(f"{path}: cannot read mesh ({e})") from e

    vertices, faces = [], []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "v" and len(parts) == 4:
                vertices.append([float(p) for p in parts[1:]])
            elif parts[0] == "f" and len(parts) == 4:
                faces.append([int(p) - 1 for p in parts[1:]])
            else:
                raise ValueError(f"unsupported line '{line[:40]}'")
        except ValueError as e:
            raise MeshFormatError(f"{path}:{number}: {e}") from e

    try:
        return TriangleMesh(np.array(vertices, dtype=float).reshape(-1, 3),
                            np.array(faces, dtype=np.int64).reshape(-1, 3))
    except MeshFormatError:
        raise
    except ValueError as e:
        raise MeshFormatError(f"{path}: {e}") from e


def write_obj(mesh: TriangleMesh, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"v {x:.10g} {y:.10g} {z:.10g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def volume_paths(stem: Path) -> Tuple[Path, Path]:
    stem = Path(stem)
    return stem.with_suffix(".raw"), stem.with_suffix(".json")


def write_volume(volume: SignedDistanceVolume, stem: Path):
    """Little-endian float32, x fastest, plus {dims, spacing, origin} sidecar."""
    raw_path, meta_path = volume_paths(stem)
    raw_path.parent.mkdir(parents=True, exist_ok=True)
    volume.values.astype("<f4").ravel(order="F").tofile(raw_path)
    meta = {"dims": list(volume.dims), "spacing": volume.spacing, "origin": volume.origin.tolist()}
    meta_path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def read_volume(stem: Path) -> SignedDistanceVolume:
    raw_path, meta_path = volume_paths(stem)
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        dims = tuple(int(d) for d in meta["dims"])
        data = np.fromfile(raw_path, dtype="<f4")
    except (OSError, ValueError, KeyError) as e:
        raise MeshFormatError(f"{meta_path}: invalid volume sidecar ({e})") from e
    if data.size != int(np.prod(dims)):
        raise MeshFormatError(f"{raw_path}: expected {int(np.prod(dims))} values, found {data.size}")
    values = data.astype(float).reshape(dims, order="F")
    try:
        return SignedDistanceVolume(values, meta["spacing"], meta["origin"])
    except ValueError as e:
        raise MeshFormatError(f"{meta_path}: {e}") from e


def write_points(points: np.ndarray, path: Path):
    """One `x y z` line per point."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    path.write_text("".join(f"{x:.10g} {y:.10g} {z:.10g}\n" for x, y, z in points), encoding="utf-8")


def read_points(path: Path) -> np.ndarray:
    path = Path(path)
    try:
        data = np.loadtxt(path, dtype=float, ndmin=2)
    except (OSError, ValueError) as e:
        raise MeshFormatError(f"{path}: cannot read points ({e})") from e
    if data.shape[1] != 3:
        raise MeshFormatError(f"{path}: expected 3 columns, found {data.shape[1]}")
    return data
