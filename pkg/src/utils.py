"""
Utils - File helpers, seed splitting and the ordered worker pool.
"""

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from constants import AppConstants
from debug import log_error

try:
    import psutil
    HAS_PSUTIL = True
except ImportError:
    HAS_PSUTIL = False

T = TypeVar("T")
R = TypeVar("R")


def safe_file_operation(operation: Callable[[], T], description: str = "file operation") -> Tuple[bool, Optional[T]]:
    """Run a file operation, logging instead of raising on OS errors."""
    try:
        return True, operation()
    except OSError as e:
        log_error(f"{description} failed: {e}")
        return False, None


def safe_json_load(path: Path, default: Any = None) -> Any:
    """Load JSON from path; returns default when the file is missing or invalid."""
    path = Path(path)
    if not path.exists():
        return default
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        log_error(f"Could not read {path}: {e}")
        return default


def safe_json_save(data: Any, path: Path) -> bool:
    """Write JSON with sorted keys so reruns produce identical files."""
    path = Path(path)
    ok, _ = safe_file_operation(
        lambda: (path.parent.mkdir(parents=True, exist_ok=True),
                 path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")),
        f"writing {path}",
    )
    return ok


def format_file_size(size_bytes: int) -> str:
    """Human readable size, e.g. 1.00 KB."""
    size = float(size_bytes)
    for unit in ("B", "KB", "MB", "GB"):
        if size < 1024 or unit == "GB":
            if unit == "B":
                return f"{int(size)} B"
            return f"{size:.2f} {unit}"
        size /= 1024
    return f"{size:.2f} GB"


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def text_sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def format_float(value: float) -> str:
    if value is None:
        return ""
    value = float(value)
    if np.isnan(value):
        return "nan"
    return AppConstants.FLOAT_FORMAT.format(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    """Write a CSV with deterministic float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, (float, np.floating)):
                cells.append(format_float(cell))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path: Path) -> List[dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        return []
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:] if line]


def spawn_rngs(seed: int, count: int) -> List[np.random.Generator]:
    """Independent per-index generators; index i always gets the same stream."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.default_rng(child) for child in children]


def default_worker_count() -> int:
    if HAS_PSUTIL:
        cores = psutil.cpu_count(logical=False)
        if cores:
            return cores
    return os.cpu_count() or 1


def host_info() -> dict:
    info = {"cpu_count": os.cpu_count() or 1}
    if HAS_PSUTIL:
        info["physical_cores"] = psutil.cpu_count(logical=False)
        info["memory_bytes"] = psutil.virtual_memory().total
        info["memory"] = format_file_size(info["memory_bytes"])
    return info


def parallel_map(func: Callable[[T], R], items: Sequence[T], workers: Optional[int] = 1) -> List[R]:
    """Map func over items with a thread pool, preserving input order."""
    items = list(items)
    if workers is None:
        workers = default_worker_count()
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items))
