"""
ArtifactManager - Owns a run directory and its manifest of produced files.
"""

import shutil
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from constants import AppConstants
from debug import log_debug, log_warning
from utils import file_sha256, format_file_size, safe_json_load, safe_json_save


class ArtifactManager:
    """Records every file a stage writes, with size and SHA-256."""

    def __init__(self, run_dir: Path):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.run_dir / AppConstants.MANIFEST_FILE
        manifest = safe_json_load(self.manifest_path, default={}) or {}
        self.entries: Dict[str, Dict] = dict(manifest.get("files", {}))
        self.stages: Dict[str, Dict] = dict(manifest.get("stages", {}))

    def path(self, *parts: str) -> Path:
        return self.run_dir.joinpath(*parts)

    def stage_dir(self, *parts: str) -> Path:
        directory = self.path(*parts)
        directory.mkdir(parents=True, exist_ok=True)
        return directory

    def relative(self, path: Path) -> str:
        return Path(path).resolve().relative_to(self.run_dir.resolve()).as_posix()

    def record(self, path: Path, stage: str) -> Optional[Dict]:
        """Add one file to the manifest; returns its entry, or None if it is missing."""
        path = Path(path)
        if not path.is_file():
            log_warning(f"{stage}: expected artifact {path} was not written")
            return None
        entry = {
            "stage": stage,
            "size": path.stat().st_size,
            "sha256": file_sha256(path),
        }
        self.entries[self.relative(path)] = entry
        return entry

    def record_many(self, paths: Iterable[Path], stage: str) -> int:
        return sum(1 for p in paths if self.record(p, stage) is not None)

    def clear_stage(self, stage: str, prefix: Optional[str] = None):
        """Forget a stage's entries before it is rerun."""
        self.entries = {k: v for k, v in self.entries.items()
                        if not (v.get("stage") == stage and (prefix is None or k.startswith(prefix)))}

    def mark_stage(self, stage: str, status: str, detail: str = ""):
        self.stages[stage] = {
            "status": status,
            "detail": detail,
            "datetime": datetime.now().isoformat(timespec="seconds"),
        }

    def files(self, stage: Optional[str] = None) -> List[str]:
        return sorted(k for k, v in self.entries.items() if stage is None or v.get("stage") == stage)

    def missing(self) -> List[str]:
        """Manifest entries whose file is gone."""
        return [k for k in sorted(self.entries) if not self.path(k).is_file()]

    def modified(self) -> List[str]:
        """Manifest entries whose content no longer matches the recorded hash."""
        return [k for k in sorted(self.entries)
                if self.path(k).is_file() and file_sha256(self.path(k)) != self.entries[k]["sha256"]]

    def total_size(self) -> str:
        return format_file_size(sum(v.get("size", 0) for v in self.entries.values()))

    def snapshot_config(self, config_path: Path) -> Optional[Path]:
        """Copy the experiment config into the run directory."""
        config_path = Path(config_path)
        if not config_path.exists():
            return None
        target = self.path("config.json")
        if config_path.resolve() != target.resolve():
            shutil.copy2(config_path, target)
        self.record(target, "config")
        return target

    def save(self) -> bool:
        data = {
            "app": AppConstants.APP_NAME,
            "version": AppConstants.VERSION,
            "files": self.entries,
            "stages": self.stages,
        }
        ok = safe_json_save(data, self.manifest_path)
        if ok:
            log_debug(f"manifest: {len(self.entries)} files, {self.total_size()}")
        return ok
