"""
ConfigManager - Loads, edits and validates the JSON experiment document.
Keeps the raw lines so every schema problem is reported with its line number.
"""

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from constants import AppConstants
from errors import ConfigError
from utils import text_sha256
from .geometry import PreprocessParams
from .presets import METHOD_PRESETS, preset_settings
from .settings_database import get_section_keys, section_defaults, validate_parameter

TOP_LEVEL_KEYS = ("name", "generator", "input_dir", "preprocessing", "methods", "metrics",
                  "validation", "output_dir", "workers")
METHOD_KEYS = ("name", "preset", "kind", "settings", "seed")
_METHOD_NAME = re.compile(r"^[A-Za-z0-9_-]+$")

KeyPath = Sequence[Union[str, int]]


@dataclass
class GeneratorSpec:
    kind: str
    n: int
    seed: int
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass
class MethodSpec:
    name: str
    kind: str
    preset: Optional[str]
    settings: Dict[str, Any]
    seed: int = 0


@dataclass
class MetricsSpec:
    k_max: int = 10
    specificity_samples: int = 1000
    seed: int = 0
    mode_walk_stds: List[float] = field(default_factory=lambda: [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0])


@dataclass
class ValidationSpec:
    enabled: bool = True
    clusters: int = 4
    restarts: int = 10
    seed: int = 0
    cluster_source: str = "method"


@dataclass
class ExperimentConfig:
    name: str
    generator: Optional[GeneratorSpec]
    input_dir: Optional[Path]
    preprocessing: PreprocessParams
    methods: List[MethodSpec]
    metrics: MetricsSpec
    validation: ValidationSpec
    output_dir: Path
    workers: int
    config_hash: str = ""
    source: Optional[Path] = None

    def method(self, name: str) -> MethodSpec:
        for spec in self.methods:
            if spec.name == name:
                return spec
        raise ConfigError(f"no method named '{name}' in the experiment")

    def seeds(self) -> Dict[str, int]:
        """Every seed the run consumes."""
        seeds = {"metrics": self.metrics.seed, "validation": self.validation.seed}
        if self.generator is not None:
            seeds["generator"] = self.generator.seed
        for spec in self.methods:
            seeds[f"method.{spec.name}"] = spec.seed
            if spec.kind == "deform":
                seeds[f"method.{spec.name}.sample_seed"] = int(spec.settings.get("sample_seed", 0))
        return seeds


class ConfigManager:
    """Manages one experiment config file with line-level diagnostics."""

    def __init__(self, config_path: Optional[Path] = None):
        self.config_path: Optional[Path] = Path(config_path) if config_path else None
        self.config_data: Dict[str, Any] = {}
        self.original_content: str = ""
        self._raw_lines: List[str] = []

        if self.config_path and self.config_path.exists():
            self.load()

    def load(self, path: Optional[Path] = None) -> bool:
        """Load and parse the config file; raises ConfigError on malformed JSON."""
        target = Path(path) if path else self.config_path
        if not target or not target.exists():
            return False
        self.config_path = target
        content = target.read_text(encoding="utf-8")
        self.loads(content)
        return True

    def loads(self, content: str):
        try:
            data = json.loads(content)
        except json.JSONDecodeError as e:
            raise ConfigError(e.msg, e.lineno, e.colno) from e
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be a JSON object", 1)
        self.original_content = content
        self._raw_lines = content.splitlines()
        self.config_data = data

    # ---------- line lookup ----------

    def line_of(self, path: KeyPath) -> Optional[int]:
        """1-based line where the last named key of `path` appears, if found."""
        line = 0
        found = None
        for part in path:
            if isinstance(part, int):
                continue
            pattern = re.compile(r'"' + re.escape(part) + r'"\s*:')
            for i in range(line, len(self._raw_lines)):
                if pattern.search(self._raw_lines[i]):
                    line = i
                    found = i + 1
                    break
        return found

    def error(self, message: str, path: KeyPath) -> ConfigError:
        return ConfigError(message, self.line_of(path))

    def config_hash(self) -> str:
        content = self.original_content or json.dumps(self.config_data, indent=2) + "\n"
        return text_sha256(content)

    # ---------- schema ----------

    def _check_value(self, key: str, value: Any, path: KeyPath):
        ok, message = validate_parameter(key, value)
        if not ok:
            raise self.error(message, path)

    def _section(self, section: str, data: Any, path: KeyPath) -> Dict[str, Any]:
        """Defaults overlaid with validated user values for one parameter section."""
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise self.error(f"'{section}' must be an object", path)
        allowed = get_section_keys(section)
        values = section_defaults(section)
        for key, value in data.items():
            if key not in allowed:
                raise self.error(f"unknown key '{key}' in '{section}' (expected one of: "
                                 f"{', '.join(sorted(allowed))})", list(path) + [key])
            self._check_value(f"{section}.{key}", value, list(path) + [key])
            values[key] = value
        return values

    def _generator(self, data: Any) -> GeneratorSpec:
        if not isinstance(data, dict):
            raise self.error("'generator' must be an object", ["generator"])
        values = self._section("generator", data, ["generator"])
        kind = values["kind"]
        params = values["params"] or {}
        allowed = get_section_keys(kind)
        for key, value in params.items():
            if key not in allowed:
                raise self.error(f"unknown {kind} parameter '{key}' (expected one of: "
                                 f"{', '.join(sorted(allowed))})", ["generator", "params", key])
            self._check_value(f"{kind}.{key}", value, ["generator", "params", key])
        return GeneratorSpec(kind, values["n"], values["seed"], dict(params))

    def _method(self, index: int, data: Any) -> MethodSpec:
        path = ["methods", index]
        if not isinstance(data, dict):
            raise self.error(f"methods[{index}] must be an object", ["methods"])
        for key in data:
            if key not in METHOD_KEYS:
                raise self.error(f"unknown key '{key}' in methods[{index}]", path + [key])
        preset = data.get("preset")
        kind = data.get("kind")
        if preset is not None:
            if preset not in METHOD_PRESETS:
                raise self.error(f"unknown preset '{preset}' (expected one of: "
                                 f"{', '.join(METHOD_PRESETS)})", path + ["preset"])
            preset_kind = METHOD_PRESETS[preset]["kind"]
            if kind is not None and kind != preset_kind:
                raise self.error(f"preset '{preset}' is a {preset_kind} method, not {kind}", path + ["kind"])
            kind = preset_kind
        if kind not in AppConstants.METHOD_KINDS:
            raise self.error(f"methods[{index}] needs a preset or a kind in "
                             f"{list(AppConstants.METHOD_KINDS)}", path)

        name = data.get("name", preset or kind)
        if not isinstance(name, str) or not _METHOD_NAME.match(name):
            raise self.error(f"method name {name!r} may only use letters, digits, '_' and '-'", path + ["name"])
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise self.error(f"method seed must be a non-negative integer, got {seed!r}", path + ["seed"])

        overrides = data.get("settings") or {}
        if not isinstance(overrides, dict):
            raise self.error("'settings' must be an object", path + ["settings"])
        allowed = get_section_keys(kind)
        for key, value in overrides.items():
            if key not in allowed:
                raise self.error(f"unknown {kind} setting '{key}' (expected one of: "
                                 f"{', '.join(sorted(allowed))})", path + ["settings", key])
            self._check_value(f"{kind}.{key}", value, path + ["settings", key])
        settings = preset_settings(preset, overrides) if preset else dict(overrides)
        return MethodSpec(name, kind, preset, settings, seed)

    def experiment(self, check_paths: bool = True) -> ExperimentConfig:
        """Validate the loaded document and build the typed experiment."""
        data = self.config_data
        for key in data:
            if key not in TOP_LEVEL_KEYS:
                raise self.error(f"unknown top-level key '{key}'", [key])

        values = self._section("experiment", {k: data[k] for k in ("name", "input_dir", "output_dir", "workers")
                                              if k in data}, [])
        has_generator = data.get("generator") is not None
        if has_generator == (values["input_dir"] is not None):
            raise ConfigError("exactly one of 'generator' or 'input_dir' is required",
                              self.line_of(["generator"]) or self.line_of(["input_dir"]) or 1)
        generator = self._generator(data["generator"]) if has_generator else None

        base = self.config_path.parent if self.config_path else Path.cwd()
        input_dir = None
        if values["input_dir"] is not None:
            input_dir = Path(values["input_dir"])
            if not input_dir.is_absolute():
                input_dir = base / input_dir
            if check_paths and not input_dir.is_dir():
                raise self.error(f"input_dir {input_dir} does not exist", ["input_dir"])

        preprocessing = PreprocessParams(**self._section("preprocessing", data.get("preprocessing"),
                                                         ["preprocessing"]))

        methods_data = data.get("methods")
        if not isinstance(methods_data, list) or not methods_data:
            raise self.error("'methods' must be a non-empty list", ["methods"])
        methods = [self._method(i, entry) for i, entry in enumerate(methods_data)]
        names = [m.name for m in methods]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise self.error(f"duplicate method name(s): {', '.join(duplicates)}", ["methods"])

        metrics = MetricsSpec(**self._section("metrics", data.get("metrics"), ["metrics"]))
        validation = ValidationSpec(**self._section("validation", data.get("validation"), ["validation"]))

        return ExperimentConfig(
            name=values["name"], generator=generator, input_dir=input_dir, preprocessing=preprocessing,
            methods=methods, metrics=metrics, validation=validation,
            output_dir=Path(values["output_dir"]), workers=values["workers"],
            config_hash=self.config_hash(), source=self.config_path,
        )


def load_experiment(path: Path, check_paths: bool = True) -> Tuple[ConfigManager, ExperimentConfig]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    manager = ConfigManager(path)
    return manager, manager.experiment(check_paths)
