"""Core module for ShapeBench: configuration, run artifacts, geometry and ensembles."""
from .config_manager import ConfigManager, ExperimentConfig, load_experiment
from .settings_database import PARAMETER_DATABASE, get_parameter_info, search_parameters
from .artifact_manager import ArtifactManager
from .presets import METHOD_PRESETS, preset_settings

__all__ = [
    'ConfigManager',
    'ExperimentConfig',
    'load_experiment',
    'PARAMETER_DATABASE',
    'get_parameter_info',
    'search_parameters',
    'ArtifactManager',
    'METHOD_PRESETS',
    'preset_settings',
]
