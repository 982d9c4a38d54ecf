"""
Presets - Method arms of the benchmark, each a method kind plus settings.
"""

from typing import Any, Dict, Optional

METHOD_PRESETS = {
    'particles': {
        'name': 'Particle Entropy',
        'kind': 'particles',
        'description': 'Groupwise particle system: ensemble entropy against per-shape sampling entropy.',
        'settings': {
            'num_particles': 128,
            'iterations_per_split': 40,
            'final_iterations': 120,
        }
    },
    'spherical': {
        'name': 'Spherical Harmonics',
        'kind': 'spherical',
        'description': 'Pairwise: radial parameterization, ellipsoid alignment, icosahedron resampling.',
        'settings': {
            'l_max': 12,
            'level': 3,
            'align': True,
        }
    },
    'deform_sphere': {
        'name': 'Deformation Atlas (sphere)',
        'kind': 'deform',
        'description': 'Kernel deformation atlas started from an icosphere template.',
        'settings': {
            'template': 'sphere',
            'control_points': 64,
            'num_points': 128,
        }
    },
    'deform_mean': {
        'name': 'Deformation Atlas (mean shape)',
        'kind': 'deform',
        'description': 'Kernel deformation atlas started from the mean distance-volume surface.',
        'settings': {
            'template': 'mean',
            'control_points': 64,
            'num_points': 128,
        }
    },
}


def preset_settings(preset_key: str, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Preset settings with per-arm overrides on top."""
    settings = dict(METHOD_PRESETS[preset_key]['settings'])
    settings.update(overrides or {})
    return settings
