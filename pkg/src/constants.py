"""
Constants - Fixed values shared across the toolkit.
"""

from pathlib import Path


class AppConstants:
    """Application-wide constants."""

    APP_NAME = "ShapeBench"
    VERSION = "1.0.0"
    LOGGER_NAME = "shapebench"

    # Exit codes
    EXIT_OK = 0
    EXIT_CONFIG_ERROR = 2
    EXIT_STAGE_FAILURE = 3

    # Numerical tolerances
    ORIENTATION_TOL = 1e-9
    DEGENERATE_AREA = 1e-12
    PROJECTION_TOL_FACTOR = 1e-3
    PROJECTION_MAX_ITER = 100

    # Domain constants
    CONTOUR_POINTS = 64
    SIGNIFICANCE_LEVEL = 0.01
    BOX_EXTENT = 4.0
    BUMP_RADIUS = 0.6
    METHOD_KINDS = ("particles", "spherical", "deform")
    METHOD_PRESET_KEYS = ("particles", "spherical", "deform_sphere", "deform_mean")
    MEASUREMENTS = ("max_mm", "min_mm", "area_mm2", "circ_mm", "angle_deg")
    MEASUREMENT_LABELS = {
        "max_mm": "Maximum diameter",
        "min_mm": "Minimum diameter",
        "area_mm2": "Area",
        "circ_mm": "Circumference",
        "angle_deg": "Ostium-septum angle",
    }
    FAMILY_NAMES = {1: "Cauliflower", 2: "ChickenWing", 3: "WindSock", 4: "Cactus"}

    # Run directory layout
    ENSEMBLE_DIR = "ensemble"
    PREPROCESSED_DIR = "preprocessed"
    CORRESPONDENCE_DIR = "correspondences"
    MODELS_DIR = "models"
    METRICS_DIR = "metrics"
    CLUSTERING_DIR = "clustering"
    VALIDATION_DIR = "validation"
    GROUND_TRUTH_FILE = "ground_truth.json"
    MANIFEST_FILE = "manifest.json"
    REPORT_FILE = "report.json"
    SUMMARY_FILE = "summary.csv"
    LOG_FILE = "run.log"
    PARTICLE_SUFFIX = "_world.particles"

    # CSV float format; fixed so reruns are byte-identical
    FLOAT_FORMAT = "{:.10g}"

    DEFAULT_OUTPUT_DIR = Path("runs")
