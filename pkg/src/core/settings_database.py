"""
Parameter Database - Every accepted experiment key with metadata, tooltips
and search aliases. Config validation is driven by this table.
"""

from typing import Any, Tuple

PARAMETER_DATABASE = {
    # ==================== EXPERIMENT ====================
    "experiment.name": {
        "name": "Experiment Name",
        "category": "Experiment",
        "subcategory": "Identity",
        "type": "str",
        "default": "experiment",
        "tooltip": "Label written into the run report.",
        "search_aliases": ["name", "label", "title"]
    },
    "experiment.output_dir": {
        "name": "Output Directory",
        "category": "Experiment",
        "subcategory": "Artifacts",
        "type": "str",
        "default": "runs/experiment",
        "tooltip": "Run directory; --out on the command line overrides it.",
        "search_aliases": ["out", "output", "run dir", "directory"]
    },
    "experiment.input_dir": {
        "name": "Input Directory",
        "category": "Experiment",
        "subcategory": "Data",
        "type": "str",
        "default": None,
        "tooltip": "Directory of OBJ meshes used instead of a synthetic generator.",
        "search_aliases": ["input", "meshes", "obj", "external data"]
    },
    "experiment.workers": {
        "name": "Workers",
        "category": "Experiment",
        "subcategory": "Execution",
        "type": "int",
        "default": 1,
        "range": [0, 256],
        "tooltip": "Worker threads. 0 = physical core count. Outputs do not depend on it.",
        "search_aliases": ["threads", "parallel", "jobs", "cores"]
    },

    # ==================== GENERATOR ====================
    "generator.kind": {
        "name": "Generator",
        "category": "Generator",
        "subcategory": "Ensemble",
        "type": "str",
        "default": "box_bump",
        "options": {"box_bump": "Box with sliding bump", "appendage": "Four appendage families"},
        "tooltip": "Synthetic ensemble with analytic ground truth.",
        "search_aliases": ["generator", "synthetic", "dataset", "boxbump"]
    },
    "generator.n": {
        "name": "Sample Count",
        "category": "Generator",
        "subcategory": "Ensemble",
        "type": "int",
        "default": 30,
        "range": [2, 10000],
        "tooltip": "Number of shapes N.",
        "search_aliases": ["n", "samples", "count", "size"]
    },
    "generator.seed": {
        "name": "Generator Seed",
        "category": "Generator",
        "subcategory": "Ensemble",
        "type": "int",
        "default": 0,
        "range": [0, 2 ** 32 - 1],
        "tooltip": "Split per sample index, so sample i is independent of N.",
        "search_aliases": ["seed", "random"]
    },
    "generator.params": {
        "name": "Generator Parameters",
        "category": "Generator",
        "subcategory": "Ensemble",
        "type": "dict",
        "default": {},
        "tooltip": "Keys from the box_bump.* or appendage.* entries, by generator kind.",
        "search_aliases": ["params", "parameters"]
    },
    "box_bump.bump_range": {
        "name": "Bump Range",
        "category": "Generator",
        "subcategory": "Box-bump",
        "type": "float_pair",
        "default": [0.37, 0.63],
        "range": [0.0, 1.0],
        "tooltip": "Fraction of the top edge the bump center is drawn from, uniformly.",
        "search_aliases": ["bump", "position", "range"]
    },
    "box_bump.positions": {
        "name": "Bump Positions",
        "category": "Generator",
        "subcategory": "Box-bump",
        "type": "float_list",
        "default": None,
        "range": [0.0, 1.0],
        "tooltip": "Explicit bump fractions; overrides n and bump_range.",
        "search_aliases": ["positions", "fixed bumps"]
    },
    "box_bump.resolution": {
        "name": "Box Resolution",
        "category": "Generator",
        "subcategory": "Box-bump",
        "type": "int",
        "default": 24,
        "range": [4, 256],
        "tooltip": "Lattice cells per box edge.",
        "search_aliases": ["resolution", "lattice", "mesh density"]
    },
    "appendage.families": {
        "name": "Families",
        "category": "Generator",
        "subcategory": "Appendage",
        "type": "dict",
        "default": None,
        "tooltip": "Per-label means {elongation, a, b, bend, septum_tilt_deg}, labels 1..4.",
        "search_aliases": ["families", "morphology", "clusters"]
    },
    "appendage.jitter": {
        "name": "Jitter",
        "category": "Generator",
        "subcategory": "Appendage",
        "type": "dict",
        "default": None,
        "tooltip": "Per-feature standard deviations around the family means.",
        "search_aliases": ["jitter", "noise", "spread"]
    },
    "appendage.body_height": {
        "name": "Body Height",
        "category": "Generator",
        "subcategory": "Appendage",
        "type": "float",
        "default": 15.0,
        "range": [1.0, 200.0],
        "tooltip": "Semi-axis of the ellipsoidal body along z (mm).",
        "search_aliases": ["body", "height"]
    },
    "appendage.ostium_height_ratio": {
        "name": "Ostium Height Ratio",
        "category": "Generator",
        "subcategory": "Appendage",
        "type": "float",
        "default": 0.8,
        "range": [0.05, 0.95],
        "tooltip": "Ostium plane height as a fraction of the body semi-axis.",
        "search_aliases": ["ostium", "cut", "plane"]
    },
    "appendage.lobe_rings": {
        "name": "Lobe Rings",
        "category": "Generator",
        "subcategory": "Appendage",
        "type": "int",
        "default": 10,
        "range": [2, 200],
        "tooltip": "Mesh rings along the pouch.",
        "search_aliases": ["rings", "lobe", "pouch"]
    },
    "appendage.body_rings": {
        "name": "Body Rings",
        "category": "Generator",
        "subcategory": "Appendage",
        "type": "int",
        "default": 20,
        "range": [3, 400],
        "tooltip": "Mesh rings on the body below the ostium.",
        "search_aliases": ["rings", "body"]
    },

    # ==================== PREPROCESSING ====================
    "preprocessing.register": {
        "name": "Rigid Registration",
        "category": "Preprocessing",
        "subcategory": "Alignment",
        "type": "bool",
        "default": True,
        "tooltip": "ICP-align every sample to the reference sample.",
        "search_aliases": ["icp", "align", "registration"]
    },
    "preprocessing.reference_index": {
        "name": "Reference Sample",
        "category": "Preprocessing",
        "subcategory": "Alignment",
        "type": "int",
        "default": 0,
        "range": [0, 10000],
        "tooltip": "Index of the representative sample the others register to.",
        "search_aliases": ["reference", "representative", "target"]
    },
    "preprocessing.spacing": {
        "name": "Voxel Spacing",
        "category": "Preprocessing",
        "subcategory": "Volumes",
        "type": "float",
        "default": 0.15,
        "range": [0.001, 100.0],
        "tooltip": "Isotropic voxel size of the signed distance volumes (mm).",
        "search_aliases": ["voxel", "spacing", "grid", "resolution"]
    },
    "preprocessing.padding": {
        "name": "Padding",
        "category": "Preprocessing",
        "subcategory": "Volumes",
        "type": "float",
        "default": 0.6,
        "range": [0.0, 1000.0],
        "tooltip": "Margin around the union of surface bounds (mm).",
        "search_aliases": ["padding", "margin", "crop"]
    },
    "preprocessing.smoothing_iterations": {
        "name": "Smoothing Iterations",
        "category": "Preprocessing",
        "subcategory": "Volumes",
        "type": "int",
        "default": 1,
        "range": [0, 50],
        "tooltip": "Narrow-band Gaussian passes; a pass that changes topology is rolled back.",
        "search_aliases": ["smooth", "antialias", "gaussian"]
    },

    # ==================== METRICS ====================
    "metrics.k_max": {
        "name": "Maximum Modes",
        "category": "Metrics",
        "subcategory": "Evaluation",
        "type": "int",
        "default": 10,
        "range": [1, 1000],
        "tooltip": "Metric curves are computed for K = 1..k_max (capped at N - 1).",
        "search_aliases": ["modes", "k", "kmax"]
    },
    "metrics.specificity_samples": {
        "name": "Specificity Samples",
        "category": "Metrics",
        "subcategory": "Evaluation",
        "type": "int",
        "default": 1000,
        "range": [1, 1000000],
        "tooltip": "Shapes drawn from the model per K.",
        "search_aliases": ["specificity", "samples", "monte carlo"]
    },
    "metrics.seed": {
        "name": "Metrics Seed",
        "category": "Metrics",
        "subcategory": "Evaluation",
        "type": "int",
        "default": 0,
        "range": [0, 2 ** 32 - 1],
        "tooltip": "Seed for specificity sampling; K uses seed + K.",
        "search_aliases": ["seed", "random"]
    },
    "metrics.mode_walk_stds": {
        "name": "Mode Walk",
        "category": "Metrics",
        "subcategory": "Visualization",
        "type": "float_list",
        "default": [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0],
        "range": [-10.0, 10.0],
        "tooltip": "Standard deviations at which the first two modes are exported.",
        "search_aliases": ["mode walk", "std", "visualization", "modes"]
    },

    # ==================== VALIDATION ====================
    "validation.enabled": {
        "name": "Validation",
        "category": "Validation",
        "subcategory": "Protocol",
        "type": "bool",
        "default": True,
        "tooltip": "Cluster and run the ostium measurement validation when ground truth has contours.",
        "search_aliases": ["validate", "clinical", "ostium"]
    },
    "validation.clusters": {
        "name": "Clusters",
        "category": "Validation",
        "subcategory": "Clustering",
        "type": "int",
        "default": 4,
        "range": [1, 100],
        "tooltip": "k for k-means.",
        "search_aliases": ["k", "clusters", "kmeans"]
    },
    "validation.restarts": {
        "name": "k-means Restarts",
        "category": "Validation",
        "subcategory": "Clustering",
        "type": "int",
        "default": 10,
        "range": [1, 1000],
        "tooltip": "Best of this many k-means++ starts by inertia.",
        "search_aliases": ["restarts", "n_init"]
    },
    "validation.seed": {
        "name": "Clustering Seed",
        "category": "Validation",
        "subcategory": "Clustering",
        "type": "int",
        "default": 0,
        "range": [0, 2 ** 32 - 1],
        "tooltip": "Seed for k-means++ initialization.",
        "search_aliases": ["seed"]
    },
    "validation.cluster_source": {
        "name": "Cluster Source",
        "category": "Validation",
        "subcategory": "Clustering",
        "type": "str",
        "default": "method",
        "options": {"method": "Each method's correspondences",
                    "distance_transform": "Preprocessed distance volumes"},
        "tooltip": "Which features define the clusters used for validation.",
        "search_aliases": ["source", "distance transform", "dt"]
    },

    # ==================== PARTICLES ====================
    "particles.num_particles": {
        "name": "Particles",
        "category": "Particles",
        "subcategory": "System",
        "type": "int",
        "default": 128,
        "range": [1, 65536],
        "tooltip": "Particles per shape; must be a power of two.",
        "search_aliases": ["m", "particles", "points", "count"]
    },
    "particles.iterations_per_split": {
        "name": "Iterations per Split",
        "category": "Particles",
        "subcategory": "Optimizer",
        "type": "int",
        "default": 40,
        "range": [0, 100000],
        "tooltip": "Optimization iterations after each doubling.",
        "search_aliases": ["iterations", "split"]
    },
    "particles.final_iterations": {
        "name": "Final Iterations",
        "category": "Particles",
        "subcategory": "Optimizer",
        "type": "int",
        "default": 120,
        "range": [0, 100000],
        "tooltip": "Iterations once the target count is reached.",
        "search_aliases": ["iterations", "final"]
    },
    "particles.ensemble_weight": {
        "name": "Ensemble Weight",
        "category": "Particles",
        "subcategory": "Objective",
        "type": "float",
        "default": 1.0,
        "range": [0.0, 1000.0],
        "tooltip": "Weight of the correspondence (ensemble entropy) term.",
        "search_aliases": ["weight", "correspondence", "ensemble"]
    },
    "particles.sampling_weight": {
        "name": "Sampling Weight",
        "category": "Particles",
        "subcategory": "Objective",
        "type": "float",
        "default": 1.0,
        "range": [0.0, 1000.0],
        "tooltip": "Weight of the surface-sampling term.",
        "search_aliases": ["weight", "sampling", "repulsion"]
    },
    "particles.alpha": {
        "name": "Covariance Regularization",
        "category": "Particles",
        "subcategory": "Objective",
        "type": "optional_float",
        "default": None,
        "range": [1e-12, 1e6],
        "tooltip": "mm^2 added to every covariance eigenvalue. Empty = (0.1 x first-level spacing)^2.",
        "search_aliases": ["alpha", "regularization", "covariance"]
    },
    "particles.alpha_decay": {
        "name": "Alpha Decay",
        "category": "Particles",
        "subcategory": "Objective",
        "type": "float",
        "default": 0.5,
        "range": [0.01, 1.0],
        "tooltip": "Alpha multiplier per split level.",
        "search_aliases": ["anneal", "decay"]
    },
    "particles.split_offset": {
        "name": "Split Offset",
        "category": "Particles",
        "subcategory": "System",
        "type": "float",
        "default": 0.2,
        "range": [0.001, 1.0],
        "tooltip": "Split distance as a fraction of the current particle spacing.",
        "search_aliases": ["split", "offset"]
    },
    "particles.step_cap": {
        "name": "Step Cap",
        "category": "Particles",
        "subcategory": "Optimizer",
        "type": "float",
        "default": 0.5,
        "range": [0.01, 10.0],
        "tooltip": "Largest particle move per iteration, in units of its neighbor distance.",
        "search_aliases": ["step", "cap"]
    },
    "particles.max_backtracks": {
        "name": "Backtracks",
        "category": "Particles",
        "subcategory": "Optimizer",
        "type": "int",
        "default": 8,
        "range": [1, 60],
        "tooltip": "Step halvings tried before a level is declared converged.",
        "search_aliases": ["line search", "backtracking"]
    },
    "particles.divergence_window": {
        "name": "Divergence Window",
        "category": "Particles",
        "subcategory": "Optimizer",
        "type": "int",
        "default": 10,
        "range": [1, 1000],
        "tooltip": "Consecutive accepted increases of Q that abort the run.",
        "search_aliases": ["divergence", "abort"]
    },

    # ==================== SPHERICAL ====================
    "spherical.l_max": {
        "name": "Harmonic Degree",
        "category": "Spherical",
        "subcategory": "Expansion",
        "type": "int",
        "default": 12,
        "range": [0, 60],
        "tooltip": "Highest spherical-harmonic degree.",
        "search_aliases": ["lmax", "degree", "harmonics"]
    },
    "spherical.level": {
        "name": "Icosahedron Level",
        "category": "Spherical",
        "subcategory": "Sampling",
        "type": "int",
        "default": 3,
        "range": [0, 7],
        "tooltip": "Subdivision level; 10 x 4^level + 2 points.",
        "search_aliases": ["level", "subdivision", "icosahedron"]
    },
    "spherical.align": {
        "name": "Ellipsoid Alignment",
        "category": "Spherical",
        "subcategory": "Parameterization",
        "type": "bool",
        "default": True,
        "tooltip": "Rotate the parameter sphere onto the first-order ellipsoid axes.",
        "search_aliases": ["align", "ellipsoid", "axes"]
    },

    # ==================== DEFORMATION ====================
    "deform.template": {
        "name": "Atlas Template",
        "category": "Deformation",
        "subcategory": "Atlas",
        "type": "str",
        "default": "sphere",
        "options": {"sphere": "Icosphere at the mean centroid", "mean": "Mean distance-volume surface"},
        "tooltip": "Initial template topology and shape.",
        "search_aliases": ["template", "atlas", "sphere", "mean"]
    },
    "deform.template_level": {
        "name": "Template Level",
        "category": "Deformation",
        "subcategory": "Atlas",
        "type": "int",
        "default": 2,
        "range": [0, 6],
        "tooltip": "Icosphere subdivision of the template.",
        "search_aliases": ["level", "template resolution"]
    },
    "deform.control_points": {
        "name": "Control Points",
        "category": "Deformation",
        "subcategory": "Kernel",
        "type": "int",
        "default": 64,
        "range": [1, 32768],
        "tooltip": "Cube number; placed on a regular grid over the template bounds.",
        "search_aliases": ["control points", "p", "grid"]
    },
    "deform.sigma": {
        "name": "Kernel Width",
        "category": "Deformation",
        "subcategory": "Kernel",
        "type": "optional_float",
        "default": None,
        "range": [1e-6, 1e6],
        "tooltip": "Deformation kernel width (mm). Empty = sigma_fraction x ensemble diagonal.",
        "search_aliases": ["sigma", "kernel", "width"]
    },
    "deform.sigma_fraction": {
        "name": "Kernel Width Fraction",
        "category": "Deformation",
        "subcategory": "Kernel",
        "type": "float",
        "default": 0.15,
        "range": [1e-4, 10.0],
        "tooltip": "Kernel width relative to the ensemble bounding-box diagonal.",
        "search_aliases": ["sigma", "fraction"]
    },
    "deform.sigma_w": {
        "name": "Varifold Width",
        "category": "Deformation",
        "subcategory": "Data Term",
        "type": "optional_float",
        "default": None,
        "range": [1e-6, 1e6],
        "tooltip": "Varifold kernel width (mm). Empty = sigma_w_fraction x ensemble diagonal.",
        "search_aliases": ["varifold", "sigma_w", "data kernel"]
    },
    "deform.sigma_w_fraction": {
        "name": "Varifold Width Fraction",
        "category": "Deformation",
        "subcategory": "Data Term",
        "type": "float",
        "default": 0.08,
        "range": [1e-4, 10.0],
        "tooltip": "Varifold width relative to the ensemble bounding-box diagonal.",
        "search_aliases": ["varifold", "fraction"]
    },
    "deform.steps": {
        "name": "Flow Steps",
        "category": "Deformation",
        "subcategory": "Integration",
        "type": "int",
        "default": 10,
        "range": [1, 1000],
        "tooltip": "Explicit Euler steps on [0, 1].",
        "search_aliases": ["steps", "euler", "integration"]
    },
    "deform.iterations": {
        "name": "Atlas Iterations",
        "category": "Deformation",
        "subcategory": "Optimizer",
        "type": "int",
        "default": 30,
        "range": [0, 100000],
        "tooltip": "Alternating momentum and template/control-point rounds.",
        "search_aliases": ["iterations", "atlas"]
    },
    "deform.noise_fraction": {
        "name": "Data Noise Fraction",
        "category": "Deformation",
        "subcategory": "Data Term",
        "type": "float",
        "default": 0.01,
        "range": [1e-8, 100.0],
        "tooltip": "Varifold noise variance relative to the mean subject self-product.",
        "search_aliases": ["noise", "data weight"]
    },
    "deform.initial_step_fraction": {
        "name": "Initial Step",
        "category": "Deformation",
        "subcategory": "Optimizer",
        "type": "float",
        "default": 0.1,
        "range": [1e-6, 10.0],
        "tooltip": "First step length relative to the kernel width.",
        "search_aliases": ["step", "learning rate"]
    },
    "deform.optimize_template": {
        "name": "Optimize Template",
        "category": "Deformation",
        "subcategory": "Optimizer",
        "type": "bool",
        "default": True,
        "tooltip": "Update template vertices in the shared step.",
        "search_aliases": ["template", "freeze"]
    },
    "deform.optimize_control_points": {
        "name": "Optimize Control Points",
        "category": "Deformation",
        "subcategory": "Optimizer",
        "type": "bool",
        "default": True,
        "tooltip": "Update control points in the shared step.",
        "search_aliases": ["control points", "freeze"]
    },
    "deform.num_points": {
        "name": "Correspondence Points",
        "category": "Deformation",
        "subcategory": "Correspondence",
        "type": "int",
        "default": 128,
        "range": [1, 100000],
        "tooltip": "Template vertices chosen by farthest-point sampling.",
        "search_aliases": ["m", "points", "samples"]
    },
    "deform.sample_seed": {
        "name": "Sampling Seed",
        "category": "Deformation",
        "subcategory": "Correspondence",
        "type": "int",
        "default": 0,
        "range": [0, 2 ** 32 - 1],
        "tooltip": "Seed of the farthest-point sampling start vertex.",
        "search_aliases": ["seed"]
    },
}


def get_parameter_info(key: str) -> dict:
    """Get full info for a parameter by its key."""
    return PARAMETER_DATABASE.get(key, {})


def get_categories() -> list:
    """Get list of all unique categories."""
    return sorted({info.get("category", "Other") for info in PARAMETER_DATABASE.values()})


def get_parameters_by_category(category: str) -> dict:
    return {k: v for k, v in PARAMETER_DATABASE.items() if v.get("category") == category}


def get_section_keys(section: str) -> set:
    """Short keys accepted under one config section, e.g. 'preprocessing'."""
    prefix = section + "."
    return {k[len(prefix):] for k in PARAMETER_DATABASE if k.startswith(prefix)}


def section_defaults(section: str) -> dict:
    prefix = section + "."
    return {k[len(prefix):]: v["default"] for k, v in PARAMETER_DATABASE.items() if k.startswith(prefix)}


def search_parameters(query: str) -> dict:
    """Search parameters by name, category, aliases or key."""
    query = query.lower().strip()
    results = {}
    for key, info in PARAMETER_DATABASE.items():
        haystack = [info.get("name", ""), info.get("category", ""), info.get("subcategory", ""), key]
        haystack += info.get("search_aliases", [])
        if any(query in text.lower() for text in haystack):
            results[key] = info
    return results


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def validate_parameter(key: str, value: Any) -> Tuple[bool, str]:
    """Check one value against its table entry."""
    info = PARAMETER_DATABASE.get(key)
    if info is None:
        return False, f"unknown parameter '{key}'"
    kind = info["type"]
    low, high = info.get("range", [None, None])

    def in_range(v) -> bool:
        return low is None or low <= v <= high

    if kind == "bool":
        ok = isinstance(value, bool)
    elif kind == "int":
        ok = isinstance(value, int) and not isinstance(value, bool) and in_range(value)
    elif kind == "float":
        ok = _is_number(value) and in_range(value)
    elif kind == "optional_float":
        ok = value is None or (_is_number(value) and in_range(value))
    elif kind == "str":
        ok = isinstance(value, str) and ("options" not in info or value in info["options"])
    elif kind == "float_pair":
        ok = (isinstance(value, list) and len(value) == 2 and all(_is_number(v) and in_range(v) for v in value)
              and value[0] <= value[1])
    elif kind == "float_list":
        ok = value is None or (isinstance(value, list) and all(_is_number(v) and in_range(v) for v in value))
    elif kind == "dict":
        ok = value is None or isinstance(value, dict)
    else:
        ok = False

    if ok:
        return True, ""
    expected = kind
    if "options" in info:
        expected += f" in {sorted(info['options'])}"
    elif low is not None:
        expected += f" in [{low}, {high}]"
    return False, f"'{key}' expects {expected}, got {value!r}"
