"""
Clinical - Clustering, contour anchoring, thin-plate-spline propagation,
ellipse measurements and paired t-tests against ground truth.
"""

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy import stats
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score

from constants import AppConstants
from debug import log_debug, log_warning
from errors import ClinicalError
from utils import parallel_map, write_csv
from .shapestats import CorrespondenceModel


# ==================== CLUSTERING ====================

@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float

    @property
    def k(self) -> int:
        return len(self.centers)

    @property
    def cluster_ids(self) -> List[int]:
        return list(range(1, self.k + 1))

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster_id)


def kmeans(features: np.ndarray, k: int = 4, seed: int = 0, restarts: int = 10) -> ClusterAssignment:
    """k-means++ seeded Lloyd iterations, best of `restarts`; labels 1..k numbered by first member."""
    features = np.asarray(features, dtype=float)
    if features.ndim != 2:
        raise ClinicalError("features must be an N x D matrix")
    if not 1 <= k <= len(features):
        raise ClinicalError(f"k={k} needs at least k samples, have {len(features)}")
    km = KMeans(n_clusters=k, init="k-means++", n_init=restarts, random_state=seed).fit(features)

    order = []
    for label in km.labels_:
        if label not in order:
            order.append(label)
    order += [c for c in range(k) if c not in order]
    remap = {old: new + 1 for new, old in enumerate(order)}
    labels = np.array([remap[c] for c in km.labels_], dtype=int)
    centers = km.cluster_centers_[order]
    return ClusterAssignment(labels, centers, float(km.inertia_))


def adjusted_rand(labels_a: Sequence[int], labels_b: Sequence[int]) -> float:
    return float(adjusted_rand_score(labels_a, labels_b))


def cluster_mean_shape(model: CorrespondenceModel, assignment: ClusterAssignment, cluster_id: int) -> np.ndarray:
    members = assignment.members(cluster_id)
    if len(members) == 0:
        raise ClinicalError(f"cluster {cluster_id} is empty")
    return model.points[members].mean(axis=0).ravel()


def cluster_distance_transforms(volumes, k: int = 4, seed: int = 0, restarts: int = 10) -> ClusterAssignment:
    """k-means on flattened signed distance volumes sharing one grid."""
    features = np.stack([np.asarray(v.values, dtype=float).ravel() for v in volumes])
    return kmeans(features, k, seed, restarts)


def match_clusters(labels_a: np.ndarray, labels_b: np.ndarray) -> Dict[int, int]:
    """Hungarian matching of clusters in a to clusters in b by overlap."""
    ids_a, ids_b = np.unique(labels_a), np.unique(labels_b)
    overlap = np.array([[np.sum((labels_a == a) & (labels_b == b)) for b in ids_b] for a in ids_a])
    rows, cols = linear_sum_assignment(-overlap)
    return {int(ids_a[r]): int(ids_b[c]) for r, c in zip(rows, cols)}


def cluster_names(assignment: ClusterAssignment, family_labels: Optional[np.ndarray]) -> Dict[int, str]:
    """Name clusters after the family they mostly hold, when labels exist."""
    names = {c: f"cluster_{c}" for c in assignment.cluster_ids}
    if family_labels is None:
        return names
    for cluster, family in match_clusters(assignment.labels, np.asarray(family_labels)).items():
        names[cluster] = AppConstants.FAMILY_NAMES.get(family, f"family_{family}")
    return names


def cluster_center_agreement(model: CorrespondenceModel, assignment: ClusterAssignment,
                             reference: ClusterAssignment) -> float:
    """Mean point distance between matched cluster means under two partitions."""
    def means(a):
        return np.stack([model.points[a.members(c)].mean(axis=0) for c in a.cluster_ids if len(a.members(c))])
    ours, theirs = means(assignment), means(reference)
    cost = np.array([[np.linalg.norm(x - y, axis=1).mean() for y in theirs] for x in ours])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


# ==================== CONTOUR ANCHORING ====================

@dataclass
class AnchoredContour:
    """Each contour point as p_i + c0 (p_j - p_i) + c1 (p_k - p_i) + c2 n over a correspondence triple."""

    indices: np.ndarray
    coefficients: np.ndarray
    sparse: np.ndarray

    @property
    def offsets(self) -> np.ndarray:
        return self.coefficients

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        p_i, p_j, p_k = (points[self.indices[:, c]] for c in range(3))
        frames = _local_frames(p_i, p_j, p_k)
        return p_i + np.einsum("pab,pb->pa", frames, self.coefficients)


def _local_frames(p_i: np.ndarray, p_j: np.ndarray, p_k: np.ndarray) -> np.ndarray:
    e1 = p_j - p_i
    e2 = p_k - p_i
    normal = np.cross(e1, e2)
    normal /= np.sqrt(np.linalg.norm(normal, axis=1, keepdims=True))
    return np.stack([e1, e2, normal], axis=2)


def mark_contour_on_mean(mean_points: np.ndarray, contour: np.ndarray, neighbors: int = 8) -> AnchoredContour:
    mean_points = np.asarray(mean_points, dtype=float).reshape(-1, 3)
    contour = np.asarray(contour, dtype=float)
    if len(mean_points) < 3:
        raise ClinicalError("anchoring needs at least 3 correspondence points")
    tree = cKDTree(mean_points)
    spacing = float(np.median(tree.query(mean_points, k=2)[0][:, 1]))
    dist, idx = tree.query(contour, k=min(neighbors, len(mean_points)))

    triples = np.empty((len(contour), 3), dtype=int)
    for p in range(len(contour)):
        i = idx[p, 0]
        j = idx[p, 1]
        e1 = mean_points[j] - mean_points[i]
        k = None
        for candidate in idx[p, 2:]:
            e2 = mean_points[candidate] - mean_points[i]
            if np.linalg.norm(np.cross(e1, e2)) > 1e-6 * np.linalg.norm(e1) * np.linalg.norm(e2):
                k = candidate
                break
        if k is None:
            raise ClinicalError(f"contour point {p}: neighbouring correspondences are collinear")
        triples[p] = (i, j, k)

    frames = _local_frames(mean_points[triples[:, 0]], mean_points[triples[:, 1]], mean_points[triples[:, 2]])
    coefficients = np.linalg.solve(frames, (contour - mean_points[triples[:, 0]])[..., None])[..., 0]
    sparse = dist[:, 0] > 2.0 * spacing
    if sparse.any():
        log_warning(f"{int(sparse.sum())} contour point(s) lie farther than 2x the median "
                    f"correspondence spacing ({spacing:.3g} mm) from any correspondence")
    return AnchoredContour(triples, coefficients, sparse)


# ==================== THIN-PLATE SPLINE ====================

class ThinPlateSpline:
    """3D thin-plate spline with kernel U(r) = r and an affine part."""

    def __init__(self, source: np.ndarray, target: np.ndarray, ridge: float = 0.0):
        source = np.asarray(source, dtype=float).reshape(-1, 3)
        target = np.asarray(target, dtype=float).reshape(-1, 3)
        if source.shape != target.shape:
            raise ClinicalError(f"landmark counts differ: {len(source)} vs {len(target)}")
        if len(source) < 4:
            raise ClinicalError("thin-plate spline needs at least 4 landmarks")
        affine_basis = np.hstack([np.ones((len(source), 1)), source])
        if np.linalg.matrix_rank(affine_basis) < 4:
            raise ClinicalError("thin-plate spline landmarks are coplanar")

        self.source = source
        self.regularized = False
        self.ridge = ridge
        kernel = cdist(source, source)
        try:
            self._solve(kernel, affine_basis, target, ridge)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
            self.ridge = 1e-8 * max(float(kernel.mean()), 1.0)
            self.regularized = True
            log_warning(f"singular landmark system; using ridge {self.ridge:.3g}")
            self._solve(kernel, affine_basis, target, self.ridge)

    def _solve(self, kernel, affine_basis, target, ridge):
        m = len(kernel)
        system = np.zeros((m + 4, m + 4))
        system[:m, :m] = kernel + ridge * np.eye(m)
        system[:m, m:] = affine_basis
        system[m:, :m] = affine_basis.T
        rhs = np.vstack([target, np.zeros((4, 3))])
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            solution = scipy.linalg.solve(system, rhs)
        if not np.isfinite(solution).all():
            raise np.linalg.LinAlgError("non-finite spline coefficients")
        self.weights = solution[:m]
        self.affine = solution[m:]

    def transform(self, query: np.ndarray) -> np.ndarray:
        query = np.asarray(query, dtype=float).reshape(-1, 3)
        return cdist(query, self.source) @ self.weights + np.hstack([np.ones((len(query), 1)), query]) @ self.affine


def tps_warp(source: np.ndarray, target: np.ndarray, query: np.ndarray) -> np.ndarray:
    return ThinPlateSpline(source, target).transform(query)


def propagate_contour(anchored: AnchoredContour, mean_points: np.ndarray, sample_points: np.ndarray) -> np.ndarray:
    mean_points = np.asarray(mean_points, dtype=float).reshape(-1, 3)
    sample_points = np.asarray(sample_points, dtype=float).reshape(-1, 3)
    if mean_points.shape != sample_points.shape:
        raise ClinicalError("mean and sample correspondence counts differ")
    return tps_warp(mean_points, sample_points, anchored.evaluate(mean_points))


# ==================== ELLIPSE MEASUREMENTS ====================

@dataclass
class EllipseFit:
    center: np.ndarray
    normal: np.ndarray
    major_axis: np.ndarray
    semi_major: float
    semi_minor: float
    residual_rms: float

    @property
    def max_diameter(self) -> float:
        return 2.0 * self.semi_major

    @property
    def min_diameter(self) -> float:
        return 2.0 * self.semi_minor

    @property
    def area(self) -> float:
        return float(np.pi * self.semi_major * self.semi_minor)

    @property
    def circumference(self) -> float:
        return ramanujan_circumference(self.semi_major, self.semi_minor)


def ramanujan_circumference(a: float, b: float) -> float:
    h = ((a - b) / (a + b)) ** 2
    return float(np.pi * (a + b) * (1.0 + 3.0 * h / (10.0 + np.sqrt(4.0 - 3.0 * h))))


def _direct_conic_fit(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Ellipse-constrained least-squares conic (A, B, C, D, E, F), numerically stable form."""
    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1, s2, s3 = d1.T @ d1, d1.T @ d2, d2.T @ d2
    t = -np.linalg.solve(s3, s2.T)
    m = s1 + s2 @ t
    m = np.array([m[2] / 2.0, -m[1], m[0] / 2.0])
    eigenvalues, eigenvectors = np.linalg.eig(m)
    eigenvectors = np.real(eigenvectors)
    constraint = 4.0 * eigenvectors[0] * eigenvectors[2] - eigenvectors[1] ** 2
    candidates = np.flatnonzero(constraint > 0)
    if len(candidates) == 0:
        raise ClinicalError("no ellipse solution for contour")
    best = candidates[np.argmin(np.abs(eigenvalues[candidates]))]
    a1 = eigenvectors[:, best]
    return np.concatenate([a1, t @ a1])


def fit_ellipse(contour: np.ndarray) -> EllipseFit:
    """Best-fit plane by PCA, then a direct ellipse fit in that plane."""
    points = np.asarray(contour, dtype=float).reshape(-1, 3)
    if len(points) < 5:
        raise ClinicalError(f"ellipse fitting needs >= 5 points, got {len(points)}")
    centroid = points.mean(axis=0)
    _, singular, vt = np.linalg.svd(points - centroid)
    if singular[1] <= 1e-9 * singular[0]:
        raise ClinicalError("contour is degenerate (collinear)")
    e1, e2, normal = vt
    local = np.column_stack([(points - centroid) @ e1, (points - centroid) @ e2])
    scale = float(np.sqrt((local ** 2).sum(axis=1).mean()))
    u = local / scale

    a, b, c, d, e, f = _direct_conic_fit(u[:, 0], u[:, 1])
    if a + c < 0:
        a, b, c, d, e, f = -a, -b, -c, -d, -e, -f
    quad = np.array([[a, b / 2.0], [b / 2.0, c]])
    linear = np.array([d, e])
    center = np.linalg.solve(2.0 * quad, -linear)
    level = -(f + 0.5 * linear @ center)
    eigenvalues, eigenvectors = np.linalg.eigh(quad)
    if level <= 0 or np.any(eigenvalues <= 0):
        raise ClinicalError("fitted conic is not an ellipse")
    semi = np.sqrt(level / eigenvalues)

    offsets = u - center
    radial = np.sqrt(np.einsum("pi,ij,pj->p", offsets, quad, offsets) / level)
    residual = float(np.sqrt(np.mean((radial - 1.0) ** 2)) * np.sqrt(semi[0] * semi[1]) * scale)

    major_2d = eigenvectors[:, 0]
    return EllipseFit(
        center=centroid + scale * (center[0] * e1 + center[1] * e2),
        normal=normal,
        major_axis=major_2d[0] * e1 + major_2d[1] * e2,
        semi_major=float(semi[0] * scale),
        semi_minor=float(semi[1] * scale),
        residual_rms=residual,
    )


def plane_angle(normal_a: np.ndarray, normal_b: np.ndarray) -> float:
    """Angle between two planes in degrees, in [0, 90]."""
    normal_a = np.asarray(normal_a, dtype=float)
    normal_b = np.asarray(normal_b, dtype=float)
    na, nb = np.linalg.norm(normal_a), np.linalg.norm(normal_b)
    if na == 0 or nb == 0:
        raise ClinicalError("plane normal must be nonzero")
    cos = np.clip(abs(normal_a @ normal_b) / (na * nb), 0.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


@dataclass
class MeasurementRecord:
    sample_id: str
    max_mm: float
    min_mm: float
    area_mm2: float
    circ_mm: float
    angle_deg: float
    source: str
    cluster: int = 0

    def value(self, name: str) -> float:
        return float(getattr(self, name))

    def row(self) -> list:
        return [self.sample_id, self.cluster, self.source,
                self.max_mm, self.min_mm, self.area_mm2, self.circ_mm, self.angle_deg]


def measure_contour(contour: np.ndarray, septum_normal: np.ndarray, sample_id: str, source: str,
                    cluster: int = 0) -> MeasurementRecord:
    fit = fit_ellipse(contour)
    return MeasurementRecord(sample_id, fit.max_diameter, fit.min_diameter, fit.area, fit.circumference,
                             plane_angle(fit.normal, septum_normal), source, cluster)


# ==================== STATISTICS ====================

@dataclass
class TTestResult:
    t: float
    p: float
    df: int
    flag: str = ""

    @property
    def passed(self) -> bool:
        return self.p > AppConstants.SIGNIFICANCE_LEVEL


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-tailed paired t-test on a - b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ClinicalError("paired samples must be 1-D sequences of equal length")
    n = len(a)
    if n < 2:
        raise ClinicalError("paired t-test needs n >= 2")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, df)
        return TTestResult(float(np.copysign(np.inf, mean)), 0.0, df, "zero_variance")
    t = mean / (sd / np.sqrt(n))
    return TTestResult(float(t), float(2.0 * stats.t.sf(abs(t), df)), df)


@dataclass
class ValidationResult:
    method: str
    measurements: List[MeasurementRecord]
    reference: List[MeasurementRecord]
    table: Dict[Tuple[str, int], Optional[TTestResult]]
    names: Dict[int, str] = field(default_factory=dict)
    surrogate: str = "contour marked on the cluster mean from the ground-truth ostium ring"

    def pass_count(self) -> int:
        return sum(1 for r in self.table.values() if r is not None and r.passed)

    def skipped(self) -> List[int]:
        return sorted({c for (_, c), r in self.table.items() if r is None})


def compare_measurements(reference: Sequence[MeasurementRecord], estimates: Sequence[MeasurementRecord],
                         min_size: int = 3) -> Dict[Tuple[str, int], Optional[TTestResult]]:
    """Per cluster and measurement t-test, pairing records by sample id."""
    by_id = {r.sample_id: r for r in reference}
    table: Dict[Tuple[str, int], Optional[TTestResult]] = {}
    clusters = sorted({r.cluster for r in estimates})
    for cluster in clusters:
        members = [r for r in estimates if r.cluster == cluster]
        for name in AppConstants.MEASUREMENTS:
            if len(members) < min_size:
                table[(name, cluster)] = None
                continue
            est = [r.value(name) for r in members]
            ref = [by_id[r.sample_id].value(name) for r in members]
            table[(name, cluster)] = paired_ttest(est, ref)
    for cluster in clusters:
        if table[(AppConstants.MEASUREMENTS[0], cluster)] is None:
            log_warning(f"cluster {cluster} has fewer than {min_size} members; t-tests skipped")
    return table


def validate_method(model: CorrespondenceModel, truth, assignment: ClusterAssignment,
                    workers: int = 1) -> ValidationResult:
    """Anchor the ostium on each cluster mean, warp it to members, measure, and t-test."""
    if not truth.has_contours or truth.septum_normals is None:
        raise ClinicalError("ground truth carries no ostium contours")
    index = {sid: i for i, sid in enumerate(truth.sample_ids)}
    try:
        rows = [index[sid] for sid in model.sample_ids]
    except KeyError as e:
        raise ClinicalError(f"sample {e} missing from ground truth") from e

    estimates: List[MeasurementRecord] = []
    reference: List[MeasurementRecord] = []
    for cluster in assignment.cluster_ids:
        members = assignment.members(cluster)
        if len(members) == 0:
            continue
        mean_points = model.points[members].mean(axis=0)
        template = truth.contours[[rows[n] for n in members]].mean(axis=0)
        anchored = mark_contour_on_mean(mean_points, template)

        def measure(n, cluster=cluster, anchored=anchored, mean_points=mean_points):
            gt = rows[n]
            contour = propagate_contour(anchored, mean_points, model.points[n])
            sid = model.sample_ids[n]
            return (measure_contour(contour, truth.septum_normals[gt], sid, model.method, cluster),
                    measure_contour(truth.contours[gt], truth.septum_normals[gt], sid, "ground_truth", cluster))

        for est, ref in parallel_map(measure, list(members), workers):
            estimates.append(est)
            reference.append(ref)
    log_debug(f"{model.method}: measured {len(estimates)} propagated contours")
    table = compare_measurements(reference, estimates)
    return ValidationResult(model.method, estimates, reference, table,
                            cluster_names(assignment, truth.labels))


def write_measurements_csv(results: Sequence[ValidationResult], path: Path):
    rows = []
    if results:
        rows.extend(r.row() for r in sorted(results[0].reference, key=lambda r: r.sample_id))
    for result in results:
        rows.extend(r.row() for r in sorted(result.measurements, key=lambda r: r.sample_id))
    write_csv(path, ["sample_id", "cluster", "source", "max_mm", "min_mm", "area_mm2", "circ_mm", "angle_deg"], rows)


def format_cell(result: Optional[TTestResult]) -> str:
    if result is None:
        return "n/a (n<3)"
    return f"{result.p:.4g} ({'pass' if result.passed else 'fail'})"


def write_pvalue_table(results: Sequence[ValidationResult], path: Path):
    """Rows are (measurement, comparison), columns are clusters by name."""
    columns: List[str] = []
    for result in results:
        for cluster in sorted(result.names):
            if result.names[cluster] not in columns:
                columns.append(result.names[cluster])
    family_order = list(AppConstants.FAMILY_NAMES.values())
    columns.sort(key=lambda n: (family_order.index(n) if n in family_order else len(family_order), n))

    rows = []
    for name in AppConstants.MEASUREMENTS:
        for result in results:
            by_column = {result.names[c]: result.table.get((name, c)) for c in result.names
                         if (name, c) in result.table}
            cells = [format_cell(by_column[col]) if col in by_column else "n/a" for col in columns]
            rows.append([AppConstants.MEASUREMENT_LABELS[name], f"GroundTruth vs {result.method}"] + cells)
    write_csv(path, ["measurement", "comparison"] + columns, rows)
