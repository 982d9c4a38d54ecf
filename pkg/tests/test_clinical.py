"""
Clinical validation tests: clustering, contour anchoring, spline warps,
ellipse measurements and paired t-tests.
"""

import dataclasses
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from analysis.clinical import (ClusterAssignment, MeasurementRecord, ThinPlateSpline, adjusted_rand,
                               cluster_mean_shape, cluster_names, compare_measurements, fit_ellipse, format_cell,
                               kmeans, mark_contour_on_mean, paired_ttest, plane_angle, propagate_contour,
                               ramanujan_circumference, tps_warp, validate_method, write_measurements_csv,
                               write_pvalue_table)
from analysis.shapestats import CorrespondenceModel
from core.ensembles import gen_appendage
from core.geometry import RigidTransform
from errors import ClinicalError


def ring(a, b, count=64, rotation=None):
    angles = 2 * np.pi * np.arange(count) / count
    points = np.stack([a * np.cos(angles), b * np.sin(angles), np.zeros(count)], axis=1)
    return points if rotation is None else rotation.apply(points)


def blobs(seed=0):
    rng = np.random.default_rng(seed)
    centers = np.array([[0, 0], [10, 0], [0, 10], [10, 10]], dtype=float)
    truth = np.repeat(np.arange(4), 6)
    return centers[truth] + rng.normal(scale=1.0, size=(24, 2)), truth


# ==================== CLUSTERING ====================

def test_kmeans_recovers_separated_blobs():
    features, truth = blobs()
    assignment = kmeans(features, k=4, seed=0)
    assert adjusted_rand(assignment.labels, truth) == pytest.approx(1.0)
    assert assignment.labels[0] == 1
    assert assignment.cluster_ids == [1, 2, 3, 4]
    again = kmeans(features, k=4, seed=0)
    assert np.array_equal(assignment.labels, again.labels)


def test_kmeans_with_one_cluster_per_sample():
    features, _ = blobs()
    assignment = kmeans(features[:5], k=5)
    assert assignment.inertia == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ClinicalError):
        kmeans(features[:3], k=4)


def test_cluster_means_and_names():
    points = np.arange(4 * 2 * 3, dtype=float).reshape(4, 2, 3)
    model = CorrespondenceModel(points)
    assignment = ClusterAssignment(np.array([1, 1, 2, 3]), np.zeros((4, 1)), 0.0)
    assert np.allclose(cluster_mean_shape(model, assignment, 1), points[:2].mean(axis=0).ravel())
    assert np.allclose(cluster_mean_shape(model, assignment, 3), points[3].ravel())
    with pytest.raises(ClinicalError, match="empty"):
        cluster_mean_shape(model, assignment, 4)
    names = cluster_names(assignment, np.array([2, 2, 4, 1]))
    assert names[1] == "ChickenWing"
    assert names[2] == "Cactus"
    assert names[3] == "Cauliflower"
    assert names[4] == "cluster_4"


# ==================== CONTOURS AND WARPS ====================

def test_anchoring_round_trip_on_the_mean():
    rng = np.random.default_rng(1)
    mean_points = rng.normal(size=(40, 3)) * 5.0
    contour = ring(2.0, 1.5) + [0.3, 0.1, 0.2]
    anchored = mark_contour_on_mean(mean_points, contour)
    assert len(anchored.indices) == 64
    assert np.allclose(anchored.evaluate(mean_points), contour, atol=1e-9)

    on_points = mark_contour_on_mean(mean_points, mean_points[:6])
    assert np.allclose(on_points.offsets, 0.0, atol=1e-12)


def test_thin_plate_spline_interpolates_landmarks():
    rng = np.random.default_rng(2)
    source = rng.normal(size=(10, 3))
    target = source + 0.3 * rng.normal(size=(10, 3))
    spline = ThinPlateSpline(source, target)
    assert np.allclose(spline.transform(source[3]), target[3], atol=1e-9)
    assert np.allclose(spline.transform(source), target, atol=1e-9)
    assert not spline.regularized


def test_thin_plate_spline_reproduces_affine_maps():
    rng = np.random.default_rng(3)
    source = rng.normal(size=(12, 3))
    matrix = np.array([[1.2, 0.1, 0.0], [0.0, 0.9, 0.3], [0.2, 0.0, 1.1]])
    offset = np.array([1.0, -2.0, 0.5])
    spline = ThinPlateSpline(source, source @ matrix.T + offset)
    query = rng.normal(size=(20, 3)) * 3.0
    assert np.allclose(spline.transform(query), query @ matrix.T + offset, atol=1e-9)
    assert np.abs(spline.weights).max() < 1e-9
    assert np.allclose(tps_warp(source, source, query), query, atol=1e-9)


def test_thin_plate_spline_rejects_coplanar_landmarks():
    flat = np.column_stack([np.random.default_rng(4).normal(size=(8, 2)), np.zeros(8)])
    with pytest.raises(ClinicalError, match="coplanar"):
        ThinPlateSpline(flat, flat)
    with pytest.raises(ClinicalError):
        ThinPlateSpline(flat[:3], flat[:3])


def test_contour_follows_rigid_motion():
    rng = np.random.default_rng(5)
    mean_points = rng.normal(size=(30, 3)) * 4.0
    anchored = mark_contour_on_mean(mean_points, ring(1.5, 1.0))
    motion = RigidTransform.from_axis_angle([1, 1, 0], 30.0, [2.0, 0.0, 1.0])
    moved = propagate_contour(anchored, mean_points, motion.apply(mean_points))
    assert np.allclose(moved, motion.apply(anchored.evaluate(mean_points)), atol=1e-6)
    unchanged = propagate_contour(anchored, mean_points, mean_points)
    assert np.allclose(unchanged, anchored.evaluate(mean_points), atol=1e-9)


# ==================== MEASUREMENTS ====================

def test_circle_measurements():
    fit = fit_ellipse(ring(5.0, 5.0))
    assert fit.max_diameter == pytest.approx(10.0, abs=1e-6)
    assert fit.min_diameter == pytest.approx(10.0, abs=1e-6)
    assert fit.area == pytest.approx(25 * np.pi, abs=1e-6)
    assert fit.circumference == pytest.approx(10 * np.pi, abs=1e-6)
    assert fit.residual_rms < 1e-9


def test_ellipse_measurements_are_rigid_invariant():
    fit = fit_ellipse(ring(2.0, 1.0))
    assert fit.area == pytest.approx(2 * np.pi, abs=1e-6)
    assert fit.circumference == pytest.approx(9.68845, abs=1e-3)
    assert ramanujan_circumference(2.0, 1.0) == pytest.approx(9.68845, abs=1e-3)
    motion = RigidTransform.from_axis_angle([0.2, 1.0, 0.4], 57.0, [3.0, -1.0, 8.0])
    moved = fit_ellipse(ring(2.0, 1.0, rotation=motion)[::-1])
    assert moved.max_diameter == pytest.approx(fit.max_diameter, abs=1e-8)
    assert moved.min_diameter == pytest.approx(fit.min_diameter, abs=1e-8)
    assert np.allclose(moved.center, [3.0, -1.0, 8.0], atol=1e-8)


def test_ellipse_fit_rejects_degenerate_rings():
    with pytest.raises(ClinicalError):
        fit_ellipse(ring(2.0, 1.0)[:4])
    line = np.column_stack([np.linspace(0, 1, 10), np.zeros(10), np.zeros(10)])
    with pytest.raises(ClinicalError, match="collinear"):
        fit_ellipse(line)


def test_plane_angles():
    assert plane_angle([1, 0, 0], [1, 1, 0]) == pytest.approx(45.0, abs=1e-9)
    assert plane_angle([0, 0, 1], [0, 0, -3]) == pytest.approx(0.0, abs=1e-9)
    assert plane_angle([0, 0, 1], [1, 0, 0]) == pytest.approx(90.0, abs=1e-9)
    with pytest.raises(ClinicalError):
        plane_angle([0, 0, 0], [1, 0, 0])


# ==================== STATISTICS ====================

def test_paired_ttest_known_values():
    b = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
    a = b + np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    result = paired_ttest(a, b)
    assert result.t == pytest.approx(4.242640687, abs=1e-8)
    assert result.df == 4
    assert result.p == pytest.approx(0.0132, abs=1e-4)
    assert not result.passed
    swapped = paired_ttest(b, a)
    assert swapped.t == pytest.approx(-result.t)
    assert swapped.p == pytest.approx(result.p)


def test_paired_ttest_matches_scipy():
    rng = np.random.default_rng(6)
    for _ in range(20):
        a, b = rng.normal(size=8), rng.normal(size=8)
        expected = stats.ttest_rel(a, b)
        result = paired_ttest(a, b)
        assert result.t == pytest.approx(expected.statistic, abs=1e-9)
        assert result.p == pytest.approx(expected.pvalue, abs=1e-6)


def test_paired_ttest_degenerate_differences():
    same = paired_ttest([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert (same.t, same.p) == (0.0, 1.0)
    shifted = paired_ttest([2.0, 3.0, 4.0], [1.0, 2.0, 3.0])
    assert shifted.p == 0.0
    assert shifted.flag == "zero_variance"
    with pytest.raises(ClinicalError):
        paired_ttest([1.0], [2.0])


def test_biased_measurements_fail_and_small_clusters_skip():
    rng = np.random.default_rng(7)
    reference, estimates = [], []
    for i in range(30):
        values = rng.uniform(10, 20, size=5)
        reference.append(MeasurementRecord(f"s{i}", *values, "ground_truth", cluster=1))
        noisy = values + rng.normal(scale=0.5, size=5)
        noisy[0] += 2.0
        estimates.append(MeasurementRecord(f"s{i}", *noisy, "method", cluster=1))
    estimates[0].cluster = 2
    estimates[1].cluster = 2
    table = compare_measurements(reference, estimates)
    assert table[("max_mm", 1)].p < 0.01
    assert table[("max_mm", 2)] is None
    assert format_cell(None) == "n/a (n<3)"
    assert format_cell(table[("max_mm", 1)]).endswith("(fail)")


def test_validation_recovers_ground_truth_contours(tmp_path):
    ensemble, truth = gen_appendage(12, seed=2, params={"lobe_rings": 4, "body_rings": 5})
    model = CorrespondenceModel(np.stack([m.vertices for m in ensemble.meshes]), "vertices", ensemble.ids)
    assignment = ClusterAssignment(np.asarray(truth.labels), np.zeros((4, 1)), 0.0)
    result = validate_method(model, truth, assignment)

    assert len(result.table) == 5 * 4
    assert result.skipped() == []
    assert result.names == {1: "Cauliflower", 2: "ChickenWing", 3: "WindSock", 4: "Cactus"}
    by_id = {r.sample_id: r for r in result.reference}
    for record in result.measurements:
        for name in ("max_mm", "min_mm", "area_mm2", "circ_mm", "angle_deg"):
            assert record.value(name) == pytest.approx(by_id[record.sample_id].value(name), abs=1e-5)

    write_measurements_csv([result], tmp_path / "measurements.csv")
    write_pvalue_table([result], tmp_path / "pvalues.csv")
    measurements = (tmp_path / "measurements.csv").read_text().splitlines()
    assert measurements[0] == "sample_id,cluster,source,max_mm,min_mm,area_mm2,circ_mm,angle_deg"
    assert len(measurements) == 1 + 2 * 12
    pvalues = (tmp_path / "pvalues.csv").read_text().splitlines()
    assert pvalues[0] == "measurement,comparison,Cauliflower,ChickenWing,WindSock,Cactus"
    assert len(pvalues) == 1 + 5


def test_validation_needs_contours():
    ensemble, truth = gen_appendage(4, seed=0)
    model = CorrespondenceModel(np.stack([m.vertices for m in ensemble.meshes]), "vertices", ensemble.ids)
    bare = dataclasses.replace(truth, contours=None)
    with pytest.raises(ClinicalError, match="contours"):
        validate_method(model, bare, ClusterAssignment(np.asarray(truth.labels), np.zeros((4, 1)), 0.0))
