"""
Particle correspondence tests: entropy terms, analytic gradients and small optimizations.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from analysis.shapestats import build_pdm
from core.ensembles import Ensemble, ShapeSample, gen_box_bump
from core.geometry import PreprocessParams, SignedDistanceVolume, preprocess_ensemble
from errors import ParameterError
from methods.particles import (PbmConfig, ensemble_entropy, ensemble_entropy_gradient, initialize_particles,
                               optimize, sampling_entropy, sampling_entropy_gradient, write_trace_csv)


def central_difference(func, x, h=1e-6):
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[index] = h
        grad[index] = (func(x + step) - func(x - step)) / (2 * h)
    return grad


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def sphere_ensemble(radii, spacing=0.15):
    samples = []
    for i, radius in enumerate(radii):
        sdf = SignedDistanceVolume.from_function(lambda p, r=radius: np.linalg.norm(p, axis=1) - r,
                                                 [-1.6] * 3, [1.6] * 3, spacing)
        samples.append(ShapeSample(f"sphere_{i}", sdf.to_mesh(), sdf))
    return Ensemble(tuple(samples), world_frame=True)


def test_ensemble_entropy_matches_dense_log_determinant():
    positions = np.random.default_rng(0).normal(size=(4, 2, 3))
    alpha = 0.05
    y = positions.reshape(4, -1)
    y = y - y.mean(axis=0)
    covariance = y.T @ y / 3
    _, logdet = np.linalg.slogdet(alpha * np.eye(6) + covariance)
    assert ensemble_entropy(positions, alpha) == pytest.approx(0.5 * logdet, rel=1e-10)


def test_ensemble_entropy_gradient_matches_central_differences():
    positions = np.random.default_rng(1).normal(size=(5, 3, 3))
    alpha = 0.1
    numeric = central_difference(lambda p: ensemble_entropy(p, alpha), positions)
    assert relative_error(ensemble_entropy_gradient(positions, alpha), numeric) <= 1e-4


def test_sampling_entropy_gradient_matches_central_differences():
    points = np.random.default_rng(2).normal(size=(12, 3))
    numeric = central_difference(sampling_entropy, points)
    assert relative_error(sampling_entropy_gradient(points), numeric) <= 1e-4


def test_sampling_entropy_prefers_spread_particles():
    rng = np.random.default_rng(3)
    spread = rng.normal(size=(16, 3))
    clumped = spread.copy()
    clumped[:8] = clumped[0] + 1e-3 * rng.normal(size=(8, 3))
    assert sampling_entropy(spread) < sampling_entropy(clumped)


def test_identical_shapes_have_zero_ensemble_gradient():
    shape = np.random.default_rng(4).normal(size=(6, 3))
    positions = np.stack([shape] * 4)
    assert np.allclose(ensemble_entropy_gradient(positions, 0.01), 0.0, atol=1e-12)


def test_config_requires_power_of_two():
    with pytest.raises(ParameterError):
        PbmConfig.from_dict({"num_particles": 6})
    with pytest.raises(ParameterError):
        PbmConfig.from_dict({"particle_count": 8})
    assert PbmConfig.from_dict({"num_particles": 1}).num_particles == 1


def test_initialize_splits_to_the_requested_count():
    ensemble = sphere_ensemble([1.0, 1.2])
    system = initialize_particles(ensemble, PbmConfig(num_particles=4, iterations_per_split=2), seed=0)
    assert system.positions.shape == (2, 4, 3)
    assert system.sample_ids == ("sphere_0", "sphere_1")
    assert system.surface_error() <= 1e-3 * 0.15 + 1e-12


def test_optimize_keeps_particles_on_surfaces(tmp_path):
    ensemble = sphere_ensemble([0.9, 1.0, 1.1])
    config = PbmConfig(num_particles=8, iterations_per_split=4, final_iterations=6)
    result = optimize(ensemble, config, seed=0)
    assert result.model.points.shape == (3, 8, 3)
    assert result.system.surface_error() <= 1e-3 * 0.15 + 1e-12
    radii = np.linalg.norm(result.model.points, axis=2)
    assert np.allclose(radii, np.array([0.9, 1.0, 1.1])[:, None], atol=0.03)

    by_level = {}
    for _, m, _, _, q in result.trace:
        by_level.setdefault(m, []).append(q)
    assert sorted(by_level) == [1, 2, 4, 8]
    for values in by_level.values():
        for before, after in zip(values, values[1:]):
            assert after <= before + 1e-12 * max(1.0, abs(before))

    write_trace_csv(result.trace, tmp_path / "iterations.csv")
    header = (tmp_path / "iterations.csv").read_text().splitlines()[0]
    assert header == "iter,particles,H_Z,sum_H_X,Q"


def test_identical_shapes_keep_zero_particle_variance():
    ensemble = sphere_ensemble([1.0, 1.0, 1.0])
    result = optimize(ensemble, PbmConfig(num_particles=4, iterations_per_split=3, final_iterations=3), seed=5)
    points = result.model.points
    assert np.abs(points - points[0]).max() <= 1e-9


def test_two_shape_ensemble_entropy_matches_closed_form():
    positions = np.zeros((2, 1, 3))
    positions[1, 0, 0] = 2.0
    alpha = 0.3
    # one nonzero covariance eigenvalue (2.0) and two at zero
    expected = 0.5 * (np.log(2.0 + alpha) + 2 * np.log(alpha))
    assert ensemble_entropy(positions, alpha) == pytest.approx(expected, abs=1e-9)
    assert ensemble_entropy(positions, 2 * alpha) > ensemble_entropy(positions, alpha)


def test_identical_shapes_reach_the_alpha_floor():
    shape = np.random.default_rng(6).normal(size=(5, 3))
    alpha = 0.02
    assert ensemble_entropy(np.stack([shape] * 3), alpha) == pytest.approx(0.5 * 15 * np.log(alpha), abs=1e-9)


def test_entropy_terms_ignore_labelling_order():
    rng = np.random.default_rng(7)
    positions = rng.normal(size=(4, 6, 3))
    shape_order = rng.permutation(4)
    particle_order = rng.permutation(6)
    shuffled = positions[shape_order][:, particle_order]
    assert ensemble_entropy(shuffled, 0.1) == pytest.approx(ensemble_entropy(positions, 0.1), rel=1e-12)
    assert sampling_entropy(positions[0, particle_order]) == pytest.approx(sampling_entropy(positions[0]),
                                                                           rel=1e-12)


def test_tetrahedron_beats_a_clustered_cap():
    tetrahedron = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float) / np.sqrt(3.0)
    angles = np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
    ring = np.stack([np.sin(0.3) * np.cos(angles), np.sin(0.3) * np.sin(angles), np.full(3, np.cos(0.3))],
                    axis=1)
    cap = np.vstack([[0.0, 0.0, 1.0], ring])
    assert sampling_entropy(tetrahedron) < sampling_entropy(cap)


def test_separating_a_pair_lowers_sampling_entropy():
    values = [sampling_entropy(np.array([[0.0, 0.0, 0.0], [d, 0.0, 0.0]])) for d in (1.0, 10.0, 100.0)]
    assert values[0] > values[1] > values[2]


def test_four_particles_spread_over_a_sphere():
    ensemble = sphere_ensemble([1.0, 1.0])
    system = initialize_particles(ensemble, PbmConfig(num_particles=4, iterations_per_split=20), seed=1)
    ideal = np.sqrt(4 * np.pi / 4)
    for points in system.positions:
        distances = np.linalg.norm(points[:, None] - points[None], axis=2)
        assert distances[np.triu_indices(4, 1)].min() >= 0.5 * ideal


def test_identical_shapes_are_covered_without_large_gaps():
    ensemble = sphere_ensemble([1.0, 1.0, 1.0])
    config = PbmConfig(num_particles=16, iterations_per_split=10, final_iterations=20)
    points = optimize(ensemble, config, seed=2).model.points
    assert points.var(axis=0).sum(axis=1).max() < 1e-4

    directions = np.random.default_rng(8).normal(size=(2000, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    gaps = np.linalg.norm(directions[:, None] - points[0][None], axis=2).min(axis=1)
    assert gaps.max() < 2 * np.sqrt(4 * np.pi / 16)


def test_optimize_is_reproducible_for_a_seed():
    ensemble = sphere_ensemble([0.9, 1.1])
    config = PbmConfig(num_particles=4, iterations_per_split=3, final_iterations=4)
    first = optimize(ensemble, config, seed=11)
    second = optimize(ensemble, config, seed=11, workers=2)
    assert np.array_equal(first.model.points, second.model.points)
    assert first.trace == second.trace


def test_single_particle_has_finite_objective():
    ensemble = sphere_ensemble([0.9, 1.1])
    result = optimize(ensemble, PbmConfig(num_particles=1, iterations_per_split=2, final_iterations=2), seed=0)
    assert result.model.points.shape == (2, 1, 3)
    assert all(np.isfinite(row[4]) for row in result.trace)


@pytest.mark.slow
def test_box_bump_mode_tracks_bump_position():
    ensemble, truth = gen_box_bump(8, seed=0, resolution=12)
    prepared = preprocess_ensemble(ensemble, PreprocessParams(register=False, spacing=0.2, padding=0.4,
                                                              smoothing_iterations=0))
    config = PbmConfig(num_particles=128, iterations_per_split=10, final_iterations=40)
    model = optimize(prepared, config, seed=0).model
    pdm = build_pdm(model)
    scores = np.array([pdm.project(shape, 1)[0] for shape in model.points])
    r = np.corrcoef(scores, truth.parameter("bump_fraction"))[0, 1]
    assert abs(r) > 0.99
