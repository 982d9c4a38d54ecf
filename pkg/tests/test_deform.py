"""
Deformation atlas tests: kernel flow, varifold distance, exact gradients and templates.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from core.ensembles import Ensemble, ShapeSample, gen_box_bump
from core.geometry import PreprocessParams, SignedDistanceVolume, icosphere, preprocess_ensemble
from errors import DeformationError, ParameterError
from methods.deform import (Atlas, AtlasEstimator, DeformConfig, DeformationParams, build_template,
                            correspond_deform, deformation_field, estimate_atlas, farthest_point_sample, flow,
                            gaussian_kernel, mean_shape_template, varifold_distance, varifold_sqdist)


def brute_force_product(a, b, sigma_w):
    total = 0.0
    for ck, nk in zip(a.face_centers, a.area_normals):
        for cl, nl in zip(b.face_centers, b.area_normals):
            kernel = np.exp(-np.sum((ck - cl) ** 2) / sigma_w ** 2)
            total += kernel * np.dot(nk, nl) ** 2 / (np.linalg.norm(nk) * np.linalg.norm(nl))
    return total


def central_difference(func, x, h=1e-5):
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[index] = h
        grad[index] = (func(x + step) - func(x - step)) / (2 * h)
    return grad


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def small_config(**changes):
    settings = dict(control_points=8, sigma=1.0, sigma_w=0.5, steps=5, iterations=3, num_points=16)
    settings.update(changes)
    return DeformConfig(**settings)


def test_gaussian_kernel_value():
    value = gaussian_kernel(np.zeros((1, 3)), np.array([[1.0, 1.0, 0.0]]), 2.0)[0, 0]
    assert value == pytest.approx(np.exp(-0.5))


def test_deformation_field_sums_kernel_weighted_momenta():
    params = DeformationParams(np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]),
                               np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]), 1.0)
    x = np.array([[[1.0, 0.0, 0.0]] * 5] * 2)
    v = deformation_field(params, x)
    assert v.shape == (2, 5, 3)
    assert v[1, 4] == pytest.approx([np.exp(-1.0), 2.0 * np.exp(-4.0), 0.0])


def test_zero_momenta_flow_is_identity():
    points = icosphere(1).vertices
    params = DeformationParams(np.zeros((4, 3)), np.zeros((4, 3)), 1.0)
    assert np.array_equal(flow(params, points, steps=4), points)


def test_unstable_flow_is_reported():
    params = DeformationParams(np.zeros((1, 3)), np.array([[100.0, 0.0, 0.0]]), 1.0)
    with pytest.raises(DeformationError):
        flow(params, np.zeros((1, 3)), steps=2)


def test_varifold_matches_brute_force_double_sum():
    a = icosphere(0, radius=1.0)
    b = icosphere(0, radius=1.3, center=(0.2, -0.1, 0.05))
    sigma_w = 0.7
    expected = (brute_force_product(a, a, sigma_w) - 2 * brute_force_product(a, b, sigma_w)
                + brute_force_product(b, b, sigma_w))
    assert varifold_sqdist(a, b, sigma_w) == pytest.approx(expected, abs=1e-12 * max(1.0, abs(expected)))


def test_varifold_is_symmetric_and_orientation_free():
    a = icosphere(1)
    b = icosphere(1, radius=1.2)
    assert varifold_distance(a, a, 0.5) == 0.0
    # 1e-9 holds on d^2; the square root lifts rounding of <A,A> to ~1e-7 in d
    assert varifold_sqdist(a, a, 0.5) == pytest.approx(0.0, abs=1e-9)
    assert varifold_sqdist(a, a.flipped(), 0.5) == pytest.approx(0.0, abs=1e-9)
    assert varifold_distance(a, a.flipped(), 0.5) == pytest.approx(0.0, abs=1e-6)
    assert varifold_distance(a, b, 0.5) == pytest.approx(varifold_distance(b, a, 0.5), rel=1e-12)
    with pytest.raises(ParameterError):
        varifold_distance(a, b, 0.0)


def test_subject_gradient_matches_central_differences():
    targets = [icosphere(1, radius=1.0), icosphere(1, radius=1.25, center=(0.1, 0.0, 0.0))]
    template = icosphere(1, radius=1.1)
    estimator = AtlasEstimator(Ensemble.from_meshes(targets), template, small_config())
    rng = np.random.default_rng(0)
    momenta = 0.05 * rng.normal(size=estimator.control_points.shape)
    x0, q0 = estimator.template, estimator.control_points

    _, _, g_template, g_control, g_momenta = estimator.subject_gradient(1, x0, q0, momenta)
    numeric_momenta = central_difference(lambda m: estimator.subject_energy(1, x0, q0, m)[0], momenta)
    numeric_control = central_difference(lambda q: estimator.subject_energy(1, x0, q, momenta)[0], q0)
    numeric_template = central_difference(lambda x: estimator.subject_energy(1, x, q0, momenta)[0], x0)
    assert relative_error(g_momenta, numeric_momenta) <= 1e-4
    assert relative_error(g_control, numeric_control) <= 1e-4
    assert relative_error(g_template, numeric_template) <= 1e-4


def test_identical_shapes_need_no_momenta():
    sphere = icosphere(1)
    ensemble = Ensemble.from_meshes([sphere, sphere, sphere])
    atlas = estimate_atlas(ensemble, sphere, small_config())
    assert np.abs(atlas.momenta).max() <= 1e-8


def test_atlas_fit_lowers_objective_and_round_trips(tmp_path):
    targets = [icosphere(1, radius=r) for r in (0.9, 1.0, 1.15)]
    atlas = estimate_atlas(Ensemble.from_meshes(targets), icosphere(1, radius=1.0), small_config(iterations=4))
    assert atlas.trace[-1] <= atlas.trace[0]
    atlas.save(tmp_path)
    loaded = Atlas.load(tmp_path)
    assert loaded.sample_ids == atlas.sample_ids
    assert np.allclose(loaded.momenta, atlas.momenta)

    result = correspond_deform(atlas, num_points=16, seed=0)
    assert result.model.points.shape == (3, 16, 3)
    assert len(np.unique(result.template_points, axis=0)) == 16


def test_farthest_point_sample_bounds():
    points = icosphere(1).vertices
    chosen = farthest_point_sample(points, 10, seed=2)
    assert len(set(chosen.tolist())) == 10
    with pytest.raises(ParameterError):
        farthest_point_sample(points, 100)


def test_config_requires_cube_control_points():
    with pytest.raises(ParameterError):
        DeformConfig.from_dict({"control_points": 10})
    with pytest.raises(ParameterError):
        DeformConfig.from_dict({"template": "torus"})


def test_mean_shape_template_sits_on_mean_surface():
    samples = []
    for i, radius in enumerate((0.9, 1.1)):
        sdf = SignedDistanceVolume.from_function(lambda p, r=radius: np.linalg.norm(p, axis=1) - r,
                                                 [-1.6] * 3, [1.6] * 3, 0.1)
        samples.append(ShapeSample(f"s{i}", sdf.to_mesh(), sdf))
    template = mean_shape_template(Ensemble(tuple(samples), world_frame=True), level=2)
    center = template.vertices.mean(axis=0)
    assert np.allclose(np.linalg.norm(template.vertices - center, axis=1), 1.0, atol=0.02)


def test_data_term_is_scaled_by_noise():
    targets = [icosphere(1, radius=1.0), icosphere(1, radius=1.2)]
    template = icosphere(1, radius=1.1)
    estimator = AtlasEstimator(Ensemble.from_meshes(targets), template, small_config())
    zero = np.zeros_like(estimator.control_points)
    energy, data = estimator.subject_energy(1, estimator.template, estimator.control_points, zero)
    expected = varifold_sqdist(template, targets[1], estimator.sigma_w) / estimator.noise
    assert data == pytest.approx(expected, rel=1e-9)
    assert energy == pytest.approx(data, rel=1e-12)


def data_terms(estimator):
    return np.array([estimator.subject_energy(i, estimator.template, estimator.control_points,
                                              estimator.momenta[i])[1] for i in range(len(estimator.targets))])


@pytest.mark.slow
def test_two_spheres_data_terms_drop_by_ninety_percent():
    targets = [icosphere(2, radius=1.0), icosphere(2, radius=1.2)]
    config = DeformConfig(control_points=27, steps=10, iterations=40, template_level=2)
    estimator = AtlasEstimator(Ensemble.from_meshes(targets), icosphere(2, radius=1.1), config)
    before = data_terms(estimator)
    estimator.run()
    after = data_terms(estimator)
    assert np.all(after < 0.1 * before)


@pytest.mark.slow
def test_mean_template_beats_sphere_template_on_box_bump():
    ensemble, _ = gen_box_bump(4, seed=0, resolution=8)
    prepared = preprocess_ensemble(ensemble, PreprocessParams(register=False, spacing=0.25, padding=0.5,
                                                              smoothing_iterations=0))
    final = {}
    for template in ("sphere", "mean"):
        config = DeformConfig(template=template, control_points=27, iterations=10, template_level=2)
        final[template] = estimate_atlas(prepared, build_template(prepared, config), config).trace[-1]
    assert final["mean"] < final["sphere"]
