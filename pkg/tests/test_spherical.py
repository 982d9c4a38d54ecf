"""
Spherical parameterization and harmonic expansion tests.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from analysis.metrics import compactness
from analysis.shapestats import build_pdm
from core.ensembles import Ensemble, gen_box_bump
from core.geometry import PreprocessParams, RigidTransform, TriangleMesh, icosphere, preprocess_ensemble
from errors import ParameterError, SpharmError
from methods.particles import PbmConfig, optimize
from methods.spherical import (SphericalConfig, correspond_spherical, ellipsoid_align, evaluate_ylm, fit_spharm,
                               icosahedron_directions, sample_icosahedron, spherical_parameterize, ylm_basis)


def ellipsoid(axes, level=2):
    sphere = icosphere(level)
    return TriangleMesh(sphere.vertices * np.asarray(axes, dtype=float), sphere.faces)


def test_low_order_harmonic_values():
    assert evaluate_ylm(0, 0, 0.3, 1.1).real == pytest.approx(0.28209479, abs=1e-8)
    assert evaluate_ylm(1, 0, 0.0, 0.0).real == pytest.approx(0.48860251, abs=1e-8)
    assert evaluate_ylm(1, -1, 0.7, 0.2) == pytest.approx(-np.conj(evaluate_ylm(1, 1, 0.7, 0.2)))
    with pytest.raises(ParameterError):
        evaluate_ylm(2, 3, 0.0, 0.0)


def test_harmonics_are_orthonormal_up_to_degree_six():
    nodes, weights = np.polynomial.legendre.leggauss(20)
    phi = 2 * np.pi * np.arange(40) / 40
    theta_grid, phi_grid = np.meshgrid(np.arccos(nodes), phi, indexing="ij")
    w = np.outer(weights, np.full(40, 2 * np.pi / 40)).ravel()
    basis = ylm_basis(6, theta_grid.ravel(), phi_grid.ravel())
    gram = basis.conj().T @ (basis * w[:, None])
    assert np.abs(gram - np.eye(gram.shape[0])).max() <= 1e-6


def test_sphere_parameterization_has_no_distortion():
    sphere = icosphere(2, radius=2.0)
    param = spherical_parameterize(sphere)
    assert param.area_distortion == pytest.approx(1.0, abs=1e-9)
    assert param.spherical_area == pytest.approx(4 * np.pi, rel=1e-9)
    assert np.allclose(param.directions, sphere.vertices / 2.0, atol=1e-12)


def test_parameterization_rejects_non_genus_zero():
    a, b = icosphere(1), icosphere(1, center=(5, 0, 0))
    pair = TriangleMesh(np.vstack([a.vertices, b.vertices]), np.vstack([a.faces, b.faces + a.num_vertices]))
    with pytest.raises(SpharmError, match="genus"):
        spherical_parameterize(pair)


def test_ellipsoid_alignment_puts_longest_axis_on_the_pole():
    mesh = ellipsoid([3.0, 2.0, 1.0])
    aligned = ellipsoid_align(spherical_parameterize(mesh), mesh)
    assert not aligned.ambiguous
    assert aligned.semi_axes[0] > aligned.semi_axes[1] > aligned.semi_axes[2]
    tip = np.argmax(mesh.vertices[:, 0])
    assert abs(np.cos(aligned.theta[tip])) > 0.99
    assert np.allclose(aligned.rotation @ aligned.rotation.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(aligned.rotation) == pytest.approx(1.0)


def test_sphere_alignment_is_flagged_ambiguous():
    mesh = icosphere(2)
    assert ellipsoid_align(spherical_parameterize(mesh), mesh).ambiguous


def test_spharm_reproduces_sphere_exactly():
    sphere = icosphere(2, radius=2.0)
    coeffs = fit_spharm(sphere, spherical_parameterize(sphere), l_max=2)
    assert coeffs.residual_rms < 1e-10
    assert np.allclose(coeffs.coefficient(0, 0), 0.0, atol=1e-10)
    resampled = sample_icosahedron(coeffs, 1)
    assert resampled.shape == (42, 3)
    assert np.allclose(np.linalg.norm(resampled, axis=1), 2.0, atol=1e-9)


def test_spharm_needs_enough_vertices():
    sphere = icosphere(0)
    with pytest.raises(SpharmError):
        fit_spharm(sphere, spherical_parameterize(sphere), l_max=3)


def test_icosahedron_counts():
    for level in range(3):
        assert len(icosahedron_directions(level)) == 10 * 4 ** level + 2


def test_correspond_spherical_is_deterministic():
    meshes = [ellipsoid([3.0, 2.0, 1.2]), ellipsoid([3.2, 2.1, 1.1]), ellipsoid([2.8, 1.9, 1.3])]
    ensemble = Ensemble.from_meshes(meshes)
    config = SphericalConfig(l_max=4, level=1)
    first = correspond_spherical(ensemble, config)
    second = correspond_spherical(ensemble, config, workers=3)
    assert first.model.points.shape == (3, 42, 3)
    assert np.array_equal(first.model.points, second.model.points)
    assert first.ambiguous_samples == []


def test_config_rejects_unknown_settings():
    with pytest.raises(ParameterError):
        SphericalConfig.from_dict({"degree": 4})


def bent_capsule(bend_radius=1.5):
    """Elongated ellipsoid wrapped around an arc; closed and genus-0 but not star-shaped."""
    straight = ellipsoid([3.0, 0.5, 0.5], level=3)
    x, y, z = straight.vertices.T
    angle = x / bend_radius
    rho = bend_radius + y
    return TriangleMesh(np.stack([rho * np.sin(angle), rho * np.cos(angle), z], axis=1), straight.faces)


def test_aligned_ellipsoid_keeps_identity_rotation():
    mesh = ellipsoid([2.0, 1.0, 3.0])
    aligned = ellipsoid_align(spherical_parameterize(mesh), mesh)
    assert np.allclose(aligned.rotation, np.eye(3), atol=1e-6)


def test_ellipsoid_alignment_recovers_a_known_rotation():
    mesh = ellipsoid([2.0, 1.0, 3.0])
    motion = RigidTransform.from_axis_angle([1, 0, 0], 30.0)
    rotated = mesh.transformed(motion)
    aligned = ellipsoid_align(spherical_parameterize(rotated), rotated)
    assert RigidTransform(aligned.rotation, np.zeros(3)).angle_deg() == pytest.approx(30.0, abs=1e-3)
    assert np.allclose(aligned.rotation, motion.rotation.T, atol=1e-6)


def test_parameterization_rejects_non_star_shaped_mesh():
    mesh = bent_capsule()
    assert mesh.is_watertight
    assert mesh.euler_characteristic == 2
    with pytest.raises(SpharmError, match="star-shaped"):
        spherical_parameterize(mesh)


def test_residual_never_grows_with_degree():
    mesh = ellipsoid([3.0, 2.0, 1.0], level=3)
    param = spherical_parameterize(mesh)
    residuals = [fit_spharm(mesh, param, l_max).residual_rms for l_max in range(1, 7)]
    for lower, higher in zip(residuals, residuals[1:]):
        assert higher <= lower + 1e-12
    assert residuals[-1] < residuals[0]


def test_translated_sphere_gains_constant_term():
    sphere = icosphere(2, center=(0.0, 0.0, 1.0))
    coeffs = fit_spharm(sphere, spherical_parameterize(sphere), l_max=1)
    constant = coeffs.coefficient(0, 0)
    assert constant[2].real == pytest.approx(np.sqrt(4 * np.pi), abs=1e-6)
    assert abs(constant[2].imag) <= 1e-6
    assert np.allclose(constant[:2], 0.0, atol=1e-6)


def test_identical_spheres_have_zero_variance():
    ensemble = Ensemble.from_meshes([icosphere(2), icosphere(2), icosphere(2)])
    points = correspond_spherical(ensemble, SphericalConfig(l_max=3, level=1)).model.points
    assert np.abs(points - points[0]).max() <= 1e-12


@pytest.mark.slow
def test_box_bump_is_less_compact_than_particles():
    ensemble, _ = gen_box_bump(8, seed=0, resolution=12)
    prepared = preprocess_ensemble(ensemble, PreprocessParams(register=False, spacing=0.2, padding=0.4,
                                                              smoothing_iterations=0))
    spherical = correspond_spherical(prepared, SphericalConfig(l_max=8, level=3)).model
    particles = optimize(prepared, PbmConfig(num_particles=128, iterations_per_split=10, final_iterations=40),
                         seed=0).model
    assert compactness(build_pdm(spherical), 1) < compactness(build_pdm(particles), 1)
