import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from oracles import covariance_plane_normal, horn_rotation
from selfcal.errors import DegenerateFitError
from selfcal.fitting import (Plane, arun_fit, fit_plane_svd, plane_distances, pose_to_vector,
                             vector_to_pose)


def test_canonical_plane():
    p = fit_plane_svd([(0, 0, 0), (1, 0, 0), (0, 1, 0)])
    assert np.allclose(np.abs(p.normal), [0, 0, 1]) and p.d == pytest.approx(0.0)


def test_table_height_plane(rng):
    pts = np.column_stack([rng.uniform(-0.4, 0.3, 50), rng.uniform(-1.35, -0.65, 50),
                           np.full(50, 0.67)])
    p = fit_plane_svd(pts)
    assert p.normal == pytest.approx([0, 0, 1], abs=1e-12)
    assert p.d == pytest.approx(-0.67, abs=1e-12)


def test_matches_covariance_oracle(rng):
    for _ in range(20):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        basis = np.linalg.svd(n[None, :])[2][1:]
        pts = rng.normal(size=(200, 2)) @ basis + 0.3 * n + rng.normal(0, 1e-3, (200, 1)) * n
        got = fit_plane_svd(pts).normal
        ref = covariance_plane_normal(pts)
        assert min(np.linalg.norm(got - ref), np.linalg.norm(got + ref)) < 1e-9


@pytest.mark.parametrize("pts", [[(0, 0, 0), (1, 1, 1)], [(0, 0, 0), (1, 1, 1), (2, 2, 2)],
                                 [(1, 2, 3)] * 5])
def test_degenerate_inputs(pts):
    with pytest.raises(DegenerateFitError):
        fit_plane_svd(pts)


def test_plane_distances_zero_on_plane(rng):
    pts = np.column_stack([rng.normal(size=(30, 2)), np.zeros(30)])
    assert np.max(np.abs(plane_distances(pts))) < 1e-14


def test_plane_normalises():
    p = Plane((0, 0, 2), -1.0)
    assert p.normal == pytest.approx([0, 0, 1])
    with pytest.raises(DegenerateFitError):
        Plane((0, 0, 0), 1.0)


def random_pose(rng):
    T = np.eye(4)
    T[:3, :3] = Rotation.random(random_state=rng.integers(1 << 31)).as_matrix()
    T[:3, 3] = rng.normal(size=3)
    return T


def test_arun_identity(rng):
    a = rng.normal(size=(10, 3))
    np.testing.assert_allclose(arun_fit(a, a), np.eye(4), atol=1e-12)


def test_arun_exact_recovery(rng):
    for _ in range(10):
        T = random_pose(rng)
        a = rng.normal(size=(8, 3))
        b = a @ T[:3, :3].T + T[:3, 3]
        np.testing.assert_allclose(arun_fit(a, b), T, atol=1e-10)


def test_arun_reflection_case():
    # planar point set mapped by a proper rotation: SVD of H can give det -1
    a = np.array([[1.0, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0]])
    R = Rotation.from_euler("z", 0.3).as_matrix()
    T = arun_fit(a, a @ R.T)
    assert np.linalg.det(T[:3, :3]) == pytest.approx(1.0)
    np.testing.assert_allclose(T[:3, :3], R, atol=1e-12)


def test_arun_degenerate():
    with pytest.raises(DegenerateFitError):
        arun_fit([(0, 0, 0), (1, 1, 1)], [(0, 0, 0), (1, 1, 1)])
    with pytest.raises(DegenerateFitError):
        arun_fit([(0, 0, 0), (1, 1, 1), (2, 2, 2)], [(0, 0, 0), (1, 1, 1), (2, 2, 2)])


def test_pose_vector_round_trip(rng):
    T = random_pose(rng)
    np.testing.assert_allclose(vector_to_pose(pose_to_vector(T)), T, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(3, 60))
def test_arun_property_matches_horn(seed, n):
    r = np.random.default_rng(seed)
    T = random_pose(r)
    a = r.normal(size=(n, 3))
    b = a @ T[:3, :3].T + T[:3, 3] + r.normal(0, 0.01, (n, 3))
    R = arun_fit(a, b)[:3, :3]
    assert np.linalg.norm(R - horn_rotation(a, b)) < 1e-8


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(3, 200))
def test_plane_property_exact_cloud(seed, n):
    r = np.random.default_rng(seed)
    normal = r.normal(size=3)
    normal /= np.linalg.norm(normal)
    basis = np.linalg.svd(normal[None, :])[2][1:]
    pts = r.uniform(-1, 1, (n, 2)) @ basis + r.uniform(-1, 1) * normal
    p = fit_plane_svd(pts)
    assert abs(abs(p.normal @ normal) - 1) < 1e-12
    assert np.max(np.abs(p.signed_distance(pts))) < 1e-12
