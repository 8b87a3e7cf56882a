import numpy as np
import pytest

from selfcal.camera import (LEFT_CAMERA, RIGHT_CAMERA, CameraIntrinsics, project,
                            project_points, projection_jacobian, uncertainty_ellipsoid)
from selfcal.errors import ConfigError, VisibilityError


def scalar_projection(c, X, Y, Z):
    # plain-float re-evaluation of the distortion model, term by term
    x, y = X / Z, Y / Z
    r2 = x * x + y * y
    d1, d2, d3, d4, d5 = c.dist
    k = 1 + d1 * r2 + d2 * r2 ** 2 + d3 * r2 ** 3
    xd = x * k + 2 * d4 * x * y + d5 * (r2 + 2 * x * x)
    yd = y * k + d4 * (r2 + 2 * y * y) + 2 * d5 * x * y
    return c.fx * xd + c.cx, c.fy * yd + c.cy


def test_principal_point_on_axis():
    assert project(RIGHT_CAMERA, [0, 0, 1.3]) == pytest.approx([2009.318, 2963.960])


@pytest.mark.parametrize("cam", [RIGHT_CAMERA, LEFT_CAMERA])
def test_matches_scalar_reevaluation(cam, rng):
    pts = np.column_stack([rng.uniform(-0.3, 0.3, 50), rng.uniform(-0.4, 0.4, 50),
                           rng.uniform(0.8, 2.0, 50)])
    uv = project_points(cam, pts)
    for p, q in zip(pts, uv):
        assert q == pytest.approx(scalar_projection(cam, *p), abs=1e-9)


def test_no_distortion_is_pinhole():
    c = CameraIntrinsics(1000.0, 1000.0, 500.0, 400.0)
    assert project(c, [0.1, -0.2, 2.0]) == pytest.approx([550.0, 300.0])


def test_behind_camera_raises():
    with pytest.raises(VisibilityError):
        project(RIGHT_CAMERA, [0.0, 0.0, -1.0])
    with pytest.raises(VisibilityError):
        project(RIGHT_CAMERA, [0.0, 0.0, 0.0])


def test_invalid_intrinsics():
    with pytest.raises(ConfigError):
        CameraIntrinsics(-1.0, 1.0, 0.0, 0.0)
    with pytest.raises(ConfigError):
        CameraIntrinsics(1.0, 1.0, 0.0, 0.0, (0.0,) * 4)


def test_dict_round_trip():
    assert CameraIntrinsics.from_dict(RIGHT_CAMERA.to_dict()) == RIGHT_CAMERA


def test_projection_jacobian_against_richardson():
    p = np.array([0.12, -0.2, 1.4])
    J = projection_jacobian(RIGHT_CAMERA, p)

    def cd(h):
        return np.column_stack([(project(RIGHT_CAMERA, p + h * e) - project(RIGHT_CAMERA, p - h * e))
                                / (2 * h) for e in np.eye(3)])
    rich = (4 * cd(1e-4) - cd(2e-4)) / 3
    np.testing.assert_allclose(J, rich, rtol=1e-6, atol=1e-3)


def test_uncertainty_ellipsoid_matches_analytic_pinhole():
    c = CameraIntrinsics(2000.0, 2000.0, 1000.0, 1500.0)
    T1, T2 = np.eye(4), np.eye(4)
    T1[0, 3], T2[0, 3] = -0.25, 0.25
    X = np.array([0.05, 0.1, 1.5])
    rows = []
    for T in (T1, T2):
        x, y, z = X - T[:3, 3]
        rows += [[c.fx / z, 0, -c.fx * x / z ** 2], [0, c.fy / z, -c.fy * y / z ** 2]]
    J = np.array(rows)
    expected = np.sort(1 / np.sqrt(np.linalg.eigvalsh(J.T @ J)))
    axes = uncertainty_ellipsoid([c, c], [T1, T2], X)
    np.testing.assert_allclose(axes, expected, rtol=1e-6)
    # depth is the weak direction for a short baseline
    assert axes[-1] > 2 * axes[0]


def test_uncertainty_ellipsoid_rejects_point_behind():
    with pytest.raises(VisibilityError):
        uncertainty_ellipsoid([RIGHT_CAMERA], [np.eye(4)], [0.0, 0.0, -1.0])
