"""Pinhole camera with radial/tangential distortion and projection uncertainty."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, VisibilityError

JACOBIAN_STEP = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    dist: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    image_size: tuple = (4000, 6000)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError("focal lengths must be positive")
        if len(self.dist) != 5:
            raise ConfigError("expected five distortion coefficients")
        if min(self.image_size) <= 0:
            raise ConfigError("image size must be positive")
        object.__setattr__(self, "dist", tuple(float(v) for v in self.dist))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor):
        """Same camera with both focal lengths multiplied by ``factor``."""
        return CameraIntrinsics(self.fx * factor, self.fy * factor, self.cx, self.cy,
                                self.dist, self.image_size)

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "dist": list(self.dist), "image_size": list(self.image_size)}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   tuple(d.get("dist", (0.0,) * 5)), tuple(d.get("image_size", (4000, 6000))))


# Right / left camera after intrinsic calibration with OpenCV.
RIGHT_CAMERA = CameraIntrinsics(
    8185.397, 8170.401, 2009.318, 2963.960,
    (-0.020602, -0.205606, -0.001819, -0.000820, 0.718890))
LEFT_CAMERA = CameraIntrinsics(
    8110.478, 8098.218, 1949.921, 2991.727,
    (-0.022546, -0.213094, -0.000684, -0.000512, 0.662333))


def project_points(intr, points_cam):
    """Vectorised projection of (N, 3) camera-frame points to (N, 2) pixels.

    No visibility check: rows with z <= 0 produce meaningless values and must
    be masked by the caller.
    """
    p = np.asarray(points_cam, dtype=float)
    x = p[..., 0] / p[..., 2]
    y = p[..., 1] / p[..., 2]
    d1, d2, d3, d4, d5 = intr.dist
    r2 = x * x + y * y
    radial = 1.0 + d1 * r2 + d2 * r2 * r2 + d3 * r2 * r2 * r2
    # tangential grouping as printed: d4 pairs with 2xy on the x row, d5 on the y row
    xd = x * radial + 2.0 * d4 * x * y + d5 * (r2 + 2.0 * x * x)
    yd = y * radial + d4 * (r2 + 2.0 * y * y) + 2.0 * d5 * x * y
    return np.stack([intr.fx * xd + intr.cx, intr.fy * yd + intr.cy], axis=-1)


def project(intr, point_cam):
    """Project one camera-frame point; raises VisibilityError behind the camera."""
    p = np.asarray(point_cam, dtype=float)
    if not p[2] > 0:
        raise VisibilityError(f"point {p.tolist()} is behind the camera")
    return project_points(intr, p[None, :])[0]


def projection_jacobian(intr, point_cam, step=JACOBIAN_STEP):
    """2x3 central-difference Jacobian of ``project`` w.r.t. the 3D point."""
    p = np.asarray(point_cam, dtype=float)
    if not p[2] > 0:
        raise VisibilityError(f"point {p.tolist()} is behind the camera")
    probes = np.concatenate([p + step * np.eye(3), p - step * np.eye(3)])
    if np.any(probes[:, 2] <= 0):
        raise VisibilityError("finite-difference probe crosses the image plane")
    uv = project_points(intr, probes)
    return (uv[:3] - uv[3:]).T / (2.0 * step)


def uncertainty_ellipsoid(intrs, cam_poses, point_world, step=JACOBIAN_STEP):
    """Semi-axes (m, ascending) of the 1-pixel triangulation uncertainty ellipsoid.

    ``cam_poses`` are camera-to-world transforms. The pixel-space quadric is
    the identity, so the position quadric is ``Jx^T Jx`` where ``Jx`` stacks
    both cameras' 2x3 projection Jacobians w.r.t. the world point.
    """
    X = np.asarray(point_world, dtype=float)
    blocks = []
    for intr, T in zip(intrs, cam_poses):
        T = np.asarray(T, dtype=float)
        R, t = T[:3, :3], T[:3, 3]
        pc = R.T @ (X - t)
        if not pc[2] > 0:
            raise VisibilityError("point is not in front of every camera")
        blocks.append(projection_jacobian(intr, pc, step) @ R.T)
    Jx = np.vstack(blocks)
    eig = np.linalg.eigvalsh(Jx.T @ Jx)
    if eig[0] <= 0:
        raise VisibilityError("views are degenerate; depth is unconstrained")
    return np.sort(1.0 / np.sqrt(eig))
