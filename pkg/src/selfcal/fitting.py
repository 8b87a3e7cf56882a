"""Closed-form geometric fits: SVD plane fit and the Arun rigid registration."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateFitError

RANK_TOL = 1e-10


@dataclass(frozen=True)
class Plane:
    """Plane ``n . x + d = 0`` with unit normal ``n``."""
    n: tuple
    d: float

    def __post_init__(self):
        n = np.asarray(self.n, dtype=float)
        norm = np.linalg.norm(n)
        if not norm > 0:
            raise DegenerateFitError("plane normal is zero")
        n = n / norm
        object.__setattr__(self, "n", tuple(n))

    @property
    def normal(self):
        return np.array(self.n)

    def signed_distance(self, points):
        return np.asarray(points, dtype=float) @ self.normal + self.d


def _plane_from_points(p):
    if p.ndim != 2 or p.shape[1] != 3 or len(p) < 3:
        raise DegenerateFitError("plane fit needs at least 3 points")
    c = p.mean(axis=0)
    _, s, vt = np.linalg.svd(p - c, full_matrices=False)
    if s[0] == 0 or s[1] <= RANK_TOL * s[0]:
        raise DegenerateFitError("points are collinear or coincident")
    n = vt[-1]
    if n[np.argmax(np.abs(n))] < 0:
        n = -n
    return n, float(-n @ c)


def fit_plane_svd(points):
    """Least-squares plane through ``points`` (N >= 3, not collinear).

    The normal is the right singular vector of the centred points with the
    smallest singular value; its sign makes the largest component positive.
    """
    n, d = _plane_from_points(np.asarray(points, dtype=float))
    return Plane(tuple(n), d)


def plane_distances(points):
    """Signed distances of ``points`` to their own SVD plane (vectorised helper)."""
    p = np.asarray(points, dtype=float)
    n, d = _plane_from_points(p)
    return p @ n + d


def arun_fit(points_a, points_b):
    """Least-squares rigid transform (4x4) with ``b ~ R a + T``."""
    a = np.asarray(points_a, dtype=float)
    b = np.asarray(points_b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise DegenerateFitError("point sets must be equal-length (N, 3) arrays")
    if len(a) < 3:
        raise DegenerateFitError("need at least 3 correspondences")
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    A, B = a - ca, b - cb
    sa = np.linalg.svd(A, compute_uv=False)
    if sa[0] == 0 or sa[1] <= RANK_TOL * sa[0]:
        raise DegenerateFitError("source points are collinear or coincident")
    U, _, Vt = np.linalg.svd(A.T @ B)
    V = Vt.T
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(V @ U.T)) or 1.0])
    R = V @ D @ U.T
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = cb - R @ ca
    return T


def pose_to_vector(T):
    """4x4 rigid transform -> (rotation vector, translation)."""
    T = np.asarray(T, dtype=float)
    return np.concatenate([Rotation.from_matrix(T[:3, :3]).as_rotvec(), T[:3, 3]])


def vector_to_pose(v):
    v = np.asarray(v, dtype=float)
    T = np.eye(4)
    T[:3, :3] = Rotation.from_rotvec(v[:3]).as_matrix()
    T[:3, 3] = v[3:6]
    return T
