"""Denavit-Hartenberg chains of the dual-arm platform and their forward kinematics.

Single supported convention per link::

    T = Rot_z(theta + offset) @ Trans_z(d) @ Trans_x(a) @ Rot_x(alpha)

All chains start in the common base frame (identity base transform). Joint
vectors have 13 entries: turntable, S1, L1, U1, R1, B1, T1, S2, ..., T2.
Every function accepts a single configuration ``(13,)`` or a batch ``(N, 13)``.
"""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, LEFT_CAMERA, RIGHT_CAMERA
from .errors import ConfigError

N_JOINTS = 13
JOINT_NAMES = ("TT", "S1", "L1", "U1", "R1", "B1", "T1", "S2", "L2", "U2", "R2", "B2", "T2")
DH_FIELDS = ("a", "d", "alpha", "offset")
CHAIN_KINDS = ("arm", "camera", "tracker-arm")

ARM_CHAINS = {1: "right_arm", 2: "left_arm"}
CAMERA_CHAINS = {1: "right_camera", 2: "left_camera"}
TRACKER_CHAINS = {1: "right_tracker", 2: "left_tracker"}


def wrap_angle(x):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(x, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return w if w.ndim else float(w)


def angle_diff(a, b):
    """Shortest signed angular distance a - b."""
    return wrap_angle(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


@dataclass(frozen=True)
class DHLink:
    name: str
    a: float
    d: float
    alpha: float
    offset: float
    actuated: bool = False
    joint: int = None
    calibrate: tuple = ()

    def __post_init__(self):
        vals = (self.a, self.d, self.alpha, self.offset)
        if not np.all(np.isfinite(vals)):
            raise ConfigError(f"link {self.name}: non-finite DH value")
        if self.actuated and self.joint is None:
            raise ConfigError(f"link {self.name}: actuated link needs a joint index")
        if self.joint is not None and not 0 <= self.joint < N_JOINTS:
            raise ConfigError(f"link {self.name}: joint index {self.joint} out of range")
        bad = set(self.calibrate) - set(DH_FIELDS)
        if bad:
            raise ConfigError(f"link {self.name}: unknown calibrate fields {sorted(bad)}")

    @property
    def wrapped_alpha(self):
        return wrap_angle(self.alpha)

    @property
    def wrapped_offset(self):
        return wrap_angle(self.offset)


@dataclass(frozen=True)
class KinematicChain:
    name: str
    links: tuple
    kind: str = "arm"


def dh_transform(link, encoder_angle=0.0):
    """Homogeneous transform of one link; batched over ``encoder_angle``."""
    theta = np.asarray(encoder_angle, dtype=float)
    if not link.actuated:
        theta = np.zeros_like(theta)
    theta = theta + link.offset
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(link.alpha), np.sin(link.alpha)
    T = np.zeros(theta.shape + (4, 4))
    T[..., 0, 0] = ct
    T[..., 0, 1] = -st * ca
    T[..., 0, 2] = st * sa
    T[..., 0, 3] = link.a * ct
    T[..., 1, 0] = st
    T[..., 1, 1] = ct * ca
    T[..., 1, 2] = -ct * sa
    T[..., 1, 3] = link.a * st
    T[..., 2, 1] = sa
    T[..., 2, 2] = ca
    T[..., 2, 3] = link.d
    T[..., 3, 3] = 1.0
    return T


def _joint_matrix(joints):
    q = np.asarray(joints, dtype=float)
    if q.shape[-1] != N_JOINTS or q.ndim not in (1, 2):
        raise ConfigError(f"joint vector must have {N_JOINTS} entries, got shape {q.shape}")
    return q


def link_frames(chain, joints):
    """Frames after each link, shape ``(L+1, ..., 4, 4)``; index 0 is the base."""
    q = _joint_matrix(joints)
    lead = q.shape[:-1]
    T = np.broadcast_to(np.eye(4), lead + (4, 4)).copy()
    frames = [T]
    for link in chain.links:
        theta = q[..., link.joint] if link.actuated else np.zeros(lead)
        T = T @ dh_transform(link, theta)
        frames.append(T)
    return np.stack(frames)


def forward_kinematics(chain, joints):
    """End frame of ``chain`` for one or many joint configurations."""
    q = _joint_matrix(joints)
    lead = q.shape[:-1]
    T = None
    for link in chain.links:
        theta = q[..., link.joint] if link.actuated else np.zeros(lead)
        A = dh_transform(link, theta)
        T = A if T is None else T @ A
    if T is None:
        T = np.broadcast_to(np.eye(4), lead + (4, 4)).copy()
    return T


def is_rigid(T, tol=1e-9):
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4):
        return False
    R = T[:3, :3]
    return (np.allclose(T[3], [0, 0, 0, 1], atol=tol)
            and np.allclose(R.T @ R, np.eye(3), atol=tol)
            and abs(np.linalg.det(R) - 1.0) < tol)


class MarkerLayout(dict):
    """Marker face id -> 4x4 transform from the marker frame to the end effector."""

    def __init__(self, transforms=()):
        super().__init__()
        for face, T in dict(transforms).items():
            T = np.array(T, dtype=float).reshape(4, 4)
            if not is_rigid(T):
                raise ConfigError(f"marker {face}: not a rigid transform")
            T.setflags(write=False)
            self[int(face)] = T

    @property
    def faces(self):
        return sorted(self)

    def stacked(self):
        faces = self.faces
        return faces, np.stack([self[f] for f in faces]) if faces else np.zeros((0, 4, 4))


def icosahedron_layout(face_distance=0.05):
    """One marker per face of a regular icosahedron centred on the end effector.

    Marker z axes are the outward face normals; ids are 0..19.
    """
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
                      [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
                      [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]], dtype=float)
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    layout = {}
    for i, f in enumerate(faces):
        n = verts[list(f)].mean(axis=0)
        n /= np.linalg.norm(n)
        helper = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        x = np.cross(helper, n)
        x /= np.linalg.norm(x)
        y = np.cross(n, x)
        T = np.eye(4)
        T[:3, 0], T[:3, 1], T[:3, 2] = x, y, n
        T[:3, 3] = face_distance * n
        layout[i] = T
    return MarkerLayout(layout)


@dataclass(frozen=True)
class RobotModel:
    """All links of the platform plus the chains that reference them by name.

    Links are shared between chains (an arm chain and its tracker chain use
    the same TT..T links), so a parameter change applies everywhere at once.
    """
    links: dict
    chain_defs: dict
    ee_radius: float = 0.058
    marker_layout: MarkerLayout = field(default_factory=MarkerLayout)
    cameras: dict = field(default_factory=dict)
    tracker_pose: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    shared_turntable: bool = True

    def __post_init__(self):
        if not self.ee_radius > 0:
            raise ConfigError("ee_radius must be positive")
        for name, (kind, names) in self.chain_defs.items():
            if kind not in CHAIN_KINDS:
                raise ConfigError(f"chain {name}: unknown kind {kind!r}")
            missing = [n for n in names if n not in self.links]
            if missing:
                raise ConfigError(f"chain {name}: unknown links {missing}")
            if kind in ("arm", "tracker-arm") and len(names) != 8:
                raise ConfigError(f"chain {name}: arm chains need 8 links")
            if kind == "camera" and len(names) != 2:
                raise ConfigError(f"chain {name}: camera chains need 2 links")
            if self.shared_turntable:
                first = self.links[names[0]]
                if not (first.actuated and first.joint == 0):
                    raise ConfigError(f"chain {name}: first link must read the turntable joint")
        if len(self.tracker_pose) != 6:
            raise ConfigError("tracker_pose must have 6 entries")
        object.__setattr__(self, "tracker_pose", tuple(float(v) for v in self.tracker_pose))

    def chain(self, name):
        try:
            kind, names = self.chain_defs[name]
        except KeyError:
            raise ConfigError(f"unknown chain {name!r}") from None
        return KinematicChain(name, tuple(self.links[n] for n in names), kind)

    def arm(self, arm_idx):
        return self.chain(ARM_CHAINS[arm_idx])

    def camera_chain(self, cam_idx):
        return self.chain(CAMERA_CHAINS[cam_idx])

    def intrinsics(self, cam_idx):
        try:
            return self.cameras[CAMERA_CHAINS[cam_idx]]
        except KeyError:
            raise ConfigError(f"no intrinsics for camera {cam_idx}") from None

    def get(self, link, fld):
        return getattr(self.links[link], fld)

    def with_values(self, updates, tracker_pose=None):
        """New model with ``{(link, field): value}`` applied."""
        per_link = {}
        for (link, fld), v in updates.items():
            if link not in self.links:
                raise ConfigError(f"unknown link {link!r}")
            if fld not in DH_FIELDS:
                raise ConfigError(f"unknown DH field {fld!r}")
            per_link.setdefault(link, {})[fld] = float(v)
        links = dict(self.links)
        for link, kw in per_link.items():
            links[link] = replace(links[link], **kw)
        kw = {"links": links}
        if tracker_pose is not None:
            kw["tracker_pose"] = tuple(tracker_pose)
        return replace(self, **kw)

    def with_ee_radius(self, r):
        return replace(self, ee_radius=float(r))

    def with_cameras(self, cameras):
        return replace(self, cameras=dict(cameras))


def marker_world_pose(model, arm, face, joints):
    """Base-frame pose of marker ``face`` on arm ``arm`` (1 right, 2 left)."""
    try:
        Tm = model.marker_layout[int(face)]
    except KeyError:
        raise KeyError(f"unknown marker face {face}") from None
    return forward_kinematics(model.arm(arm), joints) @ Tm


def _link(name, a, d, alpha, offset, joint=None, calibrate=()):
    return DHLink(name, a, d, alpha, offset, joint is not None, joint, tuple(calibrate))


def nominal_model():
    """Nominal platform: manufacturer arm DH, measured end effectors and cameras."""
    links = []
    for side, tt_alpha, j0 in (("1", 0.262, 1), ("2", -0.262, 7)):
        links += [
            _link("TT" + side, 0.0, -0.263, tt_alpha, -1.571, 0),
            _link("S" + side, 0.150, 1.416, -1.571, 0.0, j0),
            _link("L" + side, 0.614, 0.0, 3.142, -1.571, j0 + 1, ("a", "alpha", "offset")),
            _link("U" + side, 0.200, 0.0, -1.571, 0.0, j0 + 2, DH_FIELDS),
            _link("R" + side, 0.0, -0.640, 1.571, 0.0, j0 + 3, DH_FIELDS),
            _link("B" + side, 0.030, 0.0, 1.571, -1.571, j0 + 4, DH_FIELDS),
            _link("T" + side, 0.0, 0.200, 0.0, 0.0, j0 + 5, ("a", "alpha")),
            _link("EE" + side, 0.0, 0.350, 0.0, 0.0, None, ("d", "offset")),
            _link("EEL" + side, 0.020, 0.250, 0.0, 1.571, None, ("a", "d", "offset")),
        ]
    cam_calib = ("a", "d", "alpha", "offset")
    links += [
        _link("TT3", 0.2315, 1.8034, -2.5086, -2.7753, 0, cam_calib),
        _link("C1", 0.0, -0.5670, 0.0, 0.2863, None, ("d", "offset")),
        _link("TT4", 0.2315, 1.8602, 2.5486, -0.0860, 0, cam_calib),
        _link("C2", 0.0, -0.4982, 0.0, 3.0618, None, ("d", "offset")),
    ]
    arm = ("TT{s}", "S{s}", "L{s}", "U{s}", "R{s}", "B{s}", "T{s}")
    chain_defs = {
        "right_arm": ("arm", tuple(n.format(s=1) for n in arm) + ("EE1",)),
        "left_arm": ("arm", tuple(n.format(s=2) for n in arm) + ("EE2",)),
        "right_tracker": ("tracker-arm", tuple(n.format(s=1) for n in arm) + ("EEL1",)),
        "left_tracker": ("tracker-arm", tuple(n.format(s=2) for n in arm) + ("EEL2",)),
        "right_camera": ("camera", ("TT3", "C1")),
        "left_camera": ("camera", ("TT4", "C2")),
    }
    return RobotModel(
        links={l.name: l for l in links},
        chain_defs=chain_defs,
        ee_radius=0.058,
        marker_layout=icosahedron_layout(),
        cameras={"right_camera": RIGHT_CAMERA, "left_camera": LEFT_CAMERA},
    )


def model_to_dict(model):
    return {
        "ee_radius": model.ee_radius,
        "shared_turntable": model.shared_turntable,
        "links": {
            name: {"a": l.a, "d": l.d, "alpha": l.alpha, "offset": l.offset,
                   "actuated": l.actuated, "joint": l.joint, "calibrate": list(l.calibrate)}
            for name, l in model.links.items()
        },
        "chains": {name: {"kind": kind, "links": list(names)}
                   for name, (kind, names) in model.chain_defs.items()},
        "marker_layout": {str(f): model.marker_layout[f].reshape(-1).tolist()
                          for f in model.marker_layout.faces},
        "cameras": {name: c.to_dict() for name, c in model.cameras.items()},
        "tracker_pose": list(model.tracker_pose),
    }


def model_from_dict(d):
    try:
        links = {
            name: DHLink(name, float(r["a"]), float(r["d"]), float(r["alpha"]), float(r["offset"]),
                         bool(r.get("actuated", False)), r.get("joint"),
                         tuple(r.get("calibrate", ())))
            for name, r in d["links"].items()
        }
        chain_defs = {name: (c["kind"], tuple(c["links"])) for name, c in d["chains"].items()}
        layout = MarkerLayout({int(k): v for k, v in d.get("marker_layout", {}).items()})
        cameras = {name: CameraIntrinsics.from_dict(c) for name, c in d.get("cameras", {}).items()}
        return RobotModel(links, chain_defs, float(d.get("ee_radius", 0.058)), layout, cameras,
                          tuple(d.get("tracker_pose", (0.0,) * 6)),
                          bool(d.get("shared_turntable", True)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed robot model: {exc}") from exc


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(model, path):
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")
