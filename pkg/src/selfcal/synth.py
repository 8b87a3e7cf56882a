"""Synthetic calibration data from a known ground-truth model.

Contact poses are built geometrically first (sphere centres exactly 2r apart,
or exactly r from a plane) and the joint angles are then recovered with a
damped-least-squares IK on the ground-truth model, so the constraints hold to
machine precision before any noise is added. Noise is additive Gaussian on
the measured quantity: the contact gap, the pixel coordinates, the tracker
point.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .camera import project_points
from .dataset import Dataset, DatasetRecord
from .errors import ConfigError
from .fitting import vector_to_pose
from .kinematics import (N_JOINTS, TRACKER_CHAINS,
                         forward_kinematics, link_frames, wrap_angle)

log = logging.getLogger(__name__)

_STREAMS = {"st": 1, "hp1": 2, "hp2": 3, "vp": 4, "lt": 5, "subsample": 6}

# Right / left tool orientations (extrinsic z-y-z Euler, degrees) for self-touch;
# tools point at each other along x with different rolls and tilts.
ST_RIGHT = ((-108.0, 90.0, 0.0), (-36.0, 75.0, 15.0), (36.0, 105.0, -15.0))
ST_LEFT = ((0.0, -90.0, 0.0), (72.0, -75.0, 15.0), (144.0, -105.0, -15.0))
HP_ORIENTATIONS = ((0.0, 185.0, 52.0), (0.0, 180.0, -20.0), (0.0, 180.0, 124.0),
                   (0.0, 180.0, -164.0), (0.0, 180.0, -92.0))
VP_ORIENTATIONS = ((180.0, 90.0, 0.0), (108.0, 90.0, 0.0), (36.0, 90.0, 0.0),
                   (-36.0, 90.0, 0.0), (-108.0, 90.0, 0.0))


@dataclass(frozen=True)
class SynthConfig:
    st_grid: tuple = ((-0.3, 0.2, 4), (-1.1, -0.6, 4), (0.8, 1.0, 2))
    hp_grid: tuple = ((-0.4, 0.3, 5), (-1.35, -0.65, 5))
    hp_heights: dict = field(default_factory=lambda: {"hp1": 0.67, "hp2": 0.85})
    vp_grid: tuple = ((-1.2, -0.7, 5), (0.7, 1.1, 5))
    vp_x: float = 0.05
    max_poses: dict = field(default_factory=dict)
    approaches: tuple = ("st", "hp1", "hp2", "vp")
    n_tracker: int = 0
    contact_sigma: float = 0.0
    pixel_sigma: float = 0.0
    tracker_sigma: float = 0.0
    tracker_pose: tuple = None
    cameras: tuple = (1, 2)
    marker_min_cos: float = 0.25
    image_margin_px: float = 20.0
    turntable: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.contact_sigma, self.pixel_sigma, self.tracker_sigma) < 0:
            raise ConfigError("noise levels must be non-negative")
        if any(v <= 0 for v in self.max_poses.values()) or self.n_tracker < 0:
            raise ConfigError("pose counts must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("st_grid", "hp_grid", "vp_grid"):
            if k in d:
                d[k] = tuple(tuple(v) for v in d[k])
        for k in ("approaches", "tracker_pose", "cameras"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


def _grid(*axes):
    lin = [np.linspace(lo, hi, int(n)) for lo, hi, n in axes]
    return np.array(np.meshgrid(*lin, indexing="ij")).reshape(len(axes), -1).T


def _rot(seq, angles):
    return Rotation.from_euler(seq, angles, degrees=True).as_matrix()


def _arm_joints(chain):
    return [l.joint for l in chain.links if l.actuated and l.joint != 0]


def solve_ik(chain, target, q0, joints=None, max_iter=200, tol=1e-13):
    """Damped-least-squares IK of ``chain``'s end frame onto ``target`` (4x4).

    Only the joints in ``joints`` move (default: the arm joints, not the
    turntable). Returns the joint vector or ``None`` when it does not converge.
    """
    joints = _arm_joints(chain) if joints is None else list(joints)
    q = np.array(q0, dtype=float)
    col = {j: i for i, j in enumerate(joints)}
    lam = 1e-3
    polish = 0
    for _ in range(max_iter):
        frames = link_frames(chain, q)
        T = frames[-1]
        ep = target[:3, 3] - T[:3, 3]
        eo = Rotation.from_matrix(target[:3, :3] @ T[:3, :3].T).as_rotvec()
        err = np.concatenate([ep, eo])
        if np.max(np.abs(err)) < tol:
            # a few extra Newton steps push the error to round-off level
            polish += 1
            if polish > 3:
                return np.where(np.isin(np.arange(N_JOINTS), joints), wrap_angle(q), q)
        J = np.zeros((6, len(joints)))
        for k, link in enumerate(chain.links):
            if link.actuated and link.joint in col:
                z, o = frames[k][:3, 2], frames[k][:3, 3]
                J[:3, col[link.joint]] = np.cross(z, T[:3, 3] - o)
                J[3:, col[link.joint]] = z
        damp = lam * lam if np.linalg.norm(err) > 1e-6 else 0.0
        dq = J.T @ np.linalg.solve(J @ J.T + damp * np.eye(6), err)
        n = np.linalg.norm(dq)
        if n > 0.3:
            dq *= 0.3 / n
        q[joints] += dq
    return None


def _home(model):
    q = np.zeros(N_JOINTS)
    return q


def _pose_target(R, centre):
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = centre
    return T


def _visible_markers(model, q, arm, cams, cfg, rng):
    """(face, camera, (u, v)) triples for markers of ``arm`` visible at ``q``."""
    E = forward_kinematics(model.arm(arm), q)
    faces, Tm = model.marker_layout.stacked()
    if not faces:
        return []
    M = E @ Tm
    pos, normals = M[:, :3, 3], M[:, :3, 2]
    out = []
    for cam in cams:
        C = forward_kinematics(model.camera_chain(cam), q)
        intr = model.intrinsics(cam)
        to_cam = C[:3, 3] - pos
        facing = np.einsum("ij,ij->i", normals, to_cam) / np.linalg.norm(to_cam, axis=1)
        pc = (pos - C[:3, 3]) @ C[:3, :3]
        front = pc[:, 2] > 0.1
        uv = np.full((len(faces), 2), np.nan)
        uv[front] = project_points(intr, pc[front])
        w, h = intr.image_size
        m = cfg.image_margin_px
        inside = (uv[:, 0] > m) & (uv[:, 0] < w - m) & (uv[:, 1] > m) & (uv[:, 1] < h - m)
        ok = front & inside & (facing > cfg.marker_min_cos)
        for i in np.flatnonzero(ok):
            out.append((faces[i], cam, uv[i]))
    noise = rng.normal(0.0, cfg.pixel_sigma, (len(out), 2)) if cfg.pixel_sigma > 0 else np.zeros((len(out), 2))
    return [(f, c, tuple(float(v) for v in uv + e)) for (f, c, uv), e in zip(out, noise)]


def _records(pose_id, q, marker_arms, model, cfg, rng, contact_arm):
    joints = tuple(float(v) for v in q)
    recs = []
    for arm in marker_arms:
        for face, cam, uv in _visible_markers(model, q, arm, cfg.cameras, cfg, rng):
            recs.append(DatasetRecord(pose_id, arm, joints, face, cam, uv))
    if not recs:
        recs.append(DatasetRecord(pose_id, contact_arm, joints))
    return recs


def _rng(cfg, stream, index):
    return np.random.default_rng([cfg.seed, _STREAMS[stream], index])


def _self_touch(model, cfg, tally):
    r = model.ee_radius
    right, left = model.arm(1), model.arm(2)
    q_home = _home(model)
    q_home[0] = cfg.turntable
    events = []
    for c in _grid(*cfg.st_grid):
        for er in ST_RIGHT:
            for el in ST_LEFT:
                events.append((c, _rot("zyz", er), _rot("zyz", el)))
    tally["st_nominal"] = len(events)
    records, pid = [], 0
    for i in _event_order(len(events), cfg, "st"):
        if pid == cfg.max_poses.get("st", np.inf):
            break
        c, Rr, Rl = events[i]
        rng = _rng(cfg, "st", i)
        n = Rr[:, 2] - Rl[:, 2]
        n /= np.linalg.norm(n)
        gap = 2.0 * r + (rng.normal(0.0, cfg.contact_sigma) if cfg.contact_sigma > 0 else 0.0)
        pr, pl = c - 0.5 * gap * n, c + 0.5 * gap * n
        q = solve_ik(right, _pose_target(Rr, pr), q_home)
        if q is not None:
            q = solve_ik(left, _pose_target(Rl, pl), q)
        if q is None:
            tally["st_unreachable"] = tally.get("st_unreachable", 0) + 1
            continue
        records += _records(pid, q, (1, 2), model, cfg, rng, 1)
        pid += 1
    return records


def _plane(model, cfg, group, tally):
    r = model.ee_radius
    arm = model.arm(1)
    q_home = _home(model)
    q_home[0] = cfg.turntable
    events = []
    if group == "vp":
        for y, z in _grid(*cfg.vp_grid):
            for e in VP_ORIENTATIONS:
                events.append((np.array([cfg.vp_x, y, z]), np.array([-1.0, 0.0, 0.0]), _rot("zyz", e)))
    else:
        h = cfg.hp_heights[group]
        for x, y in _grid(*cfg.hp_grid):
            for e in HP_ORIENTATIONS:
                events.append((np.array([x, y, h]), np.array([0.0, 0.0, 1.0]), _rot("xyz", e)))
    tally[f"{group}_nominal"] = len(events)
    records, pid = [], 0
    for i in _event_order(len(events), cfg, group):
        if pid == cfg.max_poses.get(group, np.inf):
            break
        p, side, R = events[i]
        rng = _rng(cfg, group, i)
        gap = r + (rng.normal(0.0, cfg.contact_sigma) if cfg.contact_sigma > 0 else 0.0)
        q = solve_ik(arm, _pose_target(R, p + gap * side), q_home)
        if q is None:
            tally[f"{group}_unreachable"] = tally.get(f"{group}_unreachable", 0) + 1
            continue
        records += _records(pid, q, (1,), model, cfg, rng, 1)
        pid += 1
    return records


def _tracker(model, cfg, tally):
    chain = model.chain(TRACKER_CHAINS[1])
    T = vector_to_pose(model.tracker_pose if cfg.tracker_pose is None else cfg.tracker_pose)
    lo = np.array([-0.8, -0.6, -0.6, -1.5, -1.2, -1.5])
    hi = np.array([0.8, 0.8, 0.6, 1.5, 1.2, 1.5])
    records = []
    for i in range(cfg.n_tracker):
        rng = _rng(cfg, "lt", i)
        q = np.zeros(N_JOINTS)
        q[0] = cfg.turntable
        q[1:7] = rng.uniform(lo, hi)
        x_r = forward_kinematics(chain, q)[:3, 3]
        x_l = T[:3, :3].T @ (x_r - T[:3, 3])
        if cfg.tracker_sigma > 0:
            x_l = x_l + rng.normal(0.0, cfg.tracker_sigma, 3)
        records.append(DatasetRecord(i, 1, tuple(float(v) for v in q),
                                     tracker_point=tuple(float(v) for v in x_l)))
    tally["lt"] = len(records)
    return records


def _event_order(n, cfg, stream):
    """Grid order, or a seeded shuffle when the approach is capped by ``max_poses``."""
    if stream not in cfg.max_poses:
        return range(n)
    rng = np.random.default_rng([cfg.seed, _STREAMS["subsample"], _STREAMS[stream]])
    return rng.permutation(n)


def generate(model, cfg, tally=None):
    """Synthetic datasets keyed by provenance (st, hp1, hp2, vp, lt).

    ``tally`` (a dict, optional) receives nominal and unreachable counts.
    """
    tally = {} if tally is None else tally
    out = {}
    for group in cfg.approaches:
        if group == "st":
            recs = _self_touch(model, cfg, tally)
        elif group in ("hp1", "hp2", "vp"):
            recs = _plane(model, cfg, group, tally)
        else:
            raise ConfigError(f"unknown synthetic approach {group!r}")
        out[group] = Dataset(tuple(recs), group, f"synthetic-{group}")
    if cfg.n_tracker:
        out["lt"] = Dataset(tuple(_tracker(model, cfg, tally)), "lt", "synthetic-lt")
    return out


def perturb(params, selection, p, seed=0):
    """Uniform perturbation of an initial estimate by factor ``p``.

    Offsets get ``0.1 p U(-1, 1)`` rad, alpha ``0.01 p U(-1, 1)`` rad and
    a, d ``0.01 p U(-1, 1)`` m. Tracker-pose entries are left unchanged.
    """
    if p < 0:
        raise ConfigError("perturbation factor must be non-negative")
    x = np.array(params, dtype=float)
    amp = np.array([0.0 if e.is_tracker else (0.1 if e.field == "offset" else 0.01)
                    for e in selection.entries])
    u = np.random.default_rng(seed).uniform(-1.0, 1.0, x.size)
    return x + p * amp * u
