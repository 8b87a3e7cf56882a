"""Residual blocks for each calibration approach and their scaled combination.

Approaches:

* ``self-contact``: distance between both end-effector centres minus 2r,
  one row per pose.
* ``planes``: distance of the end-effector centre to the plane refitted (SVD)
  on the current centres of its group, minus r; one row per pose.
* ``self-observation``: marker reprojection error, two rows (u, v) per
  detection.
* ``tracker``: distance between the retroreflector from forward kinematics
  and the tracker point mapped into the base frame; one row per pose.

Every block multiplies its raw residuals entry-wise by a fixed scale vector
computed at assembly time.
"""

from dataclasses import dataclass, field

import numpy as np

from .camera import project_points
from .dataset import PLANE_GROUPS, merge
from .errors import ConfigError
from .fitting import Plane, arun_fit, fit_plane_svd, pose_to_vector, vector_to_pose
from .kinematics import CAMERA_CHAINS, TRACKER_CHAINS, forward_kinematics

APPROACHES = ("self-contact", "planes", "self-observation", "tracker")
KIND_LABELS = {"self-contact": "dist", "planes": "plane dist",
               "self-observation": "mark.", "tracker": "tracker"}


@dataclass(frozen=True)
class ScalePolicy:
    """Per-entry scale factors k = eta * p * mu (contact) and k = eta * p (markers).

    ``mu`` converts metres to pixels from the distance of the end effector to
    the cameras. With ``mu_mode="auto"`` the p * mu factors are only used when
    the system also contains reprojection residuals, so pure metric problems
    stay in metres.
    """
    eta: dict = field(default_factory=lambda: {a: 1.0 for a in APPROACHES})
    p_st: float = 20.0
    p_p: float = 10.0
    p_so: float = 1.0
    mu_mode: str = "auto"
    image_width_px: float = 4000.0
    horizontal_fov: float = np.pi / 3

    def __post_init__(self):
        if self.mu_mode not in ("auto", "on", "off"):
            raise ConfigError(f"unknown mu_mode {self.mu_mode!r}")
        eta = {a: 1.0 for a in APPROACHES}
        eta.update(self.eta)
        object.__setattr__(self, "eta", eta)
        if min(list(eta.values()) + [self.p_st, self.p_p, self.p_so]) <= 0:
            raise ConfigError("scale weights must be positive")

    def mu(self, distance):
        return self.image_width_px / (np.asarray(distance, dtype=float) * self.horizontal_fov)

    def with_eta(self, approach, value):
        eta = dict(self.eta)
        eta[approach] = float(value)
        return ScalePolicy(eta, self.p_st, self.p_p, self.p_so, self.mu_mode,
                           self.image_width_px, self.horizontal_fov)

    def to_dict(self):
        return {"eta": dict(self.eta), "p_st": self.p_st, "p_p": self.p_p, "p_so": self.p_so,
                "mu_mode": self.mu_mode, "image_width_px": self.image_width_px,
                "horizontal_fov": self.horizontal_fov}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _positions(model, arm, joints):
    return forward_kinematics(model.arm(arm), joints)[..., :3, 3]


# --- single-approach residual functions -------------------------------------

def self_contact_residual(model, joints):
    """Signed ``|p_left - p_right| - 2r`` for one or many configurations."""
    gap = np.linalg.norm(_positions(model, 2, joints) - _positions(model, 1, joints), axis=-1)
    return gap - 2.0 * model.ee_radius


def contact_plane(centres, radius):
    """Touched plane implied by sphere centres: their SVD plane moved by ``radius``.

    Which side the plane lies on does not matter for the residual as long as
    the centres are within ``radius`` of their fit.
    """
    fit = fit_plane_svd(centres)
    return Plane(fit.n, fit.d + radius)


def planar_residuals(model, joints, arm=1, plane=None):
    """``|n . p + d| - r`` for end-effector centres ``p``.

    ``plane`` is the touched plane; by default it is re-derived from the
    current centres (SVD fit shifted by r), which eliminates the plane
    parameters from the problem.
    """
    p = _positions(model, arm, np.atleast_2d(joints))
    if plane is None:
        plane = contact_plane(p, model.ee_radius)
    return np.abs(plane.signed_distance(p)) - model.ee_radius


def reprojection_residuals(model, records):
    """(predicted - measured) pixels for marker records, plus behind-camera count.

    Returns ``(residuals (N, 2), skipped)``; skipped rows are zero.
    """
    block = ReprojectionBlock.from_records(model, list(records), None)
    r = block.evaluate(model)
    return r.reshape(-1, 2), block.last_skipped


def tracker_residuals(model, tracker_pose, joints, points, arm=1):
    """``|R x_L + T - fk(theta)|`` with the tracker pose as a 6-vector or 4x4."""
    T = np.asarray(tracker_pose, dtype=float)
    if T.shape != (4, 4):
        T = vector_to_pose(T)
    fk = forward_kinematics(model.chain(TRACKER_CHAINS[arm]), np.atleast_2d(joints))[:, :3, 3]
    mapped = np.atleast_2d(points) @ T[:3, :3].T + T[:3, 3]
    return np.linalg.norm(mapped - fk, axis=1)


def fit_tracker_pose(model, joints, points, arm=1):
    """Arun fit of tracker-frame points onto forward-kinematics points (6-vector)."""
    fk = forward_kinematics(model.chain(TRACKER_CHAINS[arm]), np.atleast_2d(joints))[:, :3, 3]
    return pose_to_vector(arun_fit(np.atleast_2d(points), fk))


# --- blocks -----------------------------------------------------------------

class Block:
    kind = ""

    def __init__(self, name, scale, n_configs):
        self.name = name
        self.scale = np.asarray(scale, dtype=float)
        self.n_configs = n_configs
        self.last_skipped = 0

    def __len__(self):
        return len(self.scale)

    def evaluate(self, model):
        raise NotImplementedError


class SelfContactBlock(Block):
    kind = "self-contact"

    def __init__(self, joints, scale, pose_ids=()):
        super().__init__("self-contact", scale, len(joints))
        self.joints = np.asarray(joints, dtype=float)
        self.pose_ids = tuple(pose_ids)

    def evaluate(self, model):
        return self_contact_residual(model, self.joints)


class PlaneBlock(Block):
    kind = "planes"

    def __init__(self, group, joints, arms, scale, pose_ids=()):
        super().__init__(f"plane:{group}", scale, len(joints))
        if len(joints) < 3:
            raise ConfigError(f"plane group {group} has fewer than 3 poses")
        self.group = group
        self.joints = np.asarray(joints, dtype=float)
        self.arms = np.asarray(arms, dtype=int)
        self.pose_ids = tuple(pose_ids)

    def centres(self, model):
        p = np.empty((len(self.joints), 3))
        for arm in np.unique(self.arms):
            m = self.arms == arm
            p[m] = _positions(model, int(arm), self.joints[m])
        return p

    def plane(self, model):
        return contact_plane(self.centres(model), model.ee_radius)

    def evaluate(self, model):
        p = self.centres(model)
        plane = contact_plane(p, model.ee_radius)
        return np.abs(plane.signed_distance(p)) - model.ee_radius


class ReprojectionBlock(Block):
    kind = "self-observation"

    def __init__(self, pose_joints, pose_index, arms, cams, faces, uv, scale, model):
        super().__init__("reprojection", scale, len(pose_joints))
        self.pose_joints = np.asarray(pose_joints, dtype=float)
        self.pose_index = np.asarray(pose_index, dtype=int)
        self.arms = np.asarray(arms, dtype=int)
        self.cams = np.asarray(cams, dtype=int)
        self.uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        faces = np.asarray(faces, dtype=int)
        known = model.marker_layout
        unknown = sorted(set(faces.tolist()) - set(known))
        if unknown:
            raise ConfigError(f"marker faces {unknown} are not in the marker layout")
        self.faces = faces
        self.groups = []
        for arm in np.unique(self.arms):
            for cam in np.unique(self.cams):
                m = np.flatnonzero((self.arms == arm) & (self.cams == cam))
                if len(m):
                    self.groups.append((int(arm), int(cam), m))

    @classmethod
    def from_records(cls, model, records, scale, keys=None):
        """Block from marker records; ``keys`` tell poses apart across datasets
        whose pose ids overlap (default: the pose id itself)."""
        keys = [r.pose_id for r in records] if keys is None else list(keys)
        pose_keys = list(dict.fromkeys(keys))
        index = {p: i for i, p in enumerate(pose_keys)}
        joints = {}
        for k, r in zip(keys, records):
            joints.setdefault(k, r.joints)
        pj = np.array([joints[p] for p in pose_keys], dtype=float).reshape(-1, 13)
        n = len(records)
        if scale is None:
            scale = np.ones(2 * n)
        return cls(pj, [index[k] for k in keys], [r.arm_idx for r in records],
                   [r.camera_idx for r in records], [r.marker_face for r in records],
                   [r.pixel for r in records], scale, model)

    def marker_points_camera(self, model):
        """Marker centres in their observing camera's frame, (N, 3)."""
        out = np.empty((len(self.arms), 3))
        ee = {a: forward_kinematics(model.arm(a), self.pose_joints) for a in np.unique(self.arms)}
        cams = {c: forward_kinematics(model.camera_chain(c), self.pose_joints)
                for c in np.unique(self.cams)}
        tm = np.stack([model.marker_layout[int(f)][:3, 3] for f in self.faces])
        for arm, cam, m in self.groups:
            E = ee[arm][self.pose_index[m]]
            C = cams[cam][self.pose_index[m]]
            pb = np.einsum("nij,nj->ni", E[:, :3, :3], tm[m]) + E[:, :3, 3]
            out[m] = np.einsum("nji,nj->ni", C[:, :3, :3], pb - C[:, :3, 3])
        return out

    def evaluate(self, model):
        pc = self.marker_points_camera(model)
        res = np.zeros((len(pc), 2))
        skipped = 0
        for arm, cam, m in self.groups:
            z = pc[m, 2]
            ok = z > 0
            skipped += int(np.count_nonzero(~ok))
            idx = m[ok]
            res[idx] = project_points(model.intrinsics(cam), pc[idx]) - self.uv[idx]
        self.last_skipped = skipped
        return res.reshape(-1)


class TrackerBlock(Block):
    kind = "tracker"

    def __init__(self, joints, points, scale, arm=1, pose_ids=()):
        super().__init__("tracker", scale, len(joints))
        self.joints = np.asarray(joints, dtype=float)
        self.points = np.asarray(points, dtype=float)
        self.arm = arm
        self.pose_ids = tuple(pose_ids)

    def evaluate(self, model):
        return tracker_residuals(model, model.tracker_pose, self.joints, self.points, self.arm)

    def fit_pose(self, model):
        return fit_tracker_pose(model, self.joints, self.points, self.arm)


# --- system -------------------------------------------------------------------

@dataclass(frozen=True)
class SystemConfig:
    approaches: tuple = ("self-contact",)
    plane_groups: tuple = PLANE_GROUPS
    so_sources: tuple = ("st",) + PLANE_GROUPS
    so_cameras: tuple = (1, 2)
    so_arms: tuple = (1, 2)
    tracker_arm: int = 1

    def __post_init__(self):
        approaches = tuple(self.approaches)
        if "all" in approaches:
            approaches = ("self-contact", "planes", "self-observation")
        bad = set(approaches) - set(APPROACHES)
        if bad:
            raise ConfigError(f"unknown approaches {sorted(bad)}")
        object.__setattr__(self, "approaches", approaches)
        for name in ("plane_groups", "so_sources", "so_cameras", "so_arms"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def to_dict(self):
        return {"approaches": list(self.approaches), "plane_groups": list(self.plane_groups),
                "so_sources": list(self.so_sources), "so_cameras": list(self.so_cameras),
                "so_arms": list(self.so_arms), "tracker_arm": self.tracker_arm}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ResidualSystem:
    """Stacked, scaled residual blocks evaluated at parameter vectors.

    ``model`` holds every fixed quantity (the evaluation context); the
    ``selection`` picks which of its parameters the vector ``x`` replaces.
    """

    def __init__(self, model, selection, blocks, config=None, policy=None, skipped=None):
        if not blocks:
            raise ConfigError("residual system has no blocks")
        self.model = model
        self.selection = selection.validate(model)
        self.blocks = list(blocks)
        self.config = config
        self.policy = policy
        self.skipped = dict(skipped or {})

    def __len__(self):
        return sum(len(b) for b in self.blocks)

    @property
    def x0(self):
        return self.selection.values(self.model)

    @property
    def n_configs(self):
        return sum(b.n_configs for b in self.blocks)

    @property
    def block_names(self):
        return [b.name for b in self.blocks]

    def model_at(self, x):
        return self.selection.apply(self.model, x)

    def block_residuals(self, x, scaled=True):
        m = self.model_at(x)
        out = {}
        for b in self.blocks:
            r = b.evaluate(m)
            out[b.name] = r * b.scale if scaled else r
        return out

    def residuals(self, x, scaled=True):
        return np.concatenate(list(self.block_residuals(x, scaled).values()))

    def __call__(self, x):
        return self.residuals(x)

    def behind_camera(self):
        return sum(b.last_skipped for b in self.blocks)

    def with_model(self, model):
        """Same blocks and scales over a different fixed context."""
        return ResidualSystem(model, self.selection, self.blocks, self.config, self.policy,
                              self.skipped)

    def with_selection(self, selection):
        return ResidualSystem(self.model, selection, self.blocks, self.config, self.policy,
                              self.skipped)

    def subsystem(self, kinds):
        blocks = [b for b in self.blocks if b.kind in kinds]
        return ResidualSystem(self.model, self.selection, blocks, self.config, self.policy,
                              self.skipped)


def _group_datasets(datasets):
    by_prov = {}
    for ds in datasets:
        by_prov.setdefault(ds.provenance, []).append(ds)
    return {p: v[0] if len(v) == 1 else merge(v, p, p) for p, v in by_prov.items()}


def _camera_distance(model, joints, points):
    """Mean distance from ``points`` (P,3) to the pupils of all modelled cameras."""
    d = []
    for cam, chain in CAMERA_CHAINS.items():
        if chain in model.chain_defs and chain in model.cameras:
            c = forward_kinematics(model.chain(chain), joints)[:, :3, 3]
            d.append(np.linalg.norm(points - c, axis=1))
    if not d:
        raise ConfigError("mu scaling needs at least one modelled camera")
    return np.mean(d, axis=0)


def assemble(config, datasets, model, selection, policy=None):
    """Build the stacked residual system for the requested approaches."""
    policy = policy or ScalePolicy()
    if isinstance(datasets, dict):
        datasets = list(datasets.values())
    data = _group_datasets(datasets)
    use_so = "self-observation" in config.approaches
    use_mu = policy.mu_mode == "on" or (policy.mu_mode == "auto" and use_so)
    blocks, skipped = [], {}

    if "self-contact" in config.approaches:
        ds = data.get("st")
        if ds is None or ds.n_poses == 0:
            raise ConfigError("self-contact requested but no 'st' dataset given")
        q = ds.pose_joints
        k = np.full(len(q), policy.eta["self-contact"])
        if use_mu:
            mid = 0.5 * (_positions(model, 1, q) + _positions(model, 2, q))
            k = k * policy.p_st * policy.mu(_camera_distance(model, q, mid))
        blocks.append(SelfContactBlock(q, k, ds.pose_ids))

    if "planes" in config.approaches:
        groups = [g for g in config.plane_groups if g in data and data[g].n_poses]
        if not groups:
            raise ConfigError("planes requested but no plane datasets (hp1/hp2/vp) given")
        for g in groups:
            ds = data[g]
            q, arms = ds.pose_joints, ds.pose_arm
            k = np.full(len(q), policy.eta["planes"])
            if use_mu:
                p = np.empty((len(q), 3))
                for a in np.unique(arms):
                    p[arms == a] = _positions(model, int(a), q[arms == a])
                k = k * policy.p_p * policy.mu(_camera_distance(model, q, p))
            blocks.append(PlaneBlock(g, q, arms, k, ds.pose_ids))

    if use_so:
        recs, keys = [], []
        for src in config.so_sources:
            if src in data:
                sel = [r for r in data[src].records if r.has_marker
                       and r.camera_idx in config.so_cameras and r.arm_idx in config.so_arms]
                recs += sel
                keys += [(src, r.pose_id) for r in sel]
        if not recs:
            raise ConfigError("self-observation requested but no marker detections available")
        k = np.full(2 * len(recs), policy.eta["self-observation"] * policy.p_so)
        blocks.append(ReprojectionBlock.from_records(model, recs, k, keys))

    if "tracker" in config.approaches:
        ds = data.get("lt")
        if ds is None:
            raise ConfigError("tracker requested but no 'lt' dataset given")
        ids, q, pts = ds.tracker_table()
        skipped["tracker"] = ds.n_poses - len(ids)
        if not ids:
            raise ConfigError("tracker dataset has no tracker points")
        k = np.full(len(q), policy.eta["tracker"])
        blocks.append(TrackerBlock(q, pts, k, config.tracker_arm, ids))

    return ResidualSystem(model, selection, blocks, config, policy, skipped)
