"""Calibration dataset records, CSV ingestion and pose-level train/test splitting.

One CSV line is one data point. A pose with several detected markers spans
several lines that repeat the pose id and joint angles. Missing values are
written as ``NaN`` in files and become ``None`` in memory.
"""

import csv
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError, IntegrityError, ParseError
from .kinematics import JOINT_NAMES, N_JOINTS

PROVENANCES = ("st", "hp1", "hp2", "vp", "lt", "synthetic")
PLANE_GROUPS = ("hp1", "hp2", "vp")

JOINT_COLUMNS = tuple("theta_" + n for n in JOINT_NAMES)
COLUMNS = (("pose_id", "marker_face", "arm_idx", "camera_idx", "u", "v")
           + JOINT_COLUMNS + ("tracker_x", "tracker_y", "tracker_z", "u95"))
OPTIONAL_COLUMNS = ("tracker_t", "F_ra_before", "F_ra_after", "F_la_before", "F_la_after")


@dataclass(frozen=True)
class DatasetRecord:
    pose_id: int
    arm_idx: int
    joints: tuple
    marker_face: int = None
    camera_idx: int = None
    pixel: tuple = None
    tracker_point: tuple = None
    u95: float = None
    tracker_time: float = None
    forces: tuple = None

    def __post_init__(self):
        if len(self.joints) != N_JOINTS:
            raise IntegrityError(f"pose {self.pose_id}: expected {N_JOINTS} joint angles")
        if not all(math.isfinite(v) for v in self.joints):
            raise IntegrityError(f"pose {self.pose_id}: non-finite joint angle")
        if self.arm_idx not in (1, 2):
            raise IntegrityError(f"pose {self.pose_id}: arm index must be 1 or 2")
        present = {self.pixel is not None, self.marker_face is not None,
                   self.camera_idx is not None}
        if len(present) != 1:
            raise IntegrityError(
                f"pose {self.pose_id}: marker face, camera and pixel must all be present or absent")
        if self.camera_idx is not None and self.camera_idx not in (1, 2):
            raise IntegrityError(f"pose {self.pose_id}: camera index must be 1 or 2")

    @property
    def has_marker(self):
        return self.pixel is not None

    @property
    def has_tracker(self):
        return self.tracker_point is not None


@dataclass(frozen=True)
class Dataset:
    records: tuple
    provenance: str = "synthetic"
    name: str = ""

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ConfigError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "records", tuple(self.records))
        joints = {}
        for r in self.records:
            prev = joints.setdefault(r.pose_id, r.joints)
            if prev != r.joints:
                raise IntegrityError(f"pose {r.pose_id}: records disagree on joint angles")

    def __len__(self):
        return len(self.records)

    @cached_property
    def pose_ids(self):
        """Pose ids in order of first appearance."""
        return tuple(dict.fromkeys(r.pose_id for r in self.records))

    @property
    def n_poses(self):
        return len(self.pose_ids)

    @cached_property
    def pose_joints(self):
        first = {}
        for r in self.records:
            first.setdefault(r.pose_id, r.joints)
        return np.array([first[p] for p in self.pose_ids], dtype=float).reshape(-1, N_JOINTS)

    @cached_property
    def pose_arm(self):
        """Arm index of the first record of each pose (the contacting arm for planes)."""
        first = {}
        for r in self.records:
            first.setdefault(r.pose_id, r.arm_idx)
        return np.array([first[p] for p in self.pose_ids], dtype=int)

    def groups(self):
        out = {}
        for r in self.records:
            out.setdefault(r.pose_id, []).append(r)
        return out

    @property
    def n_markers(self):
        return sum(r.has_marker for r in self.records)

    def marker_records(self):
        return [r for r in self.records if r.has_marker]

    def tracker_table(self):
        """(pose ids, joints (P,13), tracker points (P,3)) for poses with tracker data."""
        seen = {}
        for r in self.records:
            if r.has_tracker and r.pose_id not in seen:
                seen[r.pose_id] = r
        ids = list(seen)
        joints = np.array([seen[p].joints for p in ids], dtype=float).reshape(-1, N_JOINTS)
        pts = np.array([seen[p].tracker_point for p in ids], dtype=float).reshape(-1, 3)
        return ids, joints, pts

    def subset_poses(self, pose_ids):
        keep = set(pose_ids)
        return Dataset(tuple(r for r in self.records if r.pose_id in keep), self.provenance, self.name)


def filter_dataset(dataset, predicate):
    """Records for which ``predicate(record)`` holds; poses survive with any record."""
    return Dataset(tuple(r for r in dataset.records if predicate(r)), dataset.provenance,
                   dataset.name)


def split(dataset, ratio=0.7, seed=0):
    """Pose-level train/test split: seeded shuffle of pose ids, then a prefix cut."""
    ids = sorted(dataset.pose_ids)
    if len(ids) < 2:
        raise ConfigError("need at least two poses to split")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = min(max(int(round(ratio * len(ids))), 1), len(ids) - 1)
    train = {ids[i] for i in order[:n_train]}
    test = {ids[i] for i in order[n_train:]}
    return dataset.subset_poses(train), dataset.subset_poses(test)


def _opt_float(text):
    v = float(text)
    return None if math.isnan(v) else v


def _opt_int(text, what, line):
    v = _opt_float(text)
    if v is None:
        return None
    if v != int(v):
        raise ParseError(f"{what} must be an integer, got {text!r}", line)
    return int(v)


def _fmt(v):
    if v is None:
        return "NaN"
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def _is_header(row):
    try:
        float(row[0])
        return False
    except ValueError:
        return True


def load_csv(path, provenance, columns=None, name=None):
    """Read a dataset file.

    The header row, if present, names the columns (any order, extra optional
    columns allowed). Without a header, ``columns`` or the default order
    ``COLUMNS`` is used.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    start = 0
    if rows and _is_header(rows[0]):
        columns = [c.strip() for c in rows[0]]
        start = 1
    columns = list(columns or COLUMNS)
    missing = [c for c in COLUMNS if c not in columns]
    if missing:
        raise ParseError(f"{path}: missing columns {missing}")
    idx = {c: i for i, c in enumerate(columns)}

    records = []
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(columns):
            raise ParseError(f"expected {len(columns)} fields, got {len(row)}", lineno)
        try:
            get = lambda c: row[idx[c]].strip()
            pose = _opt_int(get("pose_id"), "pose_id", lineno)
            arm = _opt_int(get("arm_idx"), "arm_idx", lineno)
            if pose is None or arm is None:
                raise ParseError("pose_id and arm_idx are required", lineno)
            face = _opt_int(get("marker_face"), "marker_face", lineno)
            cam = _opt_int(get("camera_idx"), "camera_idx", lineno)
            u, v = _opt_float(get("u")), _opt_float(get("v"))
            pixel = None if u is None or v is None else (u, v)
            if pixel is None:
                face = cam = None
            joints = tuple(float(get(c)) for c in JOINT_COLUMNS)
            tp = [_opt_float(get(c)) for c in ("tracker_x", "tracker_y", "tracker_z")]
            tracker = None if any(t is None for t in tp) else tuple(tp)
            u95 = _opt_float(get("u95"))
            t_l = _opt_float(get("tracker_t")) if "tracker_t" in idx else None
            forces = None
            if all(c in idx for c in OPTIONAL_COLUMNS[1:]):
                f = [_opt_float(get(c)) for c in OPTIONAL_COLUMNS[1:]]
                forces = None if all(x is None for x in f) else tuple(f)
            records.append(DatasetRecord(pose, arm, joints, face, cam, pixel, tracker, u95,
                                         t_l, forces))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from exc
        except IntegrityError as exc:
            raise ParseError(str(exc), lineno) from exc
    try:
        return Dataset(tuple(records), provenance, name or path.stem)
    except IntegrityError as exc:
        raise IntegrityError(f"{path}: {exc}") from exc


def save_csv(dataset, path):
    """Write ``dataset`` with a header; optional columns only when populated."""
    extra = any(r.tracker_time is not None or r.forces is not None for r in dataset.records)
    columns = list(COLUMNS) + (list(OPTIONAL_COLUMNS) if extra else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in dataset.records:
            pix = r.pixel or (None, None)
            tp = r.tracker_point or (None, None, None)
            row = [r.pose_id, r.marker_face, r.arm_idx, r.camera_idx, pix[0], pix[1],
                   *r.joints, *tp, r.u95]
            if extra:
                row += [r.tracker_time, *(r.forces or (None,) * 4)]
            w.writerow([_fmt(v) for v in row])


def merge(datasets, provenance, name=""):
    """Concatenate datasets of one provenance, renumbering pose ids to stay unique."""
    records, offset = [], 0
    for ds in datasets:
        remap = {p: i + offset for i, p in enumerate(ds.pose_ids)}
        records += [replace(r, pose_id=remap[r.pose_id]) for r in ds.records]
        offset += len(remap)
    return Dataset(tuple(records), provenance, name)

