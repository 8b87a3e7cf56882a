"""Flat parameter vectors over a selected subset of model parameters.

A ``ParamEntry`` names one optimisation variable. It usually drives a single
``(link, field)`` pair, but may drive several links at once (tying, e.g. both
end-effector lengths), or one component of the tracker pose.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .kinematics import DH_FIELDS, angle_diff

TRACKER = "tracker"
TRACKER_FIELDS = ("rx", "ry", "rz", "tx", "ty", "tz")
ANGULAR_FIELDS = ("alpha", "offset", "rx", "ry", "rz")
CAMERA_MODES = ("noCams", "fixedCams", "camCalib")


@dataclass(frozen=True)
class ParamEntry:
    links: tuple
    field: str

    def __post_init__(self):
        links = (self.links,) if isinstance(self.links, str) else tuple(self.links)
        object.__setattr__(self, "links", links)
        if not links:
            raise ConfigError("parameter entry without target")

    @property
    def is_tracker(self):
        return self.links == (TRACKER,)

    @property
    def angular(self):
        return self.field in ANGULAR_FIELDS

    @property
    def unit(self):
        return "rad" if self.angular else "m"

    @property
    def label(self):
        return f"{self.field}_{'='.join(self.links)}"


def entry(spec):
    """Build an entry from ``"offset:L1"``, ``"d:EE1=EE2"`` or ``"tx:tracker"``."""
    if isinstance(spec, ParamEntry):
        return spec
    fld, _, target = spec.partition(":")
    return ParamEntry(tuple(target.split("=")), fld)


@dataclass(frozen=True)
class ParamSelection:
    entries: tuple

    def __post_init__(self):
        entries = tuple(entry(e) for e in self.entries)
        object.__setattr__(self, "entries", entries)
        seen = set()
        for e in entries:
            for link in e.links:
                key = (link, e.field)
                if key in seen:
                    raise ConfigError(f"duplicate parameter {e.field} of {link}")
                seen.add(key)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __add__(self, other):
        return ParamSelection(self.entries + tuple(e for e in other.entries if e not in self.entries))

    @property
    def labels(self):
        return [e.label for e in self.entries]

    @property
    def units(self):
        return [e.unit for e in self.entries]

    @property
    def angular_mask(self):
        return np.array([e.angular for e in self.entries], dtype=bool)

    @property
    def has_tracker(self):
        return any(e.is_tracker for e in self.entries)

    def validate(self, model):
        for e in self.entries:
            if e.is_tracker:
                if e.field not in TRACKER_FIELDS:
                    raise ConfigError(f"unknown tracker field {e.field!r}")
                continue
            if e.field not in DH_FIELDS:
                raise ConfigError(f"unknown DH field {e.field!r}")
            for link in e.links:
                if link not in model.links:
                    raise ConfigError(f"parameter refers to unknown link {link!r}")
        return self

    def values(self, model):
        """Current values in selection order (first link of a tied entry)."""
        self.validate(model)
        out = np.empty(len(self.entries))
        for i, e in enumerate(self.entries):
            if e.is_tracker:
                out[i] = model.tracker_pose[TRACKER_FIELDS.index(e.field)]
            else:
                out[i] = model.get(e.links[0], e.field)
        return out

    def apply(self, model, x):
        """New model with the selected parameters set to ``x``."""
        x = np.asarray(x, dtype=float)
        if x.shape != (len(self.entries),):
            raise ConfigError(f"parameter vector has {x.size} entries, selection {len(self)}")
        if not np.all(np.isfinite(x)):
            raise ConfigError("non-finite parameter value")
        updates = {}
        tracker = None
        for e, v in zip(self.entries, x):
            if e.is_tracker:
                if tracker is None:
                    tracker = list(model.tracker_pose)
                tracker[TRACKER_FIELDS.index(e.field)] = v
            else:
                for link in e.links:
                    updates[(link, e.field)] = v
        return model.with_values(updates, tracker_pose=tracker)

    def difference(self, x, baseline):
        """Element-wise x - baseline, shortest-angle for angular entries."""
        x = np.asarray(x, dtype=float)
        b = np.asarray(baseline, dtype=float)
        d = x - b
        mask = self.angular_mask
        d[mask] = angle_diff(x[mask], b[mask])
        return d

    def to_list(self):
        return [f"{e.field}:{'='.join(e.links)}" for e in self.entries]

    @classmethod
    def from_list(cls, specs):
        return cls(tuple(entry(s) for s in specs))


def _sel(*specs):
    return ParamSelection(tuple(entry(s) for s in specs))


def tracker_block():
    return _sel(*(f"{f}:{TRACKER}" for f in TRACKER_FIELDS))


def camera_preset():
    specs = []
    for tt, c in (("TT3", "C1"), ("TT4", "C2")):
        specs += [f"a:{tt}", f"d:{tt}", f"alpha:{tt}", f"offset:{tt}", f"d:{c}", f"offset:{c}"]
    return _sel(*specs)


def preset(name, side=1, cameras="noCams", tie_ee=False, tracker=False):
    """Parameter subsets of the calibration experiments.

    ``end_effector``, ``offsets``, ``offsets_tracker``, ``all_dh`` and
    ``camera``. Under ``fixedCams``/``camCalib`` the end-effector rotation
    offset is added to the arm presets; ``camCalib`` also adds the camera
    extrinsics.
    """
    if cameras not in CAMERA_MODES:
        raise ConfigError(f"unknown camera mode {cameras!r}")
    s = str(side)
    ee = f"EE{s}=EE{3 - int(s)}" if tie_ee else f"EE{s}"
    if name == "end_effector":
        specs = [f"d:{ee}"]
    elif name == "offsets":
        specs = [f"offset:{j}{s}" for j in "LURB"] + [f"d:{ee}"]
    elif name == "offsets_tracker":
        specs = [f"offset:{j}{s}" for j in "LURB"] + [f"a:EEL{s}", f"d:EEL{s}", f"offset:EEL{s}"]
    elif name == "all_dh":
        specs = [f"a:L{s}", f"d:L{s}", f"offset:L{s}"]
        for j in "URB":
            specs += [f"a:{j}{s}", f"d:{j}{s}", f"alpha:{j}{s}", f"offset:{j}{s}"]
        specs += [f"a:T{s}", f"alpha:T{s}", f"d:{ee}"]
    elif name == "camera":
        return camera_preset()
    else:
        raise ConfigError(f"unknown parameter preset {name!r}")
    sel = _sel(*specs)
    if cameras != "noCams" and name != "offsets_tracker":
        ee_off = f"offset:EE{s}=EE{3 - int(s)}" if tie_ee else f"offset:EE{s}"
        sel = sel + _sel(ee_off)
    if cameras == "camCalib":
        sel = sel + camera_preset()
    if tracker:
        sel = sel + tracker_block()
    return sel


def from_calibrate_flags(model, links):
    """Selection built from the per-field calibrate flags of ``links``."""
    return _sel(*(f"{f}:{name}" for name in links for f in model.links[name].calibrate))
