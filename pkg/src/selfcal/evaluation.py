"""RMSE reporting, parameter corrections and cross-dataset evaluation.

RMSE of a residual kind is the root mean square over its stacked entries,
``sqrt(mean((k * g)**2))``; reprojection therefore counts u and v rows
separately. Metric kinds are reported in mm, reprojection in px.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .fitting import vector_to_pose
from .residuals import KIND_LABELS, tracker_residuals

UNITS = {"self-contact": ("mm", 1e3), "planes": ("mm", 1e3),
         "self-observation": ("px", 1.0), "tracker": ("mm", 1e3)}


def rmse(system, x=None):
    """Per-kind RMSE at ``x``: raw (display units) and scaled (with the block's k).

    Kinds without entries are absent from the result.
    """
    x = system.x0 if x is None else np.asarray(x, dtype=float)
    m = system.model_at(x)
    stacks = {}
    for b in system.blocks:
        r = b.evaluate(m)
        raw, scaled = stacks.setdefault(b.kind, ([], []))
        raw.append(r)
        scaled.append(r * b.scale)
    out = {}
    for kind, (raw, scaled) in stacks.items():
        raw, scaled = np.concatenate(raw), np.concatenate(scaled)
        if raw.size == 0:
            continue
        unit, factor = UNITS[kind]
        out[kind] = {"label": KIND_LABELS[kind], "unit": unit, "count": int(raw.size),
                     "rmse": float(np.sqrt(np.mean(raw ** 2)) * factor),
                     "scaled": float(np.sqrt(np.mean(scaled ** 2)))}
    return out


def corrections(selection, x, baseline, baseline_name="nominal", baseline_selection=None):
    """Rows (label, unit, value, baseline, correction) with shortest-angle differences."""
    if baseline_selection is not None and baseline_selection.to_list() != selection.to_list():
        raise ConfigError("corrections need the same parameter selection for both vectors")
    x = np.asarray(x, dtype=float)
    b = np.asarray(baseline, dtype=float)
    if x.shape != b.shape or x.size != len(selection):
        raise ConfigError("parameter and baseline vectors do not match the selection")
    d = selection.difference(x, b)
    return [{"label": l, "unit": u, "value": float(v), "baseline": float(bv),
             "baseline_name": baseline_name, "correction": float(dv)}
            for l, u, v, bv, dv in zip(selection.labels, selection.units, x, b, d)]


def trial_stats(samples):
    """Mean and sample standard deviation over trials (rows)."""
    a = np.atleast_2d(np.asarray(samples, dtype=float))
    sd = a.std(axis=0, ddof=1) if len(a) > 1 else np.zeros(a.shape[1])
    return a.mean(axis=0), sd


def cross_evaluate(model, dataset, tracker_pose, retroreflector=None, arm=1):
    """Tracker RMSE (mm) of ``model``'s kinematics on a tracker dataset.

    ``tracker_pose`` (6-vector or 4x4) and ``retroreflector`` (``{(link,
    field): value}`` for the EEL link) are held fixed so that every compared
    parameter set is judged against the same external reference.
    """
    if tracker_pose is None:
        raise ConfigError("cross evaluation needs a tracker pose")
    T = np.asarray(tracker_pose, dtype=float)
    if T.shape != (4, 4):
        T = vector_to_pose(T)
    if retroreflector:
        model = model.with_values(dict(retroreflector))
    ids, q, pts = dataset.tracker_table()
    if not ids:
        raise ConfigError("dataset has no tracker points")
    r = tracker_residuals(model, T, q, pts, arm)
    return {"tracker": {"label": KIND_LABELS["tracker"], "unit": "mm", "count": int(r.size),
                        "rmse": float(np.sqrt(np.mean(r ** 2)) * 1e3),
                        "scaled": float(np.sqrt(np.mean(r ** 2)))}}


@dataclass
class EvalReport:
    train: dict = field(default_factory=dict)
    test: dict = field(default_factory=dict)
    before: dict = field(default_factory=dict)
    corrections: list = field(default_factory=list)
    baseline: str = "nominal"
    trials: dict = field(default_factory=dict)

    def to_dict(self):
        return {"train": self.train, "test": self.test, "before": self.before,
                "corrections": self.corrections, "baseline": self.baseline,
                "trials": self.trials}

    def long_rows(self, run=""):
        """Plot-ready rows: (run, split, kind, label, unit, count, rmse, scaled)."""
        rows = []
        blocks = [("before:" + k, v) for k, v in self.before.items()]
        blocks += [("train", self.train), ("test", self.test)]
        for split_name, kinds in blocks:
            for kind, v in kinds.items():
                rows.append([run, split_name, kind, v["label"], v["unit"], v["count"],
                             repr(v["rmse"]), repr(v["scaled"])])
        return rows


def evaluate(train_system, x, test_system=None, baseline=None):
    """EvalReport with train/test RMSE at ``x`` and "before" RMSE at ``baseline``."""
    rep = EvalReport()
    rep.train = rmse(train_system, x)
    if test_system is not None:
        rep.test = rmse(test_system, x)
    if baseline is not None:
        rep.before = {"train": rmse(train_system, baseline)}
        if test_system is not None:
            rep.before["test"] = rmse(test_system, baseline)
    return rep


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_long_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "split", "kind", "label", "unit", "count", "rmse", "scaled"])
        w.writerows(rows)


def write_corrections_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "unit", "value", "baseline", "baseline_name", "correction"])
        for r in rows:
            w.writerow([r["label"], r["unit"], repr(r["value"]), repr(r["baseline"]),
                        r["baseline_name"], repr(r["correction"])])
