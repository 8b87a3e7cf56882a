"""Observability indices of the identification Jacobian.

With singular values s_1 >= ... >= s_m of J (rows: residuals, columns:
parameters) and n configurations:

    O1 = (s_1 s_2 ... s_m)^(1/m) / sqrt(n)
    O2 = s_min / s_max
    O3 = s_min
    O4 = s_min^2 / s_max
"""

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .solver import SolverOptions, numeric_jacobian

log = logging.getLogger(__name__)

ZERO_COLUMN_TOL = 1e-10


@dataclass
class ObservabilityReport:
    singular_values: np.ndarray
    O1: float
    O2: float
    O3: float
    O4: float
    identifiable: np.ndarray
    m: int
    n: int
    rank: int
    labels: list = field(default_factory=list)
    column_norms: np.ndarray = None
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "O1": float(self.O1), "O2": float(self.O2), "O3": float(self.O3), "O4": float(self.O4),
            "m": self.m, "n": self.n, "rank": self.rank,
            "singular_values": [float(s) for s in self.singular_values],
            "parameters": [{"label": l, "column_norm": float(c), "identifiable": bool(f)}
                           for l, c, f in zip(self.labels, self.column_norms, self.identifiable)],
            "warnings": list(self.warnings),
        }


def indices(J, n_configs, labels=None, noise_floor=None):
    """Observability report for Jacobian ``J`` over ``n_configs`` configurations.

    ``m`` is the number of columns, not the numerical rank (which is reported
    separately). A column with norm below 1e-10 marks its parameter as
    unidentifiable; such a column makes O3 and O4 zero. ``noise_floor`` (the
    expected size of finite-difference noise in the singular values) triggers
    a warning when s_min is within 10x of it.
    """
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.size == 0:
        raise ConfigError("Jacobian must be a non-empty 2-D array")
    if n_configs < 1:
        raise ConfigError("n_configs must be positive")
    m = J.shape[1]
    s = np.zeros(m)
    sv = np.linalg.svd(J, compute_uv=False)
    s[:len(sv)] = sv
    col = np.linalg.norm(J, axis=0)
    ident = col >= ZERO_COLUMN_TOL
    smax, smin = s[0], s[-1]
    if not ident.all():
        smin = 0.0
    with np.errstate(divide="ignore"):
        o1 = float(np.exp(np.mean(np.log(s)))) / np.sqrt(n_configs) if smin > 0 else 0.0
    o2 = smin / smax if smax > 0 else 0.0
    o4 = smin ** 2 / smax if smax > 0 else 0.0
    rank = int(np.sum(s > max(J.shape) * np.finfo(float).eps * smax)) if smax > 0 else 0
    msgs = []
    if noise_floor is not None and smin < 10 * noise_floor:
        msgs.append(f"smallest singular value {smin:.3g} is within 10x of the "
                    f"finite-difference noise floor {noise_floor:.3g}; rank may be overstated")
    if rank < m:
        msgs.append(f"numerical rank {rank} is below the parameter count {m}")
    for msg in msgs:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    labels = list(labels) if labels is not None else [f"x{i}" for i in range(m)]
    return ObservabilityReport(s, o1, o2, float(smin), o4, ident, m, int(n_configs), rank,
                               labels, col, msgs)


def fd_noise_floor(residuals, steps):
    """Rough size of round-off noise in a central-difference Jacobian column."""
    r = np.asarray(residuals, dtype=float)
    h = float(np.min(steps))
    return np.finfo(float).eps * np.sqrt(r.size) * max(np.max(np.abs(r)), 1.0) / h


def system_indices(system, x=None, opts=None, scaled=True):
    """Indices of a ResidualSystem's Jacobian at ``x`` (default: its current values).

    With ``scaled`` the columns are multiplied by the solver's parameter
    scales (1e-2 m / rad by default), otherwise J is taken in SI units.
    """
    opts = opts or SolverOptions()
    x = system.x0 if x is None else np.asarray(x, dtype=float)
    J = numeric_jacobian(system, x, opts=opts)
    angular = system.selection.angular_mask
    steps = np.where(angular, opts.fd_step_rad, opts.fd_step_m)
    floor = fd_noise_floor(system.residuals(x), steps)
    if scaled:
        sc = np.where(angular, opts.scale_rad, opts.scale_m)
        J = J * sc
        floor *= float(np.max(sc))
    return indices(J, system.n_configs, system.selection.labels, floor)


def write_csv(reports, path):
    """Long-format table: one row per (report name, parameter) plus index rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "quantity", "parameter", "value"])
        for name, rep in reports.items():
            for key in ("O1", "O2", "O3", "O4"):
                w.writerow([name, key, "", repr(float(getattr(rep, key)))])
            w.writerow([name, "rank", "", rep.rank])
            for i, s in enumerate(rep.singular_values):
                w.writerow([name, "singular_value", i, repr(float(s))])
            for l, c, f in zip(rep.labels, rep.column_norms, rep.identifiable):
                w.writerow([name, "column_norm", l, repr(float(c))])
                w.writerow([name, "identifiable", l, int(bool(f))])
