"""Levenberg-Marquardt least squares with finite-difference Jacobians.

Internally every parameter is divided by a unit-family scale (1e-2 m or
1e-2 rad by default) so that damping acts on comparable magnitudes; inputs,
outputs and reports are always SI.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CalibrationError, ConfigError, NumericalError
from .residuals import ResidualSystem, SystemConfig, assemble

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 200
    cost_tolerance: float = 1e-12
    param_tolerance: float = 1e-12
    gradient_tolerance: float = 0.0
    abs_cost_tolerance: float = 1e-30
    lambda0: float = 1e-3
    lambda_up: float = 2.0
    lambda_down: float = 3.0
    max_rejections: int = 60
    fd_step_rad: float = 1e-7
    fd_step_m: float = 1e-7
    scale_rad: float = 1e-2
    scale_m: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if min(self.cost_tolerance, self.param_tolerance) <= 0:
            raise ConfigError("tolerances must be positive")
        if self.lambda_up <= 1 or self.lambda_down <= 1:
            raise ConfigError("damping factors must exceed 1")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SolveReport:
    x: np.ndarray
    x0: np.ndarray
    initial_cost: float
    final_cost: float
    iterations: int
    evaluations: int
    termination: str
    trace: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    units: list = field(default_factory=list)
    skipped: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "labels": list(self.labels),
            "units": list(self.units),
            "x": [float(v) for v in self.x],
            "x0": [float(v) for v in self.x0],
            "initial_cost": float(self.initial_cost),
            "final_cost": float(self.final_cost),
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "termination": self.termination,
            "trace": [{"cost": float(c), "lambda": float(l), "gradient_norm": float(g)}
                      for c, l, g in self.trace],
            "skipped": dict(self.skipped),
            "extras": self.extras,
        }


def _units(system, n):
    if isinstance(system, ResidualSystem):
        return system.selection.angular_mask
    return np.zeros(n, dtype=bool)


def _steps(angular, opts):
    return np.where(angular, opts.fd_step_rad, opts.fd_step_m)


def _evaluate(fun, x):
    try:
        r = np.asarray(fun(x), dtype=float)
    except CalibrationError:
        return None
    return r if np.all(np.isfinite(r)) else None


def numeric_jacobian(system, x, steps=None, opts=None, return_flags=False):
    """Central-difference Jacobian (rows residuals, columns parameters).

    A failing probe falls back to a one-sided difference; a column with both
    probes failing is zero. Flagged column indices are returned on request.
    """
    opts = opts or SolverOptions()
    x = np.asarray(x, dtype=float)
    fun = system.residuals if isinstance(system, ResidualSystem) else system
    if steps is None:
        steps = _steps(_units(system, x.size), opts)
    steps = np.broadcast_to(np.asarray(steps, dtype=float), x.shape)
    r0 = None
    cols, flagged = [], []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = steps[j]
        rp, rm = _evaluate(fun, x + e), _evaluate(fun, x - e)
        if rp is not None and rm is not None:
            cols.append((rp - rm) / (2 * steps[j]))
            continue
        flagged.append(j)
        if r0 is None:
            r0 = _evaluate(fun, x)
            if r0 is None:
                raise NumericalError("residuals are not finite at the linearisation point")
        if rp is not None:
            cols.append((rp - r0) / steps[j])
        elif rm is not None:
            cols.append((r0 - rm) / steps[j])
        else:
            cols.append(np.zeros_like(r0))
    if not cols:
        n = len(_evaluate(fun, x))
        J = np.zeros((n, 0))
    else:
        J = np.column_stack(cols)
    return (J, flagged) if return_flags else J


def solve(system, x0=None, opts=None):
    """Minimise ``sum(r(x)**2)`` from ``x0`` (defaults to the system's current values)."""
    opts = opts or SolverOptions()
    fun = system.residuals if isinstance(system, ResidualSystem) else system
    if x0 is None:
        if not isinstance(system, ResidualSystem):
            raise ConfigError("x0 is required for plain residual functions")
        x0 = system.x0
    x = np.array(x0, dtype=float)
    angular = _units(system, x.size)
    if isinstance(system, ResidualSystem) and x.size != len(system.selection):
        raise ConfigError("x0 length does not match the parameter selection")
    scale = np.where(angular, opts.scale_rad, opts.scale_m)
    steps = _steps(angular, opts)

    r = _evaluate(fun, x)
    if r is None:
        raise NumericalError("residuals are not finite at the initial parameters")
    if r.size == 0:
        raise ConfigError("empty residual vector")
    cost = float(r @ r)
    initial_cost = cost
    lam = opts.lambda0
    evaluations = 1
    trace = [(cost, lam, float("nan"))]
    termination = "max_iterations"
    it = 0

    if x.size == 0:
        termination = "no_parameters"
    while x.size and it < opts.max_iterations:
        if cost <= opts.abs_cost_tolerance:
            termination = "abs_cost"
            break
        J = numeric_jacobian(fun, x, steps, opts) * scale
        evaluations += 2 * x.size
        g = J.T @ r
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= opts.gradient_tolerance:
            termination = "gradient"
            break
        A = J.T @ J
        rejections = 0
        accepted = False
        while True:
            try:
                delta = np.linalg.solve(A + lam * np.eye(x.size), -g)
            except np.linalg.LinAlgError:
                delta = np.linalg.lstsq(A + lam * np.eye(x.size), -g, rcond=None)[0]
            x_new = x + scale * delta
            z = x / scale
            small_step = np.linalg.norm(delta) <= opts.param_tolerance * (np.linalg.norm(z) + opts.param_tolerance)
            r_new = _evaluate(fun, x_new)
            evaluations += 1
            cost_new = float(r_new @ r_new) if r_new is not None else np.inf
            if cost_new < cost:
                accepted = True
                break
            if small_step:
                termination = "param"
                break
            rejections += 1
            lam *= opts.lambda_up
            if rejections >= opts.max_rejections:
                termination = "damping"
                break
        if not accepted:
            break
        it += 1
        decrease = cost - cost_new
        x, r, cost = x_new, r_new, cost_new
        lam = max(lam / opts.lambda_down, 1e-15)
        trace.append((cost, lam, gnorm))
        if small_step:
            termination = "param"
            break
        if decrease <= opts.cost_tolerance * (cost + decrease):
            termination = "cost"
            break

    log.debug("LM finished: %s after %d iterations, cost %.3e -> %.3e",
              termination, it, initial_cost, cost)
    skipped = {}
    if isinstance(system, ResidualSystem):
        system.residuals(x)
        skipped = dict(system.skipped)
        skipped["behind_camera"] = system.behind_camera()
        labels, units = system.selection.labels, system.selection.units
    else:
        labels = [f"x{i}" for i in range(x.size)]
        units = [""] * x.size
    return SolveReport(x, np.array(x0, dtype=float), initial_cost, cost, it, evaluations,
                       termination, trace, labels, units, skipped)


def solve_tracker(dataset, model, selection, opts=None, arm=1, max_outer=50):
    """Alternate an Arun fit of the tracker pose with LM over the DH parameters.

    Tracker-pose entries in ``selection`` are ignored here: the pose is owned
    by the closed-form step. Stops when the joint cost changes by less than
    ``cost_tolerance`` (relative).
    """
    opts = opts or SolverOptions()
    dh_sel = type(selection)(tuple(e for e in selection.entries if not e.is_tracker))
    system = assemble(SystemConfig(("tracker",), tracker_arm=arm), [dataset], model, dh_sel)
    block = system.blocks[0]
    current = model
    x_start = dh_sel.values(model)
    initial_cost = None
    trace, evaluations, iterations = [], 0, 0
    termination = "max_outer"
    prev = None
    x = x_start
    for _ in range(max_outer):
        pose = block.fit_pose(current)
        current = current.with_values({}, tracker_pose=pose)
        sys_k = system.with_model(current)
        r = sys_k.residuals(x)
        cost_fit = float(r @ r)
        if initial_cost is None:
            r_nominal = system.with_model(model.with_values({}, tracker_pose=pose)).residuals(x_start)
            initial_cost = float(r_nominal @ r_nominal)
        if len(dh_sel):
            rep = solve(sys_k, x, opts)
            x = rep.x
            evaluations += rep.evaluations
            iterations += rep.iterations
            cost = rep.final_cost
        else:
            cost = cost_fit
        current = dh_sel.apply(current, x)
        trace.append((cost, float("nan"), float("nan")))
        if cost <= opts.abs_cost_tolerance:
            termination = "abs_cost"
            break
        if prev is not None and abs(prev - cost) <= opts.cost_tolerance * max(prev, cost):
            termination = "cost"
            break
        prev = cost
        if not len(dh_sel):
            termination = "closed_form"
            break
    final = float(np.sum(block.evaluate(current) ** 2))
    return SolveReport(np.asarray(x, dtype=float), x_start, initial_cost, final, iterations,
                       evaluations, termination, trace, dh_sel.labels, dh_sel.units,
                       dict(system.skipped),
                       {"tracker_pose": [float(v) for v in current.tracker_pose]})
