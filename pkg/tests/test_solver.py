import numpy as np
import pytest

from oracles import grid_golden_minimise
from selfcal.errors import ConfigError, NumericalError
from selfcal.params import ParamSelection, preset
from selfcal.residuals import SystemConfig, assemble
from selfcal.solver import SolverOptions, numeric_jacobian, solve
from selfcal.synth import SynthConfig, generate


def cost_of(fun):
    return lambda x: float(np.sum(fun(np.asarray(x)) ** 2))


def _exp_problem():
    t = np.linspace(0, 1, 20)
    y = 2.0 * np.exp(-1.3 * t) + 0.01 * np.sin(17 * t)
    return lambda x: x[0] * np.exp(x[1] * t) - y, [1.0, -0.5], [(1.5, 2.5), (-2.0, -0.8)]


def _circle_problem():
    a = np.linspace(0, 5, 25)
    pts = np.column_stack([0.3 + 1.2 * np.cos(a), -0.1 + 1.2 * np.sin(a)])
    pts += 0.01 * np.column_stack([np.sin(7 * a), np.cos(11 * a)])
    return (lambda x: np.hypot(pts[:, 0] - x[0], pts[:, 1] - x[1]) - x[2],
            [0.0, 0.0, 1.0], [(0.1, 0.5), (-0.3, 0.1), (1.0, 1.4)])


SMALL_PROBLEMS = {
    "shift": (lambda x: np.array([x[0] - 3.0]), [0.0], [(2.0, 4.0)]),
    "exp": _exp_problem(),
    "circle": _circle_problem(),
}


@pytest.mark.parametrize("name", sorted(SMALL_PROBLEMS))
def test_lm_matches_grid_golden_oracle(name):
    fun, x0, bounds = SMALL_PROBLEMS[name]
    rep = solve(fun, x0)
    ref = grid_golden_minimise(cost_of(fun), bounds)
    np.testing.assert_allclose(rep.x, ref, atol=1e-6)


@pytest.fixture(scope="module")
def noisy(model):
    return generate(model, SynthConfig(max_poses={"st": 40, "hp1": 15, "hp2": 15, "vp": 15},
                                       contact_sigma=2e-4, seed=5))


def test_ee_length_matches_oracle(model, noisy):
    sel = ParamSelection(("d:EE1",))
    system = assemble(SystemConfig(("self-contact",)), noisy, model, sel)
    rep = solve(system, [0.33])
    ref = grid_golden_minimise(cost_of(system.residuals), [(0.34, 0.36)])
    np.testing.assert_allclose(rep.x, ref, atol=1e-6)


def test_plane_two_parameter_matches_oracle(model, noisy):
    sel = ParamSelection(("d:EE1", "offset:U1"))
    system = assemble(SystemConfig(("planes",)), noisy, model, sel)
    rep = solve(system, system.x0 + [0.01, 0.01])
    ref = grid_golden_minimise(cost_of(system.residuals), [(0.30, 0.37), (-0.01, 0.01)])
    np.testing.assert_allclose(rep.x, ref, atol=1e-6)


def test_rosenbrock():
    rep = solve(lambda x: np.array([10 * (x[1] - x[0] ** 2), 1 - x[0]]), [-1.2, 1.0])
    np.testing.assert_allclose(rep.x, [1, 1], atol=1e-8)
    assert rep.final_cost <= rep.initial_cost


def test_oracle_identity(model, small_data):
    sel = preset("offsets")
    system = assemble(SystemConfig(("all",)), small_data, model, sel)
    rep = solve(system)
    assert rep.iterations <= 2 and rep.final_cost < 1e-18


def test_cost_never_increases(model, small_data):
    sel = preset("offsets")
    system = assemble(SystemConfig(("self-contact", "planes")), small_data, model, sel)
    rep = solve(system, system.x0 + 0.05)
    costs = [c for c, _, _ in rep.trace]
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    d = rep.to_dict()
    assert d["labels"] == sel.labels and d["termination"] == rep.termination


def test_numeric_jacobian_against_richardson():
    f = lambda x: np.array([np.sin(x[0]) * x[1], np.exp(x[1]) - x[0] ** 3])
    x = np.array([0.7, -0.2])
    J = numeric_jacobian(f, x, steps=1e-6)

    def cd(h):
        return np.column_stack([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(2)])
    rich = (4 * cd(1e-3) - cd(2e-3)) / 3
    np.testing.assert_allclose(J, rich, atol=1e-8)


def test_failing_probe_falls_back_to_one_sided():
    def f(x):
        if x[0] > 1.0:
            return np.array([np.nan])
        return np.array([2 * x[0]])
    J, flagged = numeric_jacobian(f, np.array([1.0]), steps=1e-3, return_flags=True)
    assert flagged == [0] and J[0, 0] == pytest.approx(2.0)


def test_bad_start_and_options():
    with pytest.raises(NumericalError):
        solve(lambda x: np.array([np.nan]), [0.0])
    with pytest.raises(ConfigError):
        solve(lambda x: x, None)
    with pytest.raises(ConfigError):
        SolverOptions(lambda_up=1.0)
    with pytest.raises(ConfigError):
        SolverOptions(cost_tolerance=0.0)


def test_max_iterations_termination():
    rep = solve(lambda x: np.array([10 * (x[1] - x[0] ** 2), 1 - x[0]]), [-1.2, 1.0],
                SolverOptions(max_iterations=2))
    assert rep.termination == "max_iterations" and rep.iterations == 2


def test_options_round_trip():
    o = SolverOptions(max_iterations=7, seed=3)
    assert SolverOptions.from_dict(o.to_dict()) == o
