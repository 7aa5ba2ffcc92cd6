import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from gridmor.grid.system import CallableNonlinearity, OperatingPoint, linear_system
from gridmor.simulation.scenarios import Scenario, scenario_from_dict
from gridmor.simulation.solver import IntegrationError, SolverOptions, integrate
from gridmor.utils.files import read_toml


def machine_speeds(system, trajectory):
    rows = [
        k for k, name in enumerate(system.state_names)
        if name.startswith("omega_") and not name.startswith("omega_m_")
    ]
    return trajectory.X[rows]


def decay_error(system, h, method="trapezoid"):
    point = OperatingPoint(np.array([1.0, 1.0]), np.zeros(0), np.zeros(0))
    trajectory = integrate(system, point, t_span=(0.0, 1.0), options=SolverOptions(h=h, method=method, record_dt=0.1))
    return np.max(np.abs(trajectory.X[0] - np.exp(-trajectory.t))), trajectory


def test_decay_matches_exponential(decay_dae):
    error, trajectory = decay_error(decay_dae, 1e-3)
    assert error < 1e-6
    assert_allclose(trajectory.t, np.linspace(0.0, 1.0, 11), atol=1e-12)
    # algebraic row stays satisfied
    assert_allclose(trajectory.X[1], trajectory.X[0], atol=1e-8)


def test_trapezoid_is_second_order(decay_dae):
    coarse, _ = decay_error(decay_dae, 0.02)
    fine, _ = decay_error(decay_dae, 0.01)
    assert 3.5 < coarse / fine < 4.5


def test_bdf2(decay_dae):
    error, trajectory = decay_error(decay_dae, 1e-3, method="bdf2")
    assert error < 1e-5
    assert trajectory.diagnostics["method"] == "bdf2"


def test_steps_land_on_breakpoints(linear_dae):
    point = OperatingPoint(np.array([0.0, 0.0]), np.zeros(1), np.zeros(0))
    scenario = Scenario(kind="input-perturbation", vector=[1.0], onset=0.123)
    trajectory = integrate(
        linear_dae, point, scenario, t_span=(0.0, 0.5), options=SolverOptions(h=0.01, record_dt=0.1)
    )
    # records hold the left limit at an event; the event itself is not recorded
    assert 0.123 not in np.round(trajectory.t, 9)
    events = trajectory.diagnostics["events"]
    assert len(events) == 1
    assert events[0]["t"] == pytest.approx(0.123)
    assert_allclose(trajectory.X[1], 0.5 * trajectory.X[0], atol=1e-9)
    # x' = -x / 2 + 1 after the onset
    t = trajectory.t
    expected = np.where(t > 0.123, 2.0 * (1.0 - np.exp(-0.5 * (t - 0.123))), 0.0)
    assert_allclose(trajectory.X[0], expected, atol=1e-4)


def test_nine_bus_equilibrium_is_stationary(system, point):
    trajectory = integrate(system, point, t_span=(0.0, 0.5), options=SolverOptions(h=0.01, record_dt=0.1))
    drift = np.max(np.abs(trajectory.X - point.x[:, None]))
    assert drift < 1e-6
    assert trajectory.diagnostics["scenario"] == "none"


def test_integration_is_deterministic(cubic_dae):
    point = OperatingPoint(np.array([0.1, 0.0, 0.501]), np.zeros(1), np.zeros(0))
    scenario = Scenario(kind="state-perturbation", vector=[0.2, -0.1], onset=0.25)
    options = SolverOptions(h=0.01, record_dt=0.05)
    first = integrate(cubic_dae, point, scenario, t_span=(0.0, 1.0), options=options)
    second = integrate(cubic_dae, point, scenario, t_span=(0.0, 1.0), options=options)
    assert_array_equal(first.X, second.X)
    assert first.diagnostics == second.diagnostics


def test_state_perturbation_reconciles_algebraic_state(cubic_dae):
    point = OperatingPoint(np.array([0.1, 0.0, 0.501]), np.zeros(1), np.zeros(0))
    scenario = Scenario(kind="state-perturbation", vector=[0.2, -0.1], onset=0.25)
    trajectory = integrate(cubic_dae, point, scenario, t_span=(0.0, 0.5), options=SolverOptions(h=0.01, record_dt=0.05))
    x1, x2, y = trajectory.X
    assert_allclose(y, 0.5 + 0.1 * x1 ** 2 + x2, atol=2e-8)


def test_blow_up_raises_with_partial_trajectory():
    # x' = x^2 leaves every bounded set before t = 1
    system = linear_system(np.zeros((1, 1)), nonlinearity=CallableNonlinearity(1, lambda x, u, w: x ** 2))
    point = OperatingPoint(np.array([1.0]), np.zeros(0), np.zeros(0))
    with pytest.raises(IntegrationError) as info:
        integrate(system, point, t_span=(0.0, 2.0), options=SolverOptions(h=1e-3, record_dt=0.05))
    partial = info.value.trajectory
    assert partial is not None
    assert partial.n_records >= 2
    assert partial.t[-1] < 2.0
    assert np.all(np.isfinite(partial.X))
    assert partial.diagnostics["rejected_steps"] > 0


def test_options_are_validated():
    with pytest.raises(ValueError):
        SolverOptions(method="euler")
    with pytest.raises(ValueError):
        SolverOptions(h=0.0)


def test_empty_span_is_rejected(decay_dae):
    point = OperatingPoint(np.array([1.0, 1.0]), np.zeros(0), np.zeros(0))
    with pytest.raises(ValueError):
        integrate(decay_dae, point, t_span=(1.0, 1.0))


def test_stale_jacobian_escalates_instead_of_failing():
    # x' = -10 x^3 + u; the chord matrix from x = 0 cannot follow a large input step
    system = linear_system(
        np.zeros((1, 1)),
        B_u=np.ones((1, 1)),
        nonlinearity=CallableNonlinearity(1, lambda x, u, w: -10.0 * x ** 3),
    )
    point = OperatingPoint(np.zeros(1), np.zeros(1), np.zeros(0))
    scenario = Scenario(kind="input-perturbation", vector=[10.0], onset=0.05)
    trajectory = integrate(system, point, scenario, t_span=(0.0, 2.0), options=SolverOptions(h=0.1, record_dt=0.1))
    assert trajectory.diagnostics["escalations"] >= 1
    assert trajectory.diagnostics["rejected_steps"] == 0
    assert_allclose(trajectory.X[0, -1], 1.0, atol=1e-6)


@pytest.mark.parametrize("branch, fault_bus", [(5, 7), (8, 8), (2, 5)])
def test_nine_bus_line_fault_is_integrated(system, point, branch, fault_bus):
    scenario = Scenario(kind="line-fault", branch=branch, fault_bus=fault_bus, fault_time=0.2)
    options = SolverOptions(h=0.01, record_dt=0.02)
    trajectory = integrate(system, point, scenario, t_span=(0.0, 1.5), options=options)
    assert trajectory.t[-1] == pytest.approx(1.5)
    events = trajectory.diagnostics["events"]
    assert [event["topology"] for event in events] == [True, True, True]
    assert trajectory.diagnostics["max_algebraic_residual"] < 1e-6
    assert np.all(np.abs(machine_speeds(system, trajectory) - 1.0) < 0.05)


def test_restored_line_settles_back(system, point):
    scenario = Scenario(kind="line-fault", branch=5, fault_bus=7, fault_time=0.2, restore_line=True)
    trajectory = integrate(system, point, scenario, t_span=(0.0, 8.0), options=SolverOptions(h=0.01, record_dt=0.05))
    assert trajectory.t[-1] == pytest.approx(8.0)
    assert trajectory.topology[-1] == 3
    deviation = np.abs(machine_speeds(system, trajectory) - 1.0)
    assert deviation.max() > 1e-4
    assert deviation[:, -1].max() < 0.2 * deviation.max()


def test_nine_bus_experiment_runs_its_full_horizon(grid_file, system, point):
    experiment = read_toml(grid_file.parents[1] / "experiments.toml")["experiments"]["nine_bus"]
    scenario = scenario_from_dict(experiment["scenario"])
    options = SolverOptions(record_dt=experiment["record_dt"], **experiment["solver"])
    trajectory = integrate(system, point, scenario, t_span=(0.0, experiment["horizon"]), options=options)
    assert trajectory.t[-1] == pytest.approx(10.0)
    assert trajectory.n_records == 1001
    assert np.all(np.abs(machine_speeds(system, trajectory) - 1.0) < 0.01)
