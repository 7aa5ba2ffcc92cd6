from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg
from numpy.testing import assert_allclose

from gridmor.grid.system import OperatingPoint
from gridmor.reduction.balancing import sp_bpod
from gridmor.reduction.deim import build_deim
from gridmor.reduction.gramians import CovariancePair, PerturbationConfig, covariances
from gridmor.reduction.pod import build_basis, pod_modes, sp_pod
from gridmor.reduction.snapshots import collect, scale_system
from gridmor.rom.engine import (
    check_regularity,
    is_regular,
    project,
    recover,
    reduce_point,
    simulate_rom,
)
from gridmor.rom.metrics import compare
from gridmor.simulation.scenarios import Scenario
from gridmor.simulation.solver import SolverOptions, integrate
from gridmor.utils.timer import StageTimer

TIGHT = SolverOptions(h=0.01, record_dt=0.02, atol=1e-11, rtol=1e-10, algebraic_tol=1e-10)
LOAD_STEP = Scenario(kind="load-step", delta=0.005, onset=0.2)
FAULT = Scenario(kind="line-fault", branch=5, fault_bus=7, fault_time=0.2)


def transfer(A, B, C, s, E=None):
    E = np.eye(A.shape[0]) if E is None else E
    return C @ np.linalg.solve(s * E - A, B)


def test_identity_basis_reproduces_the_system(system):
    basis = build_basis(np.eye(system.n_d), np.eye(system.n_a), system.n_d, system.n_a)
    rom = project(system, basis)
    assert rom.path == "full-projection"
    assert_allclose(rom.A_r, system.A)
    assert_allclose(rom.B_ur, system.B_u)
    assert_allclose(rom.B_wr, system.B_w)
    assert_allclose(rom.C_r, system.C)
    assert_allclose(rom.E_r, system.E)
    assert rom.provenance == {"method": "sp-pod", "nonlinearity": "full-projection", "r_d": 40, "r_a": 36}


def test_reduced_descriptor_is_block_identity(system, trajectory):
    basis = sp_pod(system, collect(trajectory, system), r_d=6, r_a=5)
    rom = project(system, basis)
    assert_allclose(rom.E_r, np.diag(np.r_[np.ones(6), np.zeros(5)]))
    assert rom.system.state_names[:2] == ("z_d_1", "z_d_2")
    assert rom.system.state_names[-1] == "z_a_5"


def test_full_order_basis_replays_the_trajectory(system, point, trajectory):
    snapshots = collect(trajectory, system, reference=point.x)
    basis = sp_pod(system, snapshots, r_d=system.n_d, r_a=system.n_a)
    rom = project(system, basis)
    fom = integrate(system, point, LOAD_STEP, (0.0, 1.0), TIGHT)
    reduced = simulate_rom(rom, point, LOAD_STEP, (0.0, 1.0), TIGHT)
    recovered = recover(basis, reduced, system)
    assert_allclose(recovered.X, fom.X, atol=1e-6)
    assert recovered.state_names == fom.state_names
    assert recovered.diagnostics["recovered_network_residual"] < 1e-8


def test_balanced_truncation_error_bound(stable_lti):
    A, B, C = stable_lti.A, stable_lti.B_u, stable_lti.C
    P = scipy.linalg.solve_continuous_lyapunov(A, -B @ B.T)
    Q = scipy.linalg.solve_continuous_lyapunov(A.T, -C.T @ C)
    basis, summary = sp_bpod(stable_lti, CovariancePair(G_c=P, G_o11=Q, n_d=4), r_d=2)
    rom = project(stable_lti, basis)
    gamma = np.asarray(summary["gamma1"])
    assert_allclose(gamma, np.sqrt(np.sort(np.linalg.eigvals(P @ Q).real)[::-1]), rtol=1e-6)
    worst = 0.0
    for omega in np.logspace(-2, 3, 200):
        full = transfer(A, B, C, 1j * omega)
        reduced = transfer(rom.A_r, rom.B_ur, rom.C_r, 1j * omega, E=rom.E_r)
        worst = max(worst, np.linalg.norm(full - reduced, 2))
    assert worst <= 2.0 * np.sum(gamma[2:]) * (1 + 1e-6) + 1e-12


def test_descriptor_transfer_function_is_preserved(linear_dae):
    basis = build_basis(np.eye(1), np.eye(1), 1, 1)
    rom = project(linear_dae, basis)
    for s in (0.1, 1j, 3.0 + 2j):
        assert_allclose(
            transfer(rom.A_r, rom.B_ur, rom.C_r, s, E=rom.E_r),
            transfer(linear_dae.A, linear_dae.B_u, linear_dae.C, s, E=linear_dae.E),
        )


def test_regular_and_singular_pencils(decay_dae):
    assert is_regular(decay_dae.E, decay_dae.A)
    E = np.diag([1.0, 0.0])
    A = np.array([[-1.0, 0.0], [0.0, 0.0]])
    assert not is_regular(E, A)


def test_check_regularity_at_the_operating_point(system, point):
    basis = build_basis(np.eye(system.n_d), np.eye(system.n_a), system.n_d, system.n_a)
    rom = check_regularity(project(system, basis), reduce_point(project(system, basis), point))
    assert rom.regular is True


def test_reduced_point_is_consistent(system, point, trajectory):
    basis = sp_pod(system, collect(trajectory, system, reference=point.x), r_d=10, r_a=12)
    rom = project(system, basis)
    z0 = reduce_point(rom, point)
    residual = rom.system.rhs(z0.x, z0.u, z0.w)
    assert np.max(np.abs(residual[rom.system.n_d:])) < 1e-9
    # an affine basis puts the equilibrium at the origin
    assert_allclose(z0.x, 0.0, atol=1e-8)


def test_recover_without_system_names_states_generically(cubic_dae):
    basis = build_basis(np.eye(2), np.eye(1), 2, 1)
    point = OperatingPoint(np.array([0.1, 0.0, 0.501]), np.zeros(1), np.zeros(0))
    reduced = simulate_rom(project(cubic_dae, basis), point, t_span=(0.0, 0.2), options=SolverOptions(h=0.01, record_dt=0.1))
    recovered = recover(basis, reduced)
    assert recovered.state_names == ("x_1", "x_2", "x_3")
    assert "recovered_network_residual" not in recovered.diagnostics
    assert_allclose(recovered.X, reduced.X)


def test_mismatched_basis_is_rejected(linear_dae):
    with pytest.raises(ValueError):
        project(linear_dae, build_basis(np.eye(2), np.eye(1), 1, 1))


def test_default_thresholds_give_a_small_fast_accurate_model(system, point, trajectory):
    basis = sp_pod(system, collect(trajectory, system, reference=point.x), deim=build_deim)
    assert basis.r_d <= system.n_d / 3
    assert basis.r_a <= system.n_a / 4
    rom = project(system, basis)
    assert rom.path == "deim"

    options = SolverOptions(h=0.01, record_dt=0.02)
    timer = StageTimer()
    with timer.stage("fom"):
        fom = integrate(system, point, LOAD_STEP, (0.0, 2.0), options)
    with timer.stage("rom"):
        reduced = simulate_rom(rom, point, LOAD_STEP, (0.0, 2.0), options)
    assert reduced.t[-1] == pytest.approx(2.0)
    report = compare(fom, recover(basis, reduced, system), system.layout.groups)
    assert report.rmse <= 0.05
    assert set(report.epsilon) == set(system.layout.groups)
    assert timer.laps["rom"] < timer.laps["fom"]


def test_operating_point_is_a_fixed_point_of_the_deim_model(system, point, trajectory):
    basis = sp_pod(system, collect(trajectory, system, reference=point.x), deim=build_deim)
    assert basis.deim.offset is not None
    rom = project(system, basis)
    z0 = reduce_point(rom, point)
    assert_allclose(z0.x, 0.0, atol=1e-8)
    residual = rom.system.rhs(z0.x, z0.u, z0.w)
    assert np.max(np.abs(residual)) < 1e-8


def test_fidelity_does_not_degrade_with_the_dynamic_order(system, point, trajectory):
    snapshots = collect(trajectory, system, reference=point.x)
    options = SolverOptions(h=0.01, record_dt=0.02)
    errors = []
    for r_d in (2, 4, system.n_d):
        basis = sp_pod(system, snapshots, r_d=r_d, deim=build_deim)
        reduced = simulate_rom(project(system, basis), point, LOAD_STEP, (0.0, 2.0), options)
        errors.append(compare(trajectory, recover(basis, reduced, system), system.layout.groups).rmse)
    assert np.all(np.isfinite(errors))
    for coarse, fine in zip(errors, errors[1:]):
        assert fine <= coarse * (1 + 1e-6) + 1e-12


def test_balanced_model_is_comparable_to_pod(system, point, trajectory):
    options = SolverOptions(h=0.01, record_dt=0.02)
    snapshots = collect(trajectory, system, reference=point.x)
    pod_basis = sp_pod(system, snapshots, deim=build_deim)
    pod = simulate_rom(project(system, pod_basis), point, LOAD_STEP, (0.0, 2.0), options)
    pod_rmse = compare(trajectory, recover(pod_basis, pod, system), system.layout.groups).rmse

    scaled, scaling = scale_system(system, point.x, point.u, point.w)
    scaled_point = OperatingPoint(*scaling.scale(point.x, point.u, point.w))
    X_d = snapshots.X_d / scaling.s_x[: system.n_d, None] - scaled_point.x[: system.n_d, None]
    config = PerturbationConfig(magnitudes=(1.0,), horizon=1.0, dt=0.02, pod_modes=10, n_jobs=2)
    pair = covariances(scaled, scaled_point, config, modes=pod_modes(X_d).modes)
    bpod_basis, _ = sp_bpod(
        system, pair, scaling=scaling, reference=point.x, deim=build_deim, snapshots=snapshots
    )
    assert bpod_basis.r_d <= system.n_d / 3
    bpod = simulate_rom(project(system, bpod_basis), point, LOAD_STEP, (0.0, 2.0), options)
    bpod_rmse = compare(trajectory, recover(bpod_basis, bpod, system), system.layout.groups).rmse
    assert bpod_rmse <= 10.0 * pod_rmse


def test_deim_rom_uses_the_interpolated_nonlinearity(system, trajectory):
    basis = sp_pod(system, collect(trajectory, system), r_d=8, r_a=8, deim=build_deim)
    rom = project(system, basis)
    assert rom.path == "deim"
    assert rom.provenance["nonlinearity"] == "deim"
    assert project(system, basis, deim=False).path == "full-projection"


def test_full_order_basis_replays_a_line_fault(system, point, trajectory):
    basis = sp_pod(
        system, collect(trajectory, system, reference=point.x), r_d=system.n_d, r_a=system.n_a
    )
    rom = project(system, basis)
    fom = integrate(system, point, FAULT, (0.0, 1.0), TIGHT)
    reduced = simulate_rom(rom, point, FAULT, (0.0, 1.0), TIGHT)
    assert [event["topology"] for event in reduced.diagnostics["events"]] == [True, True, True]
    assert_allclose(basis.recover_state(reduced.X), fom.X, atol=1e-6)


def test_reduced_model_follows_a_restored_line(system, point):
    scenario = replace(FAULT, restore_line=True)
    options = SolverOptions(h=0.01, record_dt=0.02)
    fom = integrate(system, point, scenario, (0.0, 2.0), options)
    basis = sp_pod(system, collect(fom, system, reference=point.x), deim=build_deim)
    rom = project(system, basis)
    reduced = simulate_rom(rom, point, scenario, (0.0, 2.0), options)
    assert reduced.t[-1] == pytest.approx(2.0)
    assert reduced.topology[-1] == 3
    report = compare(fom, recover(basis, reduced, system), system.layout.groups)
    assert np.isfinite(report.rmse)
    # rebuilding on the pre-fault admittance gives back the original reduced matrices
    restored = rom.system.rebuild(rom.system, system.Y)
    assert_allclose(restored.A, rom.system.A, atol=1e-12)
    assert_allclose(restored.C, rom.system.C)
