import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, root

from gridmor.grid.assembly import state_index
from gridmor.grid.model import ModelError
from gridmor.grid.network import assemble_ybus

logger = logging.getLogger(__name__)


class PowerFlowError(Exception):
    """The internal power flow did not converge"""


@dataclass(frozen=True, eq=False)
class PowerFlowResult:
    voltage: np.ndarray
    current: np.ndarray
    slip: dict
    iterations: int
    mismatch: float


def motor_slip(motor, v_mag):
    """Slip on the stable branch where air-gap torque meets the load torque."""
    r, x = motor.r_r, motor.x_m

    def balance(s):
        torque = v_mag**2 * r * s / (r**2 + (x * s) ** 2)
        return torque - motor.t_l0 * (1.0 - s) ** motor.exponent

    pull_out = min(r / x, 1.0) if x > 0 else 1.0
    if balance(pull_out) <= 0:
        raise ModelError(f"motor load torque {motor.t_l0} exceeds pull-out torque")
    return brentq(balance, 1e-12, pull_out, xtol=1e-15, rtol=1e-14)


def motor_power(motor, voltage, slip):
    """Complex power drawn by the motor circuit at a bus voltage."""
    current = voltage / (motor.r_r / slip + 1j * motor.x_m)
    return voltage * np.conj(current)


def solve_power_flow(grid, tol=1e-12, max_outer=50):
    """Newton-type power flow with slack, PV (units) and PQ (loads, idle buses)."""
    Y = assemble_ybus(grid.buses, grid.branches)
    Y_pf = Y.copy()
    for load in grid.impedance_loads:
        k = grid.position(load.bus)
        Y_pf[k, k] += 1.0 / load.impedance

    n = grid.n_bus
    slack = [grid.position(b.id) for b in grid.buses if b.slack]
    if not slack:
        slack = [grid.position(m.bus) for m in grid.machines[:1]]
    if not slack:
        raise ModelError("power flow needs a slack machine")
    slack = slack[0]

    p_spec = np.zeros(n)
    q_spec = np.zeros(n)
    pv = []
    for device in list(grid.machines) + list(grid.solar):
        k = grid.position(device.bus)
        p_spec[k] = device.p
        if k != slack:
            pv.append(k)
    for load in grid.power_loads:
        k = grid.position(load.bus)
        p_spec[k] -= load.power[0]
        q_spec[k] -= load.power[1]

    magnitude = np.array([bus.voltage for bus in grid.buses], dtype=float)
    pq = np.array(sorted(set(range(n)) - set(pv) - {slack}), dtype=int)
    pq_mask = np.zeros(n, dtype=bool)
    pq_mask[pq] = True
    magnitude[pq_mask] = 1.0
    angle_buses = np.array([k for k in range(n) if k != slack], dtype=int)

    motors = [(grid.position(load.bus), load.motor) for load in grid.motors]
    slip = {}

    def unpack(z):
        theta = np.zeros(n)
        theta[angle_buses] = z[: len(angle_buses)]
        vm = magnitude.copy()
        vm[pq] = z[len(angle_buses):]
        return vm * np.exp(1j * theta)

    def mismatch(z):
        V = unpack(z)
        S = V * np.conj(Y_pf @ V)
        return np.r_[S.real[angle_buses] - p_spec[angle_buses], S.imag[pq] - q_spec[pq]]

    z = np.r_[np.zeros(len(angle_buses)), np.ones(len(pq))]
    base_p, base_q = p_spec.copy(), q_spec.copy()
    for outer in range(max_outer):
        if len(z):
            solution = root(mismatch, z, method="hybr", tol=tol * 1e-2)
            z = solution.x
            error = np.max(np.abs(mismatch(z)))
            if error > 1e-9:
                raise PowerFlowError(f"power flow mismatch {error:.3e} ({solution.message})")

        if not motors:
            break
        V = unpack(z)
        p_new, q_new = base_p.copy(), base_q.copy()
        for k, motor in motors:
            slip[k] = motor_slip(motor, abs(V[k]))
            S = motor_power(motor, V[k], slip[k])
            p_new[k] -= S.real
            q_new[k] -= S.imag
        change = max(np.max(np.abs(p_new - p_spec)), np.max(np.abs(q_new - q_spec)))
        p_spec[:], q_spec[:] = p_new, q_new
        if change < tol:
            break
    else:
        raise PowerFlowError(f"motor slip iteration did not settle in {max_outer} rounds")

    V = unpack(z)
    error = float(np.max(np.abs(mismatch(z)))) if len(z) else 0.0
    logger.info(f"power flow converged after {outer + 1} rounds, mismatch {error:.2e}")
    return PowerFlowResult(
        voltage=V, current=Y @ V, slip=slip, iterations=outer + 1, mismatch=error
    )


def machine_states(machine, V, I, convention):
    """Steady machine states and set-points (P_ref, V_ref) at bus phasors V, I."""
    m = machine
    if convention == "textbook":
        delta = np.angle(V + (m.r_s + 1j * m.x_q) * I)
        candidates = [delta]
    else:
        x_e = m.x_q - m.xp_q + m.xp_d
        phi = np.angle(V + (m.r_s + 1j * x_e) * I)
        candidates = [phi + np.pi / 2, phi - np.pi / 2]

    best = None
    for delta in candidates:
        rotation = np.exp(-1j * (delta - np.pi / 2))
        i_dq, v_dq = I * rotation, V * rotation
        i_d, i_q, v_d, v_q = i_dq.real, i_dq.imag, v_dq.real, v_dq.imag
        e_d = v_d + m.r_s * i_d - m.xp_q * i_q
        e_q = v_q + m.r_s * i_q + m.xp_d * i_d
        if convention == "textbook":
            e_fd = e_q + (m.x_d - m.xp_d) * i_d
        else:
            e_fd = e_d + (m.xp_d - m.x_d) * i_q
        if best is None or e_fd > best[4]:
            best = (delta, e_d, e_q, i_d * e_d + i_q * e_q, e_fd)

    delta, e_d, e_q, t_e, e_fd = best
    if e_fd <= 0:
        logger.warning(f"machine at bus {m.bus}: non-positive field voltage {e_fd:.4f}")
    v_a = (m.k_e + m.sat_a * np.exp(m.sat_b * e_fd)) * e_fd
    states = {
        "delta": delta,
        "omega": 1.0,
        "e_q": e_q,
        "e_d": e_d,
        "e_fd": e_fd,
        "t_m": t_e,
        "p_v": t_e,
        "r_f": m.k_f / m.t_f * e_fd,
        "v_a": v_a,
    }
    return states, t_e, abs(V) + v_a / m.k_a


def solar_states(plant, V, I):
    """Steady plant states, set-points (P_ref, V_ref) and irradiance."""
    p = plant
    delta = np.angle(V)
    rotation = np.exp(-1j * delta)
    i_g = I * rotation
    v_o = V * rotation
    v_c = v_o / (1.0 + 1j * p.r_c * p.b_c)
    i_c = 1j * p.b_c * v_c
    i_f = i_g + i_c
    s_e = v_o * np.conj(i_g)
    z_o = (1.0 / p.kappa_pv - 1.0) * (i_g + i_c)
    z_f = p.r_f * i_f
    v_ref = v_o.real + p.k_q * s_e.imag - p.k_d * i_g.imag
    # inverter voltage with the loops at rest
    v_f = z_f + v_o + 1j * p.x_f * i_f
    p_c = (v_f * np.conj(i_f)).real
    states = {
        "delta_c": delta,
        "e_dc": p.e_dc,
        "p_f": s_e.real,
        "q_f": s_e.imag,
        "i_df": i_f.real,
        "i_qf": i_f.imag,
        "v_dc": v_c.real,
        "v_qc": v_c.imag,
        "z_do": z_o.real,
        "z_qo": z_o.imag,
        "z_df": z_f.real,
        "z_qf": z_f.imag,
    }
    return states, s_e.real, v_ref, p_c / p.eta


def operating_point_guess(grid, flow=None):
    """Closed-form device states on top of a power-flow solution.

    Returns (x, u, w) consistent with the power flow; every device equation is
    at rest up to the power-flow mismatch.
    """
    flow = solve_power_flow(grid) if flow is None else flow
    index = state_index(grid)
    x = np.zeros(index.n)
    u = np.zeros(index.n_u)
    w = np.zeros(index.n_w)

    V, I = flow.voltage, flow.current
    positions = np.arange(grid.n_bus)
    x[index.network("I_re", positions)] = I.real
    x[index.network("I_im", positions)] = I.imag
    x[index.network("V_re", positions)] = V.real
    x[index.network("V_im", positions)] = V.imag

    for k, machine in enumerate(grid.machines):
        b = grid.position(machine.bus)
        states, p_ref, v_ref = machine_states(machine, V[b], I[b], grid.eq_convention)
        for name, value in states.items():
            x[index.machine(name)[k]] = value
        u[index.machine_power_ref()[k]] = p_ref
        u[index.machine_voltage_ref()[k]] = v_ref

    for k, plant in enumerate(grid.solar):
        b = grid.position(plant.bus)
        states, p_ref, v_ref, irradiance = solar_states(plant, V[b], I[b])
        for name, value in states.items():
            x[index.solar(name)[k]] = value
        u[index.solar_power_ref()[k]] = p_ref
        u[index.solar_voltage_ref()[k]] = v_ref
        w[index.irradiance()[k]] = irradiance

    for k, load in enumerate(grid.power_loads):
        w[index.load_p()[k]] = load.power[0]
        w[index.load_q()[k]] = load.power[1]

    for k, load in enumerate(grid.motors):
        b = grid.position(load.bus)
        x[index.motor()[k]] = 1.0 - flow.slip[b]
        w[index.motor_torque()[k]] = load.motor.t_l0

    return x, u, w
