"""Device equations split into linear stamps (A, B_u, B_w, c) and nonlinear blocks.

Every block owns the rows it writes: the derivative rows of its own states and
the two interface rows of the bus it sits on. Linear stamps and the nonlinear
`evaluate` of a block add up to the full device right-hand side.
"""
import logging
from dataclasses import dataclass

import numpy as np

from gridmor.grid.system import Nonlinearity

logger = logging.getLogger(__name__)

MACHINE_STATES = ("delta", "omega", "e_q", "e_d", "e_fd", "t_m", "p_v", "r_f", "v_a")
SOLAR_STATES = (
    "delta_c",
    "e_dc",
    "p_f",
    "q_f",
    "i_df",
    "i_qf",
    "v_dc",
    "v_qc",
    "z_do",
    "z_qo",
    "z_df",
    "z_qf",
)
MOTOR_STATES = ("omega_m",)
NETWORK_STATES = ("I_re", "I_im", "V_re", "V_im")


@dataclass(frozen=True)
class StateIndex:
    """Offsets of the stacked state, input and disturbance vectors.

    x_d holds machine variables stacked by variable (all deltas, then all
    omegas, ...), then solar variables the same way, then motor speeds.
    x_a = [I_re; I_im; V_re; V_im]. Row k of the residual is the derivative of
    state k for k < n_d; algebraic rows are network balance (re, im) followed by
    device interface relations (re, im), N rows each.
    """

    n_machines: int
    n_solar: int
    n_motors: int
    n_bus: int
    n_power_loads: int

    @property
    def solar0(self):
        return len(MACHINE_STATES) * self.n_machines

    @property
    def motor0(self):
        return self.solar0 + len(SOLAR_STATES) * self.n_solar

    @property
    def n_d(self):
        return self.motor0 + self.n_motors

    @property
    def n_a(self):
        return 4 * self.n_bus

    @property
    def n(self):
        return self.n_d + self.n_a

    @property
    def n_u(self):
        return 2 * self.n_machines + 2 * self.n_solar

    @property
    def n_w(self):
        return 2 * self.n_power_loads + self.n_motors + self.n_solar

    def machine(self, name):
        k = MACHINE_STATES.index(name)
        return k * self.n_machines + np.arange(self.n_machines)

    def solar(self, name):
        k = SOLAR_STATES.index(name)
        return self.solar0 + k * self.n_solar + np.arange(self.n_solar)

    def motor(self):
        return self.motor0 + np.arange(self.n_motors)

    def network(self, name, positions):
        k = NETWORK_STATES.index(name)
        return self.n_d + k * self.n_bus + np.asarray(positions, dtype=int)

    def balance_rows(self, positions):
        positions = np.asarray(positions, dtype=int)
        return self.n_d + positions, self.n_d + self.n_bus + positions

    def interface_rows(self, positions):
        positions = np.asarray(positions, dtype=int)
        return self.n_d + 2 * self.n_bus + positions, self.n_d + 3 * self.n_bus + positions

    # inputs
    def machine_power_ref(self):
        return np.arange(self.n_machines)

    def machine_voltage_ref(self):
        return self.n_machines + np.arange(self.n_machines)

    def solar_power_ref(self):
        return 2 * self.n_machines + np.arange(self.n_solar)

    def solar_voltage_ref(self):
        return 2 * self.n_machines + self.n_solar + np.arange(self.n_solar)

    # disturbances
    def load_p(self):
        return np.arange(self.n_power_loads)

    def load_q(self):
        return self.n_power_loads + np.arange(self.n_power_loads)

    def motor_torque(self):
        return 2 * self.n_power_loads + np.arange(self.n_motors)

    def irradiance(self):
        return 2 * self.n_power_loads + self.n_motors + np.arange(self.n_solar)


def _param(records, name):
    return np.array([getattr(r, name) for r in records], dtype=float)


def _add(M, rows, cols, values):
    np.add.at(M, (np.asarray(rows), np.asarray(cols)), values)


class DeviceBlock(object):
    rows = np.array([], dtype=int)

    def stamp(self, A, B_u, B_w, c):
        raise NotImplementedError

    def evaluate(self, x, u, w, out):
        pass


class MachineBlock(DeviceBlock):
    def __init__(self, machines, positions, index, omega_b, convention):
        self.index = index
        self.omega_b = omega_b
        self.convention = convention
        self.positions = np.asarray(positions, dtype=int)

        for name in (
            "h", "r_d", "x_d", "x_q", "xp_d", "xp_q", "t_do", "t_qo", "t_ch", "t_v",
            "t_fd", "t_f", "t_a", "k_a", "k_e", "k_f", "sat_a", "sat_b", "t_w",
            "damping", "r_s",
        ):
            setattr(self, name, _param(machines, name))
        self.hydro = np.array([m.turbine == "hydro" for m in machines], dtype=bool)

        self.s = {name: index.machine(name) for name in MACHINE_STATES}
        self.i_re = index.network("I_re", self.positions)
        self.i_im = index.network("I_im", self.positions)
        self.v_re = index.network("V_re", self.positions)
        self.v_im = index.network("V_im", self.positions)
        self.row_re, self.row_im = index.interface_rows(self.positions)

        if convention == "swapped":
            self.eq_gain = (self.xp_q - self.x_q) / self.t_qo
            self.ed_gain = -(self.xp_d - self.x_d) / self.t_do
        else:
            self.eq_gain = -(self.x_d - self.xp_d) / self.t_do
            self.ed_gain = (self.x_q - self.xp_q) / self.t_qo

        rows = [self.s["omega"], self.s["e_fd"], self.s["v_a"], self.row_re, self.row_im]
        rows.append(self.s["e_q"][self.eq_gain != 0])
        rows.append(self.s["e_d"][self.ed_gain != 0])
        self.rows = np.sort(np.concatenate(rows))

    def stamp(self, A, B_u, B_w, c):
        s, wb = self.s, self.omega_b
        p_ref = self.index.machine_power_ref()
        v_ref = self.index.machine_voltage_ref()

        _add(A, s["delta"], s["omega"], wb)
        c[s["delta"]] += -wb

        two_h = 2.0 * self.h
        _add(A, s["omega"], s["t_m"], 1.0 / two_h)
        _add(A, s["omega"], s["omega"], -self.damping / two_h)
        c[s["omega"]] += self.damping / two_h

        if self.convention == "swapped":
            _add(A, s["e_q"], s["e_q"], -1.0 / self.t_qo)
            _add(A, s["e_d"], s["e_d"], -1.0 / self.t_do)
            _add(A, s["e_d"], s["e_fd"], 1.0 / self.t_do)
        else:
            _add(A, s["e_q"], s["e_q"], -1.0 / self.t_do)
            _add(A, s["e_q"], s["e_fd"], 1.0 / self.t_do)
            _add(A, s["e_d"], s["e_d"], -1.0 / self.t_qo)

        # exciter, saturation goes to f
        _add(A, s["e_fd"], s["e_fd"], -self.k_e / self.t_fd)
        _add(A, s["e_fd"], s["v_a"], 1.0 / self.t_fd)
        _add(A, s["r_f"], s["r_f"], -1.0 / self.t_f)
        _add(A, s["r_f"], s["e_fd"], self.k_f / self.t_f**2)
        _add(A, s["v_a"], s["v_a"], -1.0 / self.t_a)
        _add(A, s["v_a"], s["r_f"], self.k_a / self.t_a)
        _add(A, s["v_a"], s["e_fd"], -self.k_a * self.k_f / (self.t_f * self.t_a))
        _add(B_u, s["v_a"], v_ref, self.k_a / self.t_a)

        # governor: P_v' = -(P_v - P_ref + (omega - 1)/R_d)/t_v
        gov = {
            "p_v": -1.0 / self.t_v,
            "omega": -1.0 / (self.r_d * self.t_v),
        }
        gov_ref = 1.0 / self.t_v
        gov_c = 1.0 / (self.r_d * self.t_v)
        for name, value in gov.items():
            _add(A, s["p_v"], s[name], value)
        _add(B_u, s["p_v"], p_ref, gov_ref)
        c[s["p_v"]] += gov_c

        # turbine
        thermal = ~self.hydro
        _add(A, s["t_m"][thermal], s["t_m"][thermal], -1.0 / self.t_ch[thermal])
        _add(A, s["t_m"][thermal], s["p_v"][thermal], 1.0 / self.t_ch[thermal])

        hydro = self.hydro
        if np.any(hydro):
            # T_M' = -(2/t_w)(T_M - P_v + t_ch P_v')
            gain = 2.0 / self.t_w[hydro]
            lead = -gain * self.t_ch[hydro]
            rows = s["t_m"][hydro]
            _add(A, rows, s["t_m"][hydro], -gain)
            _add(A, rows, s["p_v"][hydro], gain)
            for name, value in gov.items():
                _add(A, rows, s[name][hydro], lead * value[hydro])
            _add(B_u, rows, p_ref[hydro], lead * gov_ref[hydro])
            c[rows] += lead * gov_c[hydro]

        # stator: E_d - v_d - r_s i_d + x'_q i_q = 0, E_q - v_q - r_s i_q - x'_d i_d = 0
        _add(A, self.row_re, s["e_d"], 1.0)
        _add(A, self.row_im, s["e_q"], 1.0)

    def dq(self, x):
        delta = x[self.s["delta"]]
        sin, cos = np.sin(delta), np.cos(delta)
        i_re, i_im = x[self.i_re], x[self.i_im]
        v_re, v_im = x[self.v_re], x[self.v_im]
        i_d = i_re * sin - i_im * cos
        i_q = i_re * cos + i_im * sin
        v_d = v_re * sin - v_im * cos
        v_q = v_re * cos + v_im * sin
        return i_d, i_q, v_d, v_q

    def evaluate(self, x, u, w, out):
        s = self.s
        i_d, i_q, v_d, v_q = self.dq(x)
        e_d, e_q, e_fd = x[s["e_d"]], x[s["e_q"]], x[s["e_fd"]]

        out[s["omega"]] = -(e_d * i_d + e_q * i_q) / (2.0 * self.h)
        out[s["e_q"]] = self.eq_gain * i_d
        out[s["e_d"]] = self.ed_gain * i_q
        out[s["e_fd"]] = -self.sat_a * np.exp(self.sat_b * e_fd) * e_fd / self.t_fd
        out[s["v_a"]] = -self.k_a * np.hypot(x[self.v_re], x[self.v_im]) / self.t_a
        out[self.row_re] = -v_d - self.r_s * i_d + self.xp_q * i_q
        out[self.row_im] = -v_q - self.r_s * i_q - self.xp_d * i_d


class SolarBlock(DeviceBlock):
    def __init__(self, plants, positions, index, omega_b):
        self.index = index
        self.omega_b = omega_b
        self.positions = np.asarray(positions, dtype=int)
        for name in (
            "b_dc", "x_f", "r_f", "b_c", "r_c", "k_p", "k_d", "k_q", "tau_s", "tau_v",
            "tau_i", "kappa_p", "kappa_pv", "eta",
        ):
            setattr(self, name, _param(plants, name))

        self.s = {name: index.solar(name) for name in SOLAR_STATES}
        self.p_ref = index.solar_power_ref()
        self.v_ref = index.solar_voltage_ref()
        self.i_re = index.network("I_re", self.positions)
        self.i_im = index.network("I_im", self.positions)
        self.row_re, self.row_im = index.interface_rows(self.positions)

        rows = [self.s[name] for name in SOLAR_STATES if name != "delta_c"]
        rows += [self.row_re, self.row_im]
        self.rows = np.sort(np.concatenate(rows))

    @property
    def filter_gain(self):
        return self.omega_b / self.x_f

    @property
    def capacitor_gain(self):
        return self.omega_b / self.b_c

    def stamp(self, A, B_u, B_w, c):
        s, wb = self.s, self.omega_b
        K, Kc = self.filter_gain, self.capacitor_gain
        kp, kpv, rc, kq, bc = self.kappa_p, self.kappa_pv, self.r_c, self.k_q, self.b_c
        g = kp * kpv
        kv = kpv / self.tau_v
        ki = kp / self.tau_i

        # droop: delta_c' = omega_b (omega_c - 1), omega_c = 1 - k_p (P_f - P_ref)
        _add(A, s["delta_c"], s["p_f"], -wb * self.k_p)
        _add(B_u, s["delta_c"], self.p_ref, wb * self.k_p)

        _add(B_w, s["e_dc"], self.index.irradiance(), self.eta / self.b_dc)

        _add(A, s["p_f"], s["p_f"], -1.0 / self.tau_s)
        _add(A, s["q_f"], s["q_f"], -1.0 / self.tau_s)

        # filter currents with the current loop closed
        _add(A, s["i_df"], s["i_df"], -K * (self.r_f + kp + g * rc))
        _add(A, s["i_df"], s["z_df"], K)
        _add(A, s["i_df"], s["q_f"], -K * g * kq)
        _add(A, s["i_df"], s["v_dc"], -K * g)
        _add(A, s["i_df"], s["z_do"], K * g)
        _add(A, s["i_df"], s["v_qc"], -K * g * bc)
        _add(B_u, s["i_df"], self.v_ref, K * g)

        _add(A, s["i_qf"], s["i_qf"], -K * (self.r_f + kp + g * rc))
        _add(A, s["i_qf"], s["z_qf"], K)
        _add(A, s["i_qf"], s["v_qc"], -K * g)
        _add(A, s["i_qf"], s["z_qo"], K * g)
        _add(A, s["i_qf"], s["v_dc"], K * g * bc)

        # filter capacitor
        _add(A, s["v_dc"], s["i_df"], Kc)
        _add(A, s["v_dc"], s["v_qc"], Kc * bc)
        _add(A, s["v_qc"], s["i_qf"], Kc)
        _add(A, s["v_qc"], s["v_dc"], -Kc * bc)

        # voltage loop integrators
        _add(A, s["z_do"], s["q_f"], -kv * kq)
        _add(A, s["z_do"], s["v_dc"], -kv)
        _add(A, s["z_do"], s["i_df"], -kv * rc)
        _add(B_u, s["z_do"], self.v_ref, kv)
        _add(A, s["z_qo"], s["v_qc"], -kv)
        _add(A, s["z_qo"], s["i_qf"], -kv * rc)

        # current loop integrators
        _add(A, s["z_df"], s["q_f"], -ki * kpv * kq)
        _add(A, s["z_df"], s["v_dc"], -ki * kpv)
        _add(A, s["z_df"], s["i_df"], -ki * (kpv * rc + 1.0))
        _add(A, s["z_df"], s["z_do"], ki * kpv)
        _add(A, s["z_df"], s["v_qc"], -ki * kpv * bc)
        _add(B_u, s["z_df"], self.v_ref, ki * kpv)
        _add(A, s["z_qf"], s["v_qc"], -ki * kpv)
        _add(A, s["z_qf"], s["i_qf"], -ki * (kpv * rc + 1.0))
        _add(A, s["z_qf"], s["z_qo"], ki * kpv)
        _add(A, s["z_qf"], s["v_dc"], ki * kpv * bc)

        # interface: V = v_o e^{j delta_c}
        bus_v_re = self.index.network("V_re", self.positions)
        bus_v_im = self.index.network("V_im", self.positions)
        _add(A, self.row_re, bus_v_re, 1.0)
        _add(A, self.row_im, bus_v_im, 1.0)

    def quantities(self, x, u):
        """Frame rotation, controller references and powers of every plant."""
        s = self.s
        delta = x[s["delta_c"]]
        sin, cos = np.sin(delta), np.cos(delta)
        i_re, i_im = x[self.i_re], x[self.i_im]
        i_df, i_qf = x[s["i_df"]], x[s["i_qf"]]
        v_dc, v_qc = x[s["v_dc"]], x[s["v_qc"]]

        d_omega = -self.k_p * (x[s["p_f"]] - u[self.p_ref])
        i_dg = i_re * cos + i_im * sin
        i_qg = -i_re * sin + i_im * cos
        v_do = v_dc + self.r_c * (i_df - i_dg)
        v_qo = v_qc + self.r_c * (i_qf - i_qg)
        return {
            "sin": sin,
            "cos": cos,
            "d_omega": d_omega,
            "i_dg": i_dg,
            "i_qg": i_qg,
            "v_do": v_do,
            "v_qo": v_qo,
            # capacitor currents beyond their nominal-frequency part
            "di_dc": -d_omega * self.b_c * v_qc,
            "di_qc": d_omega * self.b_c * v_dc,
        }

    def inverter_voltage(self, x, u, q):
        s = self.s
        omega_c = 1.0 + q["d_omega"]
        i_df, i_qf = x[s["i_df"]], x[s["i_qf"]]
        i_dc = -omega_c * self.b_c * x[s["v_qc"]]
        i_qc = omega_c * self.b_c * x[s["v_dc"]]
        v_do_ref = u[self.v_ref] - self.k_q * x[s["q_f"]] + self.k_d * q["i_qg"]
        i_df_ref = self.kappa_pv * (v_do_ref - q["v_do"] + x[s["z_do"]] + q["i_dg"] + i_dc)
        i_qf_ref = self.kappa_pv * (-q["v_qo"] + x[s["z_qo"]] + q["i_qg"] + i_qc)
        v_df = (
            self.kappa_p * (i_df_ref - i_df) + x[s["z_df"]] + q["v_do"]
            - omega_c * self.x_f * i_qf
        )
        v_qf = (
            self.kappa_p * (i_qf_ref - i_qf) + x[s["z_qf"]] + q["v_qo"]
            + omega_c * self.x_f * i_df
        )
        return v_df, v_qf

    def evaluate(self, x, u, w, out):
        s = self.s
        q = self.quantities(x, u)
        i_dg, i_qg, v_do, v_qo = q["i_dg"], q["i_qg"], q["v_do"], q["v_qo"]
        i_dc, i_qc = q["di_dc"], q["di_qc"]
        K, Kc = self.filter_gain, self.capacitor_gain
        g = self.kappa_p * self.kappa_pv
        kv = self.kappa_pv / self.tau_v
        ki = self.kappa_p / self.tau_i
        rc1 = self.r_c + 1.0

        v_df, v_qf = self.inverter_voltage(x, u, q)
        p_c = v_df * x[s["i_df"]] + v_qf * x[s["i_qf"]]

        out[s["e_dc"]] = -p_c / self.b_dc
        out[s["p_f"]] = (v_do * i_dg + v_qo * i_qg) / self.tau_s
        out[s["q_f"]] = (v_qo * i_dg - v_do * i_qg) / self.tau_s
        d_ref = self.k_d * i_qg + rc1 * i_dg + i_dc
        q_ref = rc1 * i_qg + i_qc
        out[s["i_df"]] = K * g * d_ref
        out[s["i_qf"]] = K * g * q_ref
        out[s["v_dc"]] = Kc * (-i_dg - i_dc)
        out[s["v_qc"]] = Kc * (-i_qg - i_qc)
        out[s["z_do"]] = kv * (self.k_d * i_qg + self.r_c * i_dg)
        out[s["z_qo"]] = kv * self.r_c * i_qg
        out[s["z_df"]] = ki * self.kappa_pv * d_ref
        out[s["z_qf"]] = ki * self.kappa_pv * q_ref
        out[self.row_re] = -(v_do * q["cos"] - v_qo * q["sin"])
        out[self.row_im] = -(v_do * q["sin"] + v_qo * q["cos"])


class MotorBlock(DeviceBlock):
    """Induction motor: I (R_r + j X_m s) + s V = 0 with slip s = 1 - omega_m."""

    def __init__(self, loads, positions, index):
        self.index = index
        self.positions = np.asarray(positions, dtype=int)
        motors = [load.motor for load in loads]
        for name in ("h", "r_r", "x_m", "exponent"):
            setattr(self, name, _param(motors, name))
        self.speed = index.motor()
        self.torque = index.motor_torque()
        self.i_re = index.network("I_re", self.positions)
        self.i_im = index.network("I_im", self.positions)
        self.v_re = index.network("V_re", self.positions)
        self.v_im = index.network("V_im", self.positions)
        self.row_re, self.row_im = index.interface_rows(self.positions)
        self.speed_dependent = self.exponent != 0
        self.rows = np.sort(np.concatenate([self.speed, self.row_re, self.row_im]))

    def stamp(self, A, B_u, B_w, c):
        constant = ~self.speed_dependent
        _add(B_w, self.speed[constant], self.torque[constant], -1.0 / (2.0 * self.h[constant]))
        _add(A, self.row_re, self.i_re, self.r_r)
        _add(A, self.row_re, self.i_im, -self.x_m)
        _add(A, self.row_re, self.v_re, 1.0)
        _add(A, self.row_im, self.i_im, self.r_r)
        _add(A, self.row_im, self.i_re, self.x_m)
        _add(A, self.row_im, self.v_im, 1.0)

    def electrical_torque(self, x):
        return -(x[self.v_re] * x[self.i_re] + x[self.v_im] * x[self.i_im])

    def evaluate(self, x, u, w, out):
        omega = x[self.speed]
        torque = self.electrical_torque(x)
        load = np.where(
            self.speed_dependent, w[self.torque] * np.abs(omega) ** self.exponent, 0.0
        )
        out[self.speed] = (torque - load) / (2.0 * self.h)
        out[self.row_re] = omega * (self.x_m * x[self.i_im] - x[self.v_re])
        out[self.row_im] = -omega * (self.x_m * x[self.i_re] + x[self.v_im])


class PowerLoadBlock(DeviceBlock):
    """V conj(I) + P + jQ = 0 with P, Q carried in w."""

    def __init__(self, loads, positions, index):
        self.index = index
        self.positions = np.asarray(positions, dtype=int)
        self.i_re = index.network("I_re", self.positions)
        self.i_im = index.network("I_im", self.positions)
        self.v_re = index.network("V_re", self.positions)
        self.v_im = index.network("V_im", self.positions)
        self.row_re, self.row_im = index.interface_rows(self.positions)
        self.rows = np.sort(np.concatenate([self.row_re, self.row_im]))

    def stamp(self, A, B_u, B_w, c):
        _add(B_w, self.row_re, self.index.load_p(), 1.0)
        _add(B_w, self.row_im, self.index.load_q(), 1.0)

    def evaluate(self, x, u, w, out):
        i_re, i_im = x[self.i_re], x[self.i_im]
        v_re, v_im = x[self.v_re], x[self.v_im]
        out[self.row_re] = v_re * i_re + v_im * i_im
        out[self.row_im] = v_im * i_re - v_re * i_im


class ImpedanceLoadBlock(DeviceBlock):
    """I Z + V = 0, entirely linear."""

    def __init__(self, loads, positions, index):
        self.index = index
        self.positions = np.asarray(positions, dtype=int)
        self.z = np.array([load.impedance for load in loads], dtype=complex)

    def stamp(self, A, B_u, B_w, c):
        index, p = self.index, self.positions
        row_re, row_im = index.interface_rows(p)
        i_re, i_im = index.network("I_re", p), index.network("I_im", p)
        _add(A, row_re, i_re, self.z.real)
        _add(A, row_re, i_im, -self.z.imag)
        _add(A, row_re, index.network("V_re", p), 1.0)
        _add(A, row_im, i_re, self.z.imag)
        _add(A, row_im, i_im, self.z.real)
        _add(A, row_im, index.network("V_im", p), 1.0)


class IdleBusBlock(DeviceBlock):
    """Buses without a unit inject no current."""

    def __init__(self, positions, index):
        self.index = index
        self.positions = np.asarray(positions, dtype=int)

    def stamp(self, A, B_u, B_w, c):
        row_re, row_im = self.index.interface_rows(self.positions)
        _add(A, row_re, self.index.network("I_re", self.positions), 1.0)
        _add(A, row_im, self.index.network("I_im", self.positions), 1.0)


def stamp_network(A, Y, index):
    """Writes I - Y V into the balance rows, replacing what was there."""
    N = index.n_bus
    positions = np.arange(N)
    row_re, row_im = index.balance_rows(positions)
    A[row_re, :] = 0.0
    A[row_im, :] = 0.0
    G, B = Y.real, Y.imag
    v_re = index.network("V_re", positions)
    v_im = index.network("V_im", positions)
    A[row_re, index.network("I_re", positions)] = 1.0
    A[row_im, index.network("I_im", positions)] = 1.0
    A[np.ix_(row_re, v_re)] = -G
    A[np.ix_(row_re, v_im)] = B
    A[np.ix_(row_im, v_re)] = -B
    A[np.ix_(row_im, v_im)] = -G


class GridNonlinearity(Nonlinearity):
    def __init__(self, n, blocks):
        blocks = [block for block in blocks if len(block.rows)]
        rows = np.unique(np.concatenate([b.rows for b in blocks])) if blocks else []
        super().__init__(n, rows=rows)
        self.blocks = blocks
        self.masks = []
        for block in blocks:
            mask = np.zeros(n, dtype=bool)
            mask[block.rows] = True
            self.masks.append(mask)

    def evaluate(self, x, u, w):
        out = np.zeros(self.n)
        for block in self.blocks:
            block.evaluate(x, u, w, out)
        return out

    def evaluate_rows(self, x, u, w, rows):
        out = np.zeros(self.n)
        for block, mask in zip(self.blocks, self.masks):
            if mask[rows].any():
                block.evaluate(x, u, w, out)
        return out[rows]
