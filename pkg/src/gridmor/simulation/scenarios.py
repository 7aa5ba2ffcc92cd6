import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from gridmor.grid.network import add_shunt, branch_stamp

logger = logging.getLogger(__name__)

SCENARIO_KINDS = (
    "none",
    "load-step",
    "line-fault",
    "mech-power-step",
    "input-perturbation",
    "state-perturbation",
)


class ScenarioError(Exception):
    """A scenario is inconsistent with itself or with the system it targets"""


@dataclass(frozen=True)
class Scenario:
    kind: str = "none"
    name: str = ""
    # load step
    delta: float = 0.0
    onset: float = 0.0
    # line fault
    branch: Optional[int] = None
    fault_bus: Optional[int] = None
    fault_time: float = 1.0
    near_clear: float = 0.05
    remote_clear: float = 0.2
    fault_impedance: complex = 0.1j
    restore_line: bool = False
    # mechanical power step
    machine: Optional[int] = None
    factor: float = 0.9
    start: float = 1.0
    duration: float = 1.0
    # perturbations, onset shared with the load step
    vector: Tuple[float, ...] = field(default_factory=tuple)
    shape: str = "step"
    width: float = np.inf

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        object.__setattr__(self, "vector", tuple(float(v) for v in self.vector))
        if self.kind == "line-fault":
            if self.branch is None:
                raise ScenarioError("line fault needs a branch")
            if not 0 < self.near_clear <= self.remote_clear:
                raise ScenarioError("fault clearing times must satisfy 0 < near <= remote")
            if self.fault_impedance == 0:
                raise ScenarioError("fault impedance must be nonzero")
        if self.kind == "mech-power-step" and (self.machine is None or self.duration <= 0):
            raise ScenarioError("mechanical power step needs a machine and a positive duration")
        if self.kind in ("input-perturbation", "state-perturbation") and not self.vector:
            raise ScenarioError(f"{self.kind} needs a perturbation vector")
        if self.shape not in ("step", "pulse"):
            raise ScenarioError(f"unknown perturbation shape {self.shape!r}")
        if self.shape == "pulse" and not 0 < self.width < np.inf:
            raise ScenarioError("pulse perturbations need a finite positive width")

    @property
    def label(self):
        return self.name or self.kind

    def breakpoints(self):
        """Times at which effective inputs or topology change."""
        if self.kind == "load-step":
            return [self.onset]
        if self.kind == "line-fault":
            t = self.fault_time
            return [t, t + self.near_clear, t + self.remote_clear]
        if self.kind == "mech-power-step":
            return [self.start, self.start + self.duration]
        if self.kind == "input-perturbation":
            end = self.onset + self.width
            return [self.onset] + ([end] if np.isfinite(end) else [])
        if self.kind == "state-perturbation":
            return [self.onset]
        return []

    def validate(self, layout):
        if self.kind == "line-fault":
            if not 1 <= self.branch <= len(layout.branches):
                raise ScenarioError(f"fault references missing branch {self.branch}")
            branch = layout.branches[self.branch - 1]
            near = self.fault_bus if self.fault_bus is not None else branch.from_bus
            if near not in (branch.from_bus, branch.to_bus):
                raise ScenarioError(f"fault bus {near} is not an end of branch {self.branch}")
        if self.kind == "mech-power-step" and self.machine not in layout.setpoint_index:
            raise ScenarioError(f"no machine at bus {self.machine}")
        if self.kind == "input-perturbation" and len(self.vector) != len(layout.input_names):
            raise ScenarioError("input perturbation vector has the wrong length")

    def state_jump(self, n_d):
        """Jump added to x_d at the onset of a state perturbation."""
        if self.kind != "state-perturbation":
            return None
        jump = np.asarray(self.vector, dtype=float)
        if jump.shape != (n_d,):
            raise ScenarioError(f"state perturbation needs {n_d} entries, got {jump.shape[0]}")
        return jump


@dataclass(frozen=True, eq=False)
class ScenarioBase:
    """Unperturbed inputs, disturbances and admittance matrix of a system."""

    u: np.ndarray
    w: np.ndarray
    Y: Optional[np.ndarray]
    layout: object

    @classmethod
    def from_system(cls, system, u, w):
        return cls(np.asarray(u, dtype=float), np.asarray(w, dtype=float), system.Y, system.layout)


def _faulted(scenario, t, base):
    layout = base.layout
    branch = layout.branches[scenario.branch - 1]
    bus_index = layout.bus_index
    near = scenario.fault_bus if scenario.fault_bus is not None else branch.from_bus
    remote = branch.to_bus if near == branch.from_bus else branch.from_bus
    y_fault = 1.0 / scenario.fault_impedance

    t_fault = scenario.fault_time
    if t < t_fault:
        return base.Y
    if t < t_fault + scenario.near_clear:
        return add_shunt(base.Y, bus_index[near], y_fault)

    if branch.in_service:
        opened = base.Y - branch_stamp(branch, bus_index, base.Y.shape[0])
    else:
        opened = base.Y
    if t < t_fault + scenario.remote_clear:
        # remote end still feeds the fault through the whole line
        y_line = complex(branch.admittance)
        series = y_line * y_fault / (y_line + y_fault)
        return add_shunt(opened, bus_index[remote], series + 0.5j * branch.charging)
    return base.Y if scenario.restore_line else opened


def apply_scenario(scenario, t, base):
    """Effective (u, w, Y) at time t. Pure: `base` is never modified."""
    u, w, Y = base.u, base.w, base.Y
    kind = scenario.kind

    if kind == "load-step" and t > scenario.onset and scenario.delta != 0:
        layout = base.layout
        w = w.copy()
        w[layout.demand_index] *= 1.0 + scenario.delta
        if layout.impedance_shunts and Y is not None:
            Y = Y.copy()
            for position, admittance in layout.impedance_shunts:
                Y[position, position] += scenario.delta * admittance
    elif kind == "line-fault":
        Y = _faulted(scenario, t, base)
    elif kind == "mech-power-step":
        if scenario.start <= t < scenario.start + scenario.duration:
            u = u.copy()
            u[base.layout.setpoint_index[scenario.machine]] *= scenario.factor
    elif kind == "input-perturbation":
        if scenario.onset <= t < scenario.onset + scenario.width:
            amplitude = 1.0 / scenario.width if scenario.shape == "pulse" else 1.0
            u = u + amplitude * np.asarray(scenario.vector)

    return u, w, Y


def scenario_from_dict(record):
    record = dict(record)
    if "fault_impedance" in record:
        value = record["fault_impedance"]
        if isinstance(value, (list, tuple)):
            value = complex(value[0], value[1])
        record["fault_impedance"] = complex(value)
    if "vector" in record:
        record["vector"] = tuple(record["vector"])
    try:
        return Scenario(**record)
    except TypeError as e:
        raise ScenarioError(f"malformed scenario: {e}") from e
