import logging
from dataclasses import replace

import numpy as np

from gridmor.grid.devices import (
    MACHINE_STATES,
    SOLAR_STATES,
    GridNonlinearity,
    IdleBusBlock,
    ImpedanceLoadBlock,
    MachineBlock,
    MotorBlock,
    PowerLoadBlock,
    SolarBlock,
    StateIndex,
    stamp_network,
)
from gridmor.grid.model import ModelError
from gridmor.grid.network import assemble_ybus
from gridmor.grid.system import NdaeSystem, SystemLayout

logger = logging.getLogger(__name__)


def state_index(grid):
    return StateIndex(
        n_machines=len(grid.machines),
        n_solar=len(grid.solar),
        n_motors=len(grid.motors),
        n_bus=grid.n_bus,
        n_power_loads=len(grid.power_loads),
    )


def _layout(grid, index):
    names = [None] * index.n
    for name in MACHINE_STATES:
        for k, m in zip(index.machine(name), grid.machines):
            names[k] = f"{name}_{m.bus}"
    for name in SOLAR_STATES:
        for k, plant in zip(index.solar(name), grid.solar):
            names[k] = f"{name}_{plant.bus}"
    for k, load in zip(index.motor(), grid.motors):
        names[k] = f"omega_m_{load.bus}"
    positions = np.arange(grid.n_bus)
    for name in ("I_re", "I_im", "V_re", "V_im"):
        for k, bus in zip(index.network(name, positions), grid.buses):
            names[k] = f"{name}_{bus.id}"

    inputs = [f"p_ref_{m.bus}" for m in grid.machines]
    inputs += [f"v_ref_{m.bus}" for m in grid.machines]
    inputs += [f"p_ref_{p.bus}" for p in grid.solar]
    inputs += [f"v_ref_{p.bus}" for p in grid.solar]

    disturbances = [f"p_load_{load.bus}" for load in grid.power_loads]
    disturbances += [f"q_load_{load.bus}" for load in grid.power_loads]
    disturbances += [f"t_load_{load.bus}" for load in grid.motors]
    disturbances += [f"irradiance_{p.bus}" for p in grid.solar]

    groups = {
        "conventional": np.arange(0, index.solar0),
        "solar": np.arange(index.solar0, index.motor0),
        "algebraic": np.arange(index.n_d, index.n),
    }
    if grid.motors:
        groups["motor"] = index.motor()

    demand = np.concatenate([index.load_p(), index.load_q(), index.motor_torque()])
    shunts = tuple(
        (grid.position(load.bus), 1.0 / load.impedance) for load in grid.impedance_loads
    )
    setpoints = {
        m.bus: int(k) for m, k in zip(grid.machines, index.machine_power_ref())
    }
    return SystemLayout(
        state_names=tuple(names),
        input_names=tuple(inputs),
        disturbance_names=tuple(disturbances),
        groups=groups,
        bus_ids=tuple(bus.id for bus in grid.buses),
        branches=tuple(grid.branches),
        demand_index=demand.astype(int),
        impedance_shunts=shunts,
        setpoint_index=setpoints,
    )


def _output_map(output, layout, n_d, n):
    if output is None or output == "dynamic":
        return np.eye(n)[:n_d]
    if output == "all":
        return np.eye(n)
    names = list(layout.state_names)
    try:
        rows = [names.index(name) for name in output]
    except ValueError as e:
        raise ModelError(f"unknown output state: {e}") from e
    return np.eye(n)[rows]


def device_blocks(grid, index):
    blocks = []
    if grid.machines:
        blocks.append(
            MachineBlock(
                grid.machines,
                [grid.position(m.bus) for m in grid.machines],
                index,
                grid.omega_b,
                grid.eq_convention,
            )
        )
    if grid.solar:
        blocks.append(
            SolarBlock(grid.solar, [grid.position(p.bus) for p in grid.solar], index, grid.omega_b)
        )
    if grid.motors:
        blocks.append(
            MotorBlock(grid.motors, [grid.position(m.bus) for m in grid.motors], index)
        )
    if grid.power_loads:
        blocks.append(
            PowerLoadBlock(grid.power_loads, [grid.position(p.bus) for p in grid.power_loads], index)
        )
    if grid.impedance_loads:
        blocks.append(
            ImpedanceLoadBlock(
                grid.impedance_loads, [grid.position(z.bus) for z in grid.impedance_loads], index
            )
        )
    idle = [k for k, bus in enumerate(grid.buses) if bus.kind == "non-unit"]
    if idle:
        blocks.append(IdleBusBlock(idle, index))
    return blocks


def assemble_ndae(grid, output="dynamic"):
    """Full NDAE of a grid: linear stamps, network rows and the nonlinear blocks."""
    index = state_index(grid)
    n = index.n
    A = np.zeros((n, n))
    B_u = np.zeros((n, index.n_u))
    B_w = np.zeros((n, index.n_w))
    c = np.zeros(n)

    blocks = device_blocks(grid, index)
    for block in blocks:
        block.stamp(A, B_u, B_w, c)

    Y = assemble_ybus(grid.buses, grid.branches)
    stamp_network(A, Y, index)

    layout = _layout(grid, index)
    nonlinearity = GridNonlinearity(n, blocks)

    def rebuild(current, Y_new):
        A_new = current.A.copy()
        stamp_network(A_new, Y_new, index)
        return replace(current, A=A_new, Y=Y_new)

    system = NdaeSystem(
        n_d=index.n_d,
        n_a=index.n_a,
        A=A,
        B_u=B_u,
        B_w=B_w,
        C=_output_map(output, layout, index.n_d, n),
        c=c,
        nonlinearity=nonlinearity,
        Y=Y,
        layout=layout,
        rebuild=rebuild,
    )
    logger.info(
        f"assembled {grid.name}: n_d={index.n_d}, n_a={index.n_a}, "
        f"n_u={index.n_u}, n_w={index.n_w}, {len(nonlinearity.rows)} nonlinear rows"
    )
    return system
