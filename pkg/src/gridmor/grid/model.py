import logging
from dataclasses import dataclass, field, fields
from typing import Optional, Tuple

from gridmor.utils.files import read_toml

logger = logging.getLogger(__name__)

OMEGA_BASE = 120.0 * 3.141592653589793
BASE_MVA = 100.0

BUS_KINDS = ("generator", "solar", "load", "non-unit")
TURBINE_KINDS = ("thermal", "hydro")
LOAD_KINDS = ("motor", "constant-impedance", "constant-power")
# "swapped" pairs t_qo and the d-axis current in the E_q equation and lets E_fd
# drive E_d; "textbook" is the usual two-axis pairing.
EQ_CONVENTIONS = ("swapped", "textbook")
EQ_ALIASES = {"paper": "swapped"}


class StructureError(Exception):
    """Buses and branches do not describe a valid network"""


class ModelError(Exception):
    """Devices and buses are inconsistent"""


def _complex(value):
    if isinstance(value, (list, tuple)):
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, str):
        return complex(value.replace(" ", ""))
    return complex(value)


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    shunt: complex = 0j
    voltage: float = 1.0
    slack: bool = False

    def __post_init__(self):
        if self.kind not in BUS_KINDS:
            raise ModelError(f"bus {self.id}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    admittance: complex
    charging: float = 0.0
    in_service: bool = True

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise StructureError(f"branch {self.from_bus}-{self.to_bus} is a self loop")

    @classmethod
    def from_impedance(cls, from_bus, to_bus, r, x, b=0.0, in_service=True):
        return cls(from_bus, to_bus, 1.0 / complex(r, x), b, in_service)


@dataclass(frozen=True)
class SyncMachineParams:
    """Two-axis machine with DC1 exciter, governor and turbine."""

    bus: int
    h: float
    r_d: float
    x_d: float
    x_q: float
    xp_d: float
    xp_q: float
    t_do: float
    t_qo: float
    t_ch: float
    t_v: float
    t_fd: float
    t_f: float
    t_a: float
    k_a: float
    k_e: float
    k_f: float
    sat_a: float
    sat_b: float
    turbine: str = "thermal"
    t_w: float = 1.0
    damping: float = 0.0
    r_s: float = 0.0
    p: float = 0.0

    def __post_init__(self):
        if self.turbine not in TURBINE_KINDS:
            raise ModelError(f"machine at bus {self.bus}: unknown turbine {self.turbine!r}")
        if self.h <= 0:
            raise ModelError(f"machine at bus {self.bus}: inertia must be positive")
        for name in ("t_do", "t_qo", "t_ch", "t_v", "t_fd", "t_f", "t_a", "t_w", "r_d"):
            if getattr(self, name) <= 0:
                raise ModelError(f"machine at bus {self.bus}: {name} must be positive")


@dataclass(frozen=True)
class SolarPlantParams:
    """Grid-forming solar plant: DC link, LC filter, droop, voltage and current loops."""

    bus: int
    b_dc: float
    x_f: float
    r_f: float
    b_c: float
    r_c: float
    k_p: float
    k_d: float
    k_q: float
    tau_s: float
    tau_v: float
    tau_i: float
    kappa_p: float
    kappa_pv: float
    eta: float = 1.0
    e_dc: float = 1.0
    p: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if f.name in ("bus", "p"):
                continue
            if getattr(self, f.name) <= 0:
                raise ModelError(f"solar plant at bus {self.bus}: {f.name} must be positive")


@dataclass(frozen=True)
class MotorParams:
    h: float
    r_r: float
    x_m: float
    t_l0: float
    exponent: float = 0.0

    def __post_init__(self):
        if self.h <= 0 or self.r_r <= 0:
            raise ModelError("motor inertia and rotor resistance must be positive")


@dataclass(frozen=True)
class LoadSpec:
    bus: int
    kind: str
    motor: Optional[MotorParams] = None
    impedance: Optional[complex] = None
    power: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.kind not in LOAD_KINDS:
            raise ModelError(f"load at bus {self.bus}: unknown kind {self.kind!r}")
        blocks = {
            "motor": self.motor,
            "constant-impedance": self.impedance,
            "constant-power": self.power,
        }
        populated = [kind for kind, block in blocks.items() if block is not None]
        if populated != [self.kind]:
            raise ModelError(
                f"load at bus {self.bus}: kind {self.kind!r} with parameter blocks {populated}"
            )
        if self.impedance is not None and self.impedance == 0:
            raise ModelError(f"load at bus {self.bus}: zero impedance")


@dataclass(frozen=True)
class GridModel:
    name: str
    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...] = ()
    machines: Tuple[SyncMachineParams, ...] = ()
    solar: Tuple[SolarPlantParams, ...] = ()
    loads: Tuple[LoadSpec, ...] = ()
    eq_convention: str = "swapped"
    base_mva: float = BASE_MVA
    omega_b: float = OMEGA_BASE
    bus_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = [bus.id for bus in self.buses]
        if sorted(ids) != list(range(1, len(ids) + 1)):
            raise StructureError(f"bus ids must be unique and contiguous from 1, got {ids}")
        object.__setattr__(self, "bus_index", {bus.id: k for k, bus in enumerate(self.buses)})

        convention = EQ_ALIASES.get(self.eq_convention, self.eq_convention)
        object.__setattr__(self, "eq_convention", convention)
        if self.eq_convention not in EQ_CONVENTIONS:
            raise ModelError(f"unknown eq_convention {self.eq_convention!r}")

        for branch in self.branches:
            for end in (branch.from_bus, branch.to_bus):
                if end not in self.bus_index:
                    raise StructureError(
                        f"branch {branch.from_bus}-{branch.to_bus} references missing bus {end}"
                    )

        expected = {"generator": self.machines, "solar": self.solar, "load": self.loads}
        attached = {}
        for kind, devices in expected.items():
            for device in devices:
                if device.bus not in self.bus_index:
                    raise ModelError(f"{kind} device attached to missing bus {device.bus}")
                if device.bus in attached:
                    raise ModelError(f"bus {device.bus} holds more than one device")
                attached[device.bus] = kind

        for bus in self.buses:
            kind = attached.get(bus.id)
            if kind is None and bus.kind != "non-unit":
                raise ModelError(f"bus {bus.id} of kind {bus.kind!r} has no device")
            if kind is not None and kind != bus.kind:
                raise ModelError(f"bus {bus.id} of kind {bus.kind!r} holds a {kind} device")

        slack = [bus.id for bus in self.buses if bus.slack]
        if len(slack) > 1:
            raise ModelError(f"more than one slack bus: {slack}")

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def motors(self):
        return tuple(load for load in self.loads if load.kind == "motor")

    @property
    def power_loads(self):
        return tuple(load for load in self.loads if load.kind == "constant-power")

    @property
    def impedance_loads(self):
        return tuple(load for load in self.loads if load.kind == "constant-impedance")

    def position(self, bus_id):
        return self.bus_index[bus_id]

    def branch(self, number):
        """1-based branch lookup in file order."""
        if not 1 <= number <= len(self.branches):
            raise StructureError(f"branch {number} does not exist")
        return self.branches[number - 1]


def _machine(record):
    record = dict(record)
    return SyncMachineParams(**record)


def _solar(record):
    return SolarPlantParams(**dict(record))


def _load(record):
    record = dict(record)
    kind = record.pop("kind")
    bus = record.pop("bus")
    if kind == "motor":
        return LoadSpec(bus, kind, motor=MotorParams(**record))
    if kind == "constant-impedance":
        if "z" in record:
            z = _complex(record["z"])
        else:
            # demand at unit voltage
            s = complex(record["p"], record["q"])
            z = 1.0 / s.conjugate()
        return LoadSpec(bus, kind, impedance=z)
    return LoadSpec(bus, kind, power=(float(record["p"]), float(record["q"])))


def _branch(record):
    record = dict(record)
    in_service = bool(record.get("in_service", True))
    if "y" in record:
        return Branch(
            int(record["from"]),
            int(record["to"]),
            _complex(record["y"]),
            float(record.get("b", 0.0)),
            in_service,
        )
    return Branch.from_impedance(
        int(record["from"]),
        int(record["to"]),
        float(record.get("r", 0.0)),
        float(record["x"]),
        float(record.get("b", 0.0)),
        in_service,
    )


def _bus(record):
    return Bus(
        int(record["id"]),
        record["kind"],
        _complex(record.get("shunt", 0.0)),
        float(record.get("voltage", 1.0)),
        bool(record.get("slack", False)),
    )


def grid_from_dict(data):
    try:
        header = data.get("grid", {})
        grid = GridModel(
            name=header.get("name", "grid"),
            buses=tuple(_bus(r) for r in data.get("buses", [])),
            branches=tuple(_branch(r) for r in data.get("branches", [])),
            machines=tuple(_machine(r) for r in data.get("machines", [])),
            solar=tuple(_solar(r) for r in data.get("solar", [])),
            loads=tuple(_load(r) for r in data.get("loads", [])),
            eq_convention=header.get("eq_convention", "swapped"),
            base_mva=float(header.get("base_mva", BASE_MVA)),
        )
    except (KeyError, TypeError) as e:
        raise ModelError(f"malformed grid description: {e}") from e
    return grid


def read_grid(filename):
    grid = grid_from_dict(read_toml(filename))
    logger.info(
        f"grid {grid.name}: {grid.n_bus} buses, {len(grid.branches)} branches, "
        f"{len(grid.machines)} machines, {len(grid.solar)} solar plants, {len(grid.loads)} loads"
    )
    return grid
