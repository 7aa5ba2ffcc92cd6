import numpy as np

from gridmor.grid.model import StructureError


def _stamp_key(branch):
    a, b = sorted((branch.from_bus, branch.to_bus))
    y = complex(branch.admittance)
    return (a, b, y.real, y.imag, branch.charging)


def branch_stamp(branch, bus_index, n_bus):
    """Admittance contribution of one pi-model branch (half charging at each end)."""
    try:
        i, j = bus_index[branch.from_bus], bus_index[branch.to_bus]
    except KeyError as e:
        raise StructureError(
            f"branch {branch.from_bus}-{branch.to_bus} has a dangling endpoint {e}"
        ) from e
    stamp = np.zeros((n_bus, n_bus), dtype=complex)
    y = complex(branch.admittance)
    half = 0.5j * branch.charging
    stamp[i, i] += y + half
    stamp[j, j] += y + half
    stamp[i, j] -= y
    stamp[j, i] -= y
    return stamp


def assemble_ybus(buses, branches):
    """Bus admittance matrix, stamped in a fixed branch order."""
    bus_index = {bus.id: k for k, bus in enumerate(buses)}
    n = len(buses)
    Y = np.zeros((n, n), dtype=complex)

    for branch in sorted(branches, key=_stamp_key):
        if branch.from_bus not in bus_index or branch.to_bus not in bus_index:
            raise StructureError(
                f"branch {branch.from_bus}-{branch.to_bus} has a dangling endpoint"
            )
        if not branch.in_service:
            continue
        i, j = bus_index[branch.from_bus], bus_index[branch.to_bus]
        y = complex(branch.admittance)
        half = 0.5j * branch.charging
        Y[i, i] += y + half
        Y[j, j] += y + half
        Y[i, j] -= y
        Y[j, i] -= y

    for k, bus in enumerate(buses):
        Y[k, k] += bus.shunt

    return Y


def ybus_blocks(Y, buses):
    """Sub-matrices of Y keyed by (row kind, column kind)."""
    kinds = sorted({bus.kind for bus in buses})
    positions = {
        kind: np.array([k for k, bus in enumerate(buses) if bus.kind == kind], dtype=int)
        for kind in kinds
    }
    return {
        (a, b): Y[np.ix_(positions[a], positions[b])] for a in kinds for b in kinds
    }


def add_shunt(Y, position, admittance):
    Y = np.array(Y, dtype=complex, copy=True)
    Y[position, position] += admittance
    return Y


def remove_branch(Y, branch, bus_index):
    return np.asarray(Y, dtype=complex) - branch_stamp(branch, bus_index, Y.shape[0])
