import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class EvaluationError(Exception):
    """Non-finite values reached or left a residual evaluation"""


class Nonlinearity(object):
    """Nonlinear part f(x, u, w) of an NdaeSystem.

    `rows` lists the rows of f that can be nonzero. `evaluate_rows` returns only
    the requested components and may skip work for the rest.
    """

    def __init__(self, n, rows=None):
        self.n = n
        self.rows = np.arange(n) if rows is None else np.asarray(rows, dtype=int)

    def evaluate(self, x, u, w):
        raise NotImplementedError

    def evaluate_rows(self, x, u, w, rows):
        return self.evaluate(x, u, w)[rows]

    def jacobian(self, x, u, w):
        """Analytic df/dx, or None when only finite differences are available."""
        return None


class ZeroNonlinearity(Nonlinearity):
    def __init__(self, n):
        super().__init__(n, rows=np.array([], dtype=int))

    def evaluate(self, x, u, w):
        return np.zeros(self.n)

    def jacobian(self, x, u, w):
        return np.zeros((self.n, self.n))


class CallableNonlinearity(Nonlinearity):
    """Wraps a plain function, used for test fixtures and small hand-made systems."""

    def __init__(self, n, function, rows=None):
        super().__init__(n, rows=rows)
        self.function = function

    def evaluate(self, x, u, w):
        return np.asarray(self.function(x, u, w), dtype=float)


@dataclass(frozen=True, eq=False)
class SystemLayout:
    """Names and index maps shared by a system and its scenarios."""

    state_names: Tuple[str, ...]
    input_names: Tuple[str, ...]
    disturbance_names: Tuple[str, ...]
    groups: Dict[str, np.ndarray] = field(default_factory=dict)
    bus_ids: Tuple[int, ...] = ()
    branches: Tuple = ()
    demand_index: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    impedance_shunts: Tuple[Tuple[int, complex], ...] = ()
    setpoint_index: Dict[int, int] = field(default_factory=dict)

    @property
    def bus_index(self):
        return {bus_id: k for k, bus_id in enumerate(self.bus_ids)}

    def with_states(self, state_names, groups=None):
        return replace(self, state_names=tuple(state_names), groups=groups or {})


@dataclass(frozen=True, eq=False)
class NdaeSystem:
    """E x' = A x + B_u u + B_w w + c + f(x, u, w), y = C x with x = [x_d; x_a]."""

    n_d: int
    n_a: int
    A: np.ndarray
    B_u: np.ndarray
    B_w: np.ndarray
    C: np.ndarray
    c: np.ndarray
    nonlinearity: Nonlinearity
    Y: Optional[np.ndarray] = None
    layout: Optional[SystemLayout] = None
    rebuild: Optional[Callable] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = self.n_d + self.n_a
        if self.A.shape != (n, n):
            raise ValueError(f"A has shape {self.A.shape}, expected {(n, n)}")
        if self.B_u.shape[0] != n or self.B_w.shape[0] != n or self.c.shape != (n,):
            raise ValueError("input, disturbance and offset blocks must have n rows")
        if self.C.shape[1] != n:
            raise ValueError(f"C has {self.C.shape[1]} columns, expected {n}")

    @property
    def n(self):
        return self.n_d + self.n_a

    @property
    def n_u(self):
        return self.B_u.shape[1]

    @property
    def n_w(self):
        return self.B_w.shape[1]

    @property
    def E(self):
        return np.diag(np.r_[np.ones(self.n_d), np.zeros(self.n_a)])

    @property
    def dynamic(self):
        return slice(0, self.n_d)

    @property
    def algebraic(self):
        return slice(self.n_d, self.n)

    @property
    def state_names(self):
        if self.layout is not None:
            return self.layout.state_names
        return tuple(f"x_{k + 1}" for k in range(self.n))

    def f(self, x, u, w):
        return self.nonlinearity.evaluate(x, u, w)

    def rhs(self, x, u, w):
        return self.A @ x + self.B_u @ u + self.B_w @ w + self.c + self.nonlinearity.evaluate(x, u, w)

    def output(self, x):
        return self.C @ x

    def with_admittance(self, Y):
        """The same system with the network rows rebuilt for admittance Y."""
        if self.Y is not None and np.array_equal(Y, self.Y):
            return self
        if self.rebuild is None:
            raise EvaluationError("system has no network to rebuild")
        return self.rebuild(self, np.asarray(Y, dtype=complex))


def eval_residual(system, x_d, x_a, u, w):
    """[g; h] at (x_d, x_a, u, w)."""
    x = np.concatenate([np.asarray(x_d, dtype=float), np.asarray(x_a, dtype=float)])
    if x.shape != (system.n,):
        raise ValueError(f"state has length {x.shape[0]}, expected {system.n}")
    if not np.all(np.isfinite(x)):
        raise EvaluationError(f"non-finite state entries at {np.flatnonzero(~np.isfinite(x))}")
    residual = system.rhs(x, np.asarray(u, dtype=float), np.asarray(w, dtype=float))
    if not np.all(np.isfinite(residual)):
        raise EvaluationError(
            f"non-finite residual rows {np.flatnonzero(~np.isfinite(residual))}"
        )
    return residual


def linear_system(A, B_u=None, B_w=None, C=None, c=None, n_d=None, nonlinearity=None):
    """Convenience constructor for hand-made systems (LTI fixtures, examples)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    n_d = n if n_d is None else n_d
    B_u = np.zeros((n, 0)) if B_u is None else np.asarray(B_u, dtype=float).reshape(n, -1)
    B_w = np.zeros((n, 0)) if B_w is None else np.asarray(B_w, dtype=float).reshape(n, -1)
    C = np.eye(n)[:n_d] if C is None else np.atleast_2d(np.asarray(C, dtype=float))
    c = np.zeros(n) if c is None else np.asarray(c, dtype=float)
    nonlinearity = ZeroNonlinearity(n) if nonlinearity is None else nonlinearity
    layout = SystemLayout(
        state_names=tuple(f"x_{k + 1}" for k in range(n)),
        input_names=tuple(f"u_{k + 1}" for k in range(B_u.shape[1])),
        disturbance_names=tuple(f"w_{k + 1}" for k in range(B_w.shape[1])),
        groups={"dynamic": np.arange(n_d), "algebraic": np.arange(n_d, n)},
    )
    return NdaeSystem(n_d, n - n_d, A, B_u, B_w, C, c, nonlinearity, layout=layout)


@dataclass(frozen=True, eq=False)
class OperatingPoint:
    """A state together with the inputs and disturbances it was computed for."""

    x: np.ndarray
    u: np.ndarray
    w: np.ndarray

    def split(self, n_d):
        return self.x[:n_d], self.x[n_d:]

    @classmethod
    def zeros(cls, system):
        return cls(x=np.zeros(system.n), u=np.zeros(system.n_u), w=np.zeros(system.n_w))
