"""Empirical covariance matrices from perturbed simulations.

Every (index, direction, magnitude) run is an independent simulation on the
same immutable system. Runs fan out through dask and their partial sums are
added in the fixed (index, direction, magnitude) order afterwards.
"""
import logging
from dataclasses import dataclass, field, replace
from multiprocessing.pool import ThreadPool
from typing import Optional, Tuple

import dask
import numpy as np

from gridmor.grid.system import EvaluationError, OperatingPoint
from gridmor.simulation.equilibrium import (
    ConvergenceError,
    SingularJacobianError,
    solve_consistent,
)
from gridmor.simulation.scenarios import Scenario
from gridmor.simulation.solver import IntegrationError, SolverOptions, integrate
from gridmor.utils.array import symmetrize

logger = logging.getLogger(__name__)

BASE_MAGNITUDES = (0.25, 0.5, 0.75, 1.0)
SHAPES = ("step", "pulse")


class PerturbationError(Exception):
    """A perturbed run could not be started or integrated"""

    def __init__(self, message, index=None, direction=None, magnitude=None):
        super().__init__(message)
        self.index = index
        self.direction = direction
        self.magnitude = magnitude


@dataclass(frozen=True)
class PerturbationConfig:
    alpha_u: float = 0.05
    alpha_x: float = 0.05
    magnitudes: Tuple[float, ...] = BASE_MAGNITUDES
    directions: Tuple[float, ...] = (1.0, -1.0)
    horizon: float = 5.0
    dt: float = 0.01
    shape: str = "step"
    hold: Optional[float] = None
    inputs: Optional[Tuple[int, ...]] = None
    states: Optional[Tuple[int, ...]] = None
    pod_modes: Optional[int] = None
    n_jobs: int = 1
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if not self.magnitudes or min(self.magnitudes) <= 0:
            raise ValueError("perturbation magnitudes must be positive")
        if self.alpha_u <= 0 or self.alpha_x <= 0:
            raise ValueError("perturbation scales must be positive")
        if sorted(abs(d) for d in self.directions) != [1.0] * len(self.directions):
            raise ValueError("perturbation directions must be +1 or -1")
        if self.shape not in SHAPES:
            raise ValueError(f"unknown perturbation shape {self.shape!r}")
        if self.dt <= 0 or self.horizon <= 0 or self.steps < 1:
            raise ValueError("sampling interval must be positive and fit the horizon")
        if self.hold is not None and self.hold <= 0:
            raise ValueError("perturbation hold must be positive")
        object.__setattr__(self, "magnitudes", tuple(float(m) for m in self.magnitudes))
        object.__setattr__(self, "directions", tuple(float(d) for d in self.directions))

    @property
    def steps(self):
        """K, the number of sampled points after t = 0."""
        return int(np.floor(self.horizon / self.dt + 1e-9))

    @property
    def input_magnitudes(self):
        return tuple(self.alpha_u * m for m in self.magnitudes)

    @property
    def state_magnitudes(self):
        return tuple(self.alpha_x * m for m in self.magnitudes)

    @property
    def options(self):
        """Solver options recording on the sampling grid."""
        h = min(self.solver.h, self.dt)
        return replace(self.solver, h=h, record_dt=self.dt)

    def weight(self, magnitude):
        return self.dt / (len(self.directions) * len(self.magnitudes) * magnitude**2)


@dataclass(frozen=True, eq=False)
class CovariancePair:
    G_c: np.ndarray
    G_o11: np.ndarray
    n_d: int

    @property
    def G_c11(self):
        return self.G_c[: self.n_d, : self.n_d]

    @property
    def G_c12(self):
        return self.G_c[: self.n_d, self.n_d:]

    @property
    def G_c21(self):
        return self.G_c[self.n_d:, : self.n_d]

    @property
    def G_c22(self):
        return self.G_c[self.n_d:, self.n_d:]


def partition(G_c, n_d, ridge=True):
    """(G_c11, G_c12, G_c21, G_c22), with G_c11 lifted by a trace-relative ridge."""
    G_c = symmetrize(np.asarray(G_c, dtype=float))
    G_c11 = G_c[:n_d, :n_d].copy()
    if ridge and n_d:
        epsilon = 1e-10 * np.trace(G_c11) / n_d
        G_c11 += epsilon * np.eye(n_d)
    return G_c11, G_c[:n_d, n_d:], G_c[n_d:, :n_d], G_c[n_d:, n_d:]


def _compute(tasks, n_jobs):
    if n_jobs > 1:
        with dask.config.set(pool=ThreadPool(int(n_jobs))):
            return dask.compute(*tasks, scheduler="threads")
    return dask.compute(*tasks, scheduler="synchronous")


def _input_run(system, point, config, index, direction, magnitude):
    vector = np.zeros(system.n_u)
    vector[index] = direction * magnitude
    if config.shape == "pulse":
        scenario = Scenario(
            kind="input-perturbation", vector=vector, onset=0.0, shape="pulse", width=config.dt
        )
    else:
        width = np.inf if config.hold is None else config.hold
        scenario = Scenario(kind="input-perturbation", vector=vector, onset=0.0, width=width)
    try:
        trajectory = integrate(system, point, scenario, (0.0, config.horizon), config.options)
    except (IntegrationError, EvaluationError) as e:
        raise PerturbationError(
            f"input {index} run failed (direction {direction:+g}, magnitude {magnitude:g}): {e}",
            index=index, direction=direction, magnitude=magnitude,
        ) from e
    deviation = trajectory.X[:, 1: config.steps + 1] - point.x[:, None]
    return config.weight(magnitude) * (deviation @ deviation.T)


def controllability_covariance(system, point, config=None):
    """G_c from step or pulse perturbations of every selected input."""
    config = PerturbationConfig() if config is None else config
    point = point if isinstance(point, OperatingPoint) else OperatingPoint(*point)
    inputs = range(system.n_u) if config.inputs is None else config.inputs
    runs = [
        (i, d, m) for i in inputs for d in config.directions for m in config.input_magnitudes
    ]
    tasks = [dask.delayed(_input_run)(system, point, config, i, d, m) for i, d, m in runs]
    logger.info(f"controllability covariance from {len(tasks)} perturbed runs")

    G_c = np.zeros((system.n, system.n))
    for partial in _compute(tasks, config.n_jobs):
        G_c += partial
    return symmetrize(G_c)


def _state_run(system, point, config, direction_vector, label, direction, magnitude):
    n_d = system.n_d
    x0 = point.x.copy()
    x0[:n_d] += direction * magnitude * direction_vector
    try:
        x0[n_d:] = solve_consistent(system, x0[:n_d], point.u, point.w, x0[n_d:])
    except (ConvergenceError, SingularJacobianError, EvaluationError) as e:
        raise PerturbationError(
            f"perturbed initial condition of {label} is inconsistent: {e}",
            index=label, direction=direction, magnitude=magnitude,
        ) from e
    start = OperatingPoint(x=x0, u=point.u, w=point.w)
    try:
        trajectory = integrate(system, start, None, (0.0, config.horizon), config.options)
    except (IntegrationError, EvaluationError) as e:
        raise PerturbationError(
            f"{label} run failed (direction {direction:+g}, magnitude {magnitude:g}): {e}",
            index=label, direction=direction, magnitude=magnitude,
        ) from e
    outputs = system.C @ trajectory.X[:, 1: config.steps + 1]
    return (outputs - (system.C @ point.x)[:, None]).ravel()


def observability_covariance(system, point, config=None, modes=None):
    """G_o11 from perturbed initial dynamic states.

    With `modes` (n_d x m) the leading m columns are perturbed instead of the
    individual states and the m x m result is mapped back through them.
    """
    config = PerturbationConfig() if config is None else config
    point = point if isinstance(point, OperatingPoint) else OperatingPoint(*point)
    n_d = system.n_d
    if modes is not None:
        count = modes.shape[1] if config.pod_modes is None else config.pod_modes
        directions = np.asarray(modes, dtype=float)[:, :count]
        labels = [f"mode {j + 1}" for j in range(count)]
    else:
        states = range(n_d) if config.states is None else config.states
        directions = np.eye(n_d)[:, list(states)]
        labels = [system.state_names[i] for i in states]

    tasks = {}
    for d in config.directions:
        for m in config.state_magnitudes:
            tasks[d, m] = [
                dask.delayed(_state_run)(system, point, config, directions[:, j], label, d, m)
                for j, label in enumerate(labels)
            ]
    keys = list(tasks)
    logger.info(f"observability covariance from {len(keys) * len(labels)} perturbed runs")
    results = _compute([task for key in keys for task in tasks[key]], config.n_jobs)

    count = len(labels)
    G = np.zeros((count, count))
    for k, (d, m) in enumerate(keys):
        Y = np.column_stack(results[k * count: (k + 1) * count])
        G += config.weight(m) * (Y.T @ Y)

    if modes is not None or config.states is not None:
        G = directions @ G @ directions.T
    return symmetrize(G)


def covariances(system, point, config=None, modes=None, observability="full"):
    G_c = controllability_covariance(system, point, config)
    if observability == "none":
        G_o11 = np.zeros((system.n_d, system.n_d))
    else:
        G_o11 = observability_covariance(system, point, config, modes=modes)
    return CovariancePair(G_c=G_c, G_o11=G_o11, n_d=system.n_d)
