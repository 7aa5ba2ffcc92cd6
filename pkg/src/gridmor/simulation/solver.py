"""Fixed-cadence implicit integration of index-1 NDAEs.

Steps land exactly on every recording time and every scenario breakpoint, so
stored states are accepted solver points and no interpolation is involved.
Inputs are constant between breakpoints; at a breakpoint the admittance matrix
is swapped, the state jump (if any) is applied and x_a is re-solved.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import lu_factor, lu_solve

from gridmor.grid.system import EvaluationError, OperatingPoint
from gridmor.simulation.equilibrium import (
    ConvergenceError,
    SingularJacobianError,
    solve_consistent,
)
from gridmor.simulation.jacobian import JACOBIAN_MODES, JacobianCache
from gridmor.simulation.scenarios import Scenario, ScenarioBase, apply_scenario

logger = logging.getLogger(__name__)

METHODS = ("trapezoid", "bdf2")

# step iteration modes, in escalation order
CHORD, FRESH_CHORD, NEWTON = range(3)


@dataclass(frozen=True)
class SolverOptions:
    h: float = 1e-3
    method: str = "trapezoid"
    record_dt: float = 0.01
    atol: float = 1e-10
    rtol: float = 1e-8
    algebraic_tol: float = 1e-8
    max_newton: int = 10
    max_halvings: int = 6
    startup_steps: int = 2
    jacobian: str = "finite-difference"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown integration method {self.method!r}")
        if self.jacobian not in JACOBIAN_MODES:
            raise ValueError(f"unknown Jacobian mode {self.jacobian!r}")
        for name in ("h", "record_dt", "atol", "rtol", "algebraic_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"solver option {name} must be positive")
        if self.max_newton < 1 or self.max_halvings < 0 or self.startup_steps < 0:
            raise ValueError("solver iteration limits must be non-negative")

    @property
    def h_min(self):
        return self.h / 2 ** self.max_halvings


@dataclass(eq=False)
class Trajectory:
    """Recorded states (columns) with the inputs and topology stage they saw."""

    t: np.ndarray
    X: np.ndarray
    U: np.ndarray
    W: np.ndarray
    topology: np.ndarray
    state_names: Tuple[str, ...]
    input_names: Tuple[str, ...] = ()
    disturbance_names: Tuple[str, ...] = ()
    diagnostics: Dict = field(default_factory=dict)

    @property
    def n_records(self):
        return len(self.t)

    @property
    def final(self):
        return self.X[:, -1]

    def to_frame(self):
        frame = pd.DataFrame(self.X.T, columns=list(self.state_names))
        frame.insert(0, "t", self.t)
        return frame

    def inputs_frame(self):
        frame = pd.DataFrame(
            np.vstack([self.U, self.W]).T,
            columns=list(self.input_names) + list(self.disturbance_names),
        )
        frame.insert(0, "t", self.t)
        frame["topology"] = self.topology
        return frame


class IntegrationError(Exception):
    """Newton failed even at the smallest allowed step; carries what was computed"""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class _Recorder(object):
    def __init__(self, system):
        self.system = system
        self.t, self.X, self.U, self.W, self.topology = [], [], [], [], []

    def add(self, t, x, u, w, stage):
        self.t.append(t)
        self.X.append(x.copy())
        self.U.append(np.array(u, dtype=float))
        self.W.append(np.array(w, dtype=float))
        self.topology.append(stage)

    def trajectory(self, diagnostics):
        system = self.system
        layout = system.layout
        n = system.n
        return Trajectory(
            t=np.array(self.t),
            X=np.array(self.X).T if self.X else np.zeros((n, 0)),
            U=np.array(self.U).T if self.U else np.zeros((system.n_u, 0)),
            W=np.array(self.W).T if self.W else np.zeros((system.n_w, 0)),
            topology=np.array(self.topology, dtype=int),
            state_names=tuple(system.state_names),
            input_names=tuple(layout.input_names) if layout else (),
            disturbance_names=tuple(layout.disturbance_names) if layout else (),
            diagnostics=dict(diagnostics),
        )


class _Stepper(object):
    """One implicit step with modified Newton and a cached LU factorization.

    All supported formulas share the dynamic-row residual
        a0 x_new + history - h (beta F(x_new) + gamma F(x_old)) = 0
    with the algebraic rows h(x_new) = 0.
    """

    def __init__(self, system, options, jacobian):
        self.system = system
        self.options = options
        self.jacobian = jacobian
        self.J = None
        self.lu = None
        self.lu_key = None
        self.stats = {
            "newton_iterations": 0,
            "jacobian_updates": 0,
            "factorizations": 0,
            "escalations": 0,
        }

    def reset(self, system, jacobian):
        self.system = system
        self.jacobian = jacobian
        self.J = None
        self.lu = None
        self.lu_key = None

    def _refresh_jacobian(self, x, u, w):
        self.J = self.jacobian.full(x, u, w)
        self.lu = None
        self.stats["jacobian_updates"] += 1

    def _factor(self, a0, beta_h):
        n_d = self.system.n_d
        M = -beta_h * self.J
        M[:n_d, :n_d] += a0 * np.eye(n_d)
        M[n_d:, :] = self.J[n_d:, :]
        self.lu = lu_factor(M)
        self.lu_key = (a0, beta_h)
        self.stats["factorizations"] += 1

    def solve(self, x_guess, u, w, a0, history, h, beta, gamma_F_old):
        """Returns (x_new, F_new) or raises ConvergenceError.

        Starts as a chord iteration on the cached factorization. Slow contraction
        refreshes the Jacobian at the current iterate; if that still contracts
        slowly the iteration turns into a full Newton that refreshes every step.
        """
        system = self.system
        options = self.options
        n_d = system.n_d
        dynamic = slice(0, n_d)
        algebraic = slice(n_d, system.n)
        key = (a0, beta * h)

        def residual(x):
            F = system.rhs(x, u, w)
            if not np.all(np.isfinite(F)):
                raise EvaluationError("non-finite residual during a step")
            r = np.empty_like(F)
            r[dynamic] = a0 * x[dynamic] + history - h * (beta * F[dynamic] + gamma_F_old)
            r[algebraic] = F[algebraic]
            return r, F

        def refresh(x):
            self._refresh_jacobian(x, u, w)
            self._factor(*key)

        if self.J is None:
            refresh(x_guess)
            mode = FRESH_CHORD
        else:
            mode = CHORD
            # rounding-level changes in h reuse the factorization
            if self.lu is None or not np.allclose(self.lu_key, key, rtol=1e-9, atol=0):
                self._factor(*key)

        x = x_guess.copy()
        previous = np.inf
        stepped = small = False
        iteration = 0
        while True:
            r, F = residual(x)
            algebraic_norm = np.max(np.abs(r[algebraic]), initial=0.0)
            if stepped and small and algebraic_norm <= options.algebraic_tol:
                return x, F
            if iteration == options.max_newton:
                size = slow = np.inf
            else:
                delta = lu_solve(self.lu, -r)
                size = np.max(np.abs(delta)) if np.all(np.isfinite(delta)) else np.inf
                slow = stepped and size > 0.5 * previous and size > options.atol
            if slow or not np.isfinite(size):
                if mode == NEWTON:
                    if not np.isfinite(size):
                        break
                else:
                    mode += 1
                    self.stats["escalations"] += 1
                    refresh(x)
                    previous = np.inf
                    stepped = False
                    iteration = 0
                    continue
            x = x + delta
            small = np.all(np.abs(delta) <= options.atol + options.rtol * np.abs(x))
            previous = size
            stepped = True
            iteration += 1
            self.stats["newton_iterations"] += 1
            if mode == NEWTON and not small:
                refresh(x)
        raise ConvergenceError(f"step Newton did not converge (h={h:.3e})", last=x)


def _schedule(t0, t_end, record_dt, breakpoints):
    """Sorted unique stopping times: recording grid, breakpoints and t_end."""
    count = int(np.floor((t_end - t0) / record_dt + 1e-9))
    records = t0 + record_dt * np.arange(1, count + 1)
    inner = [t for t in breakpoints if t0 < t < t_end]
    stops = np.unique(np.r_[records, inner, t_end])
    scale = max(1.0, abs(t_end))
    keep = np.r_[True, np.diff(stops) > 1e-9 * scale]
    stops = stops[keep]
    if stops[-1] < t_end - 1e-9 * scale:
        stops = np.r_[stops, t_end]
    else:
        stops[-1] = t_end
    record_set = set(np.round(records, 9)) | {round(t_end, 9)}
    return stops, [round(t, 9) in record_set for t in stops]


def integrate(system, point, scenario=None, t_span=(0.0, 1.0), options=None):
    """Trajectory of the system from a consistent point under a scenario."""
    options = SolverOptions() if options is None else options
    scenario = Scenario() if scenario is None else scenario
    t0, t_end = float(t_span[0]), float(t_span[1])
    if not t_end > t0:
        raise ValueError(f"empty time span {t_span}")
    if system.layout is not None:
        scenario.validate(system.layout)

    point = point if isinstance(point, OperatingPoint) else OperatingPoint(*point)
    base = ScenarioBase.from_system(system, point.u, point.w)
    breakpoints = sorted(t for t in scenario.breakpoints() if t0 <= t < t_end)
    stops, recorded = _schedule(t0, t_end, options.record_dt, breakpoints)
    scale = max(1.0, abs(t_end))

    jacobian = JacobianCache(system, mode=options.jacobian)
    stepper = _Stepper(system, options, jacobian)
    recorder = _Recorder(system)
    diagnostics = {
        "method": options.method,
        "scenario": scenario.label,
        "steps": 0,
        "rejected_steps": 0,
        "events": [],
        "max_algebraic_residual": 0.0,
    }

    n_d = system.n_d
    x = np.array(point.x, dtype=float)
    u, w, Y = apply_scenario(scenario, t0, base)
    stage = 0
    F = system.rhs(x, u, w)
    diagnostics["max_algebraic_residual"] = float(np.max(np.abs(F[n_d:]), initial=0.0))
    recorder.add(t0, x, u, w, stage)

    def fail(message, cause):
        diagnostics.update(stepper.stats)
        partial = recorder.trajectory(diagnostics)
        raise IntegrationError(f"{message} at t={t:.6f}: {cause}", partial) from cause

    t = t0
    x_previous = None
    h_previous = None
    startup = 0
    h_local = options.h
    successes = 0
    pending = list(breakpoints)

    for stop, record in zip(stops, recorded):
        # inputs for the segment that ends at `stop`
        u_new, w_new, Y_new = apply_scenario(scenario, 0.5 * (t + stop), base)
        at_event = bool(pending) and abs(pending[0] - t) <= 1e-9 * scale
        if at_event:
            pending.pop(0)
        jump = scenario.state_jump(n_d) if at_event and scenario.kind == "state-perturbation" else None

        changed_inputs = not (np.array_equal(u_new, u) and np.array_equal(w_new, w))
        changed_topology = Y is not None and Y_new is not None and not np.array_equal(Y_new, Y)
        if changed_inputs or changed_topology or jump is not None:
            u, w = u_new, w_new
            if changed_topology:
                Y = Y_new
                system = system.with_admittance(Y)
                jacobian = jacobian.with_system(system)
                stepper.reset(system, jacobian)
                stage += 1
            if jump is not None:
                x[:n_d] += jump
            try:
                x[n_d:] = solve_consistent(
                    system, x[:n_d], u, w, x[n_d:], tol=0.1 * options.algebraic_tol,
                    jacobian=jacobian,
                )
            except (ConvergenceError, SingularJacobianError, EvaluationError) as e:
                fail("consistent re-solve failed", e)
            F = system.rhs(x, u, w)
            stepper.lu = None
            stepper.J = None
            x_previous = None
            startup = options.startup_steps
            diagnostics["events"].append(
                {"t": t, "stage": stage, "inputs": changed_inputs, "topology": changed_topology}
            )
            logger.debug(f"event at t={t:.4f}, topology stage {stage}")

        while stop - t > 1e-12 * scale:
            remaining = stop - t
            n_steps = max(1, int(np.ceil(remaining / h_local - 1e-9)))
            h = remaining / n_steps

            use_bdf2 = options.method == "bdf2" and x_previous is not None
            if startup > 0 or (options.method == "bdf2" and not use_bdf2):
                a0, history, beta, gamma_F = 1.0, -x[:n_d], 1.0, 0.0
            elif use_bdf2:
                rho = h / h_previous
                a0 = (1.0 + 2.0 * rho) / (1.0 + rho)
                history = -(1.0 + rho) * x[:n_d] + rho**2 / (1.0 + rho) * x_previous
                beta, gamma_F = 1.0, 0.0
            else:
                a0, history, beta = 1.0, -x[:n_d], 0.5
                gamma_F = 0.5 * F[:n_d]

            try:
                x_new, F_new = stepper.solve(x, u, w, a0, history, h, beta, gamma_F)
            except (ConvergenceError, EvaluationError) as e:
                diagnostics["rejected_steps"] += 1
                successes = 0
                h_local = 0.5 * h
                if h_local < options.h_min * (1.0 - 1e-9):
                    fail("step size fell below its lower bound", e)
                continue

            x_previous, h_previous = x[:n_d].copy(), h
            x, F, t = x_new, F_new, t + h
            diagnostics["steps"] += 1
            diagnostics["max_algebraic_residual"] = max(
                diagnostics["max_algebraic_residual"], float(np.max(np.abs(F[n_d:]), initial=0.0))
            )
            if startup > 0:
                startup -= 1
            successes += 1
            if h_local < options.h and successes >= 4:
                h_local = min(2.0 * h_local, options.h)
                successes = 0

        t = stop
        if record:
            recorder.add(t, x, u, w, stage)

    diagnostics.update(stepper.stats)
    diagnostics["jacobian_evaluations"] = jacobian.evaluations
    logger.info(
        f"integrated {t_end - t0:g} s with {diagnostics['steps']} steps, "
        f"{diagnostics['rejected_steps']} rejected, "
        f"{diagnostics['newton_iterations']} Newton iterations"
    )
    return recorder.trajectory(diagnostics)
