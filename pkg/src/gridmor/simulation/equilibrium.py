import logging

import numpy as np
from scipy.linalg import LinAlgError, lstsq, lu_factor, lu_solve

from gridmor.grid.assembly import state_index
from gridmor.grid.powerflow import operating_point_guess
from gridmor.grid.system import EvaluationError, OperatingPoint, eval_residual
from gridmor.simulation.jacobian import JacobianCache, input_jacobian

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e13


class ConvergenceError(Exception):
    """Newton iteration did not reach the tolerance"""

    def __init__(self, message, last=None, residual=np.inf):
        super().__init__(message)
        self.last = last
        self.residual = residual


class SingularJacobianError(Exception):
    """The algebraic Jacobian is singular or too badly conditioned to solve with"""


def _damped(residual_norm, trial, norm0, max_halvings=12):
    """Bisects the step length until the residual norm decreases."""
    step = 1.0
    for _ in range(max_halvings):
        try:
            norm = residual_norm(trial(step))
        except EvaluationError:
            norm = np.inf
        if norm < (1.0 - 1e-4 * step) * norm0:
            return step, norm
        step *= 0.5
    return step, norm


def solve_consistent(
    system, x_d, u, w, x_a, tol=1e-10, max_iter=50, damping=True, jacobian=None,
    full_output=False,
):
    """Algebraic states x_a with h(x_d, x_a, u, w) = 0 for fixed x_d.

    Newton on the algebraic rows, with bisection damping when `damping` is set.
    With `full_output` the number of Newton steps is returned as well.
    """
    n_d = system.n_d
    x_d = np.asarray(x_d, dtype=float)
    x_a = np.array(x_a, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    jacobian = JacobianCache(system) if jacobian is None else jacobian

    def residual(z):
        return eval_residual(system, x_d, z, u, w)[n_d:]

    def norm(z):
        return np.max(np.abs(residual(z)), initial=0.0)

    h = residual(x_a)
    current = np.max(np.abs(h), initial=0.0)
    for iteration in range(max_iter + 1):
        if current <= tol:
            logger.debug(f"consistent algebraic state after {iteration} Newton steps")
            return (x_a, iteration) if full_output else x_a
        if iteration == max_iter:
            break

        x = np.concatenate([x_d, x_a])
        J = jacobian.full(x, u, w)[n_d:, n_d:]
        if np.linalg.cond(J) > CONDITION_LIMIT:
            raise SingularJacobianError(
                f"algebraic Jacobian is singular (condition {np.linalg.cond(J):.2e})"
            )
        delta = lu_solve(lu_factor(J, check_finite=True), -h)

        if damping:
            step, current = _damped(norm, lambda s: x_a + s * delta, current)
        else:
            step = 1.0
        x_a = x_a + step * delta
        h = residual(x_a)
        current = np.max(np.abs(h), initial=0.0)

    raise ConvergenceError(
        f"algebraic Newton stalled at residual {current:.3e} after {max_iter} steps",
        last=x_a,
        residual=current,
    )


def find_equilibrium(
    system, u, w, guess, tol=1e-10, max_iter=50,
    free_inputs=(), free_disturbances=(), pinned=(),
):
    """Point with g = 0 and h = 0.

    Gauss-Newton over the state, optionally with some inputs or disturbances
    as extra unknowns and some states held at their guess.
    """
    x = np.array(guess, dtype=float)
    u = np.array(u, dtype=float)
    w = np.array(w, dtype=float)
    free_inputs = np.asarray(free_inputs, dtype=int)
    free_disturbances = np.asarray(free_disturbances, dtype=int)
    states = np.setdiff1d(np.arange(system.n), np.asarray(pinned, dtype=int))
    n_x, n_fu = len(states), len(free_inputs)
    jacobian = JacobianCache(system)

    def unpack(z):
        x_new, u_new, w_new = x.copy(), u.copy(), w.copy()
        x_new[states] = z[:n_x]
        u_new[free_inputs] = z[n_x:n_x + n_fu]
        w_new[free_disturbances] = z[n_x + n_fu:]
        return x_new, u_new, w_new

    def residual(z):
        x_new, u_new, w_new = unpack(z)
        return eval_residual(system, x_new[:system.n_d], x_new[system.n_d:], u_new, w_new)

    def norm(z):
        return np.max(np.abs(residual(z)))

    z = np.r_[x[states], u[free_inputs], w[free_disturbances]]
    F = residual(z)
    current = np.max(np.abs(F))
    best = (current, z)
    for iteration in range(max_iter + 1):
        if current <= tol:
            break
        if iteration == max_iter:
            x_best, _, _ = unpack(best[1])
            raise ConvergenceError(
                f"equilibrium search stalled at residual {best[0]:.3e}",
                last=x_best,
                residual=best[0],
            )
        x_k, u_k, w_k = unpack(z)
        f = system.nonlinearity
        blocks = [jacobian.full(x_k, u_k, w_k)[:, states]]
        if n_fu:
            blocks.append(
                system.B_u[:, free_inputs]
                + input_jacobian(f, x_k, u_k, w_k, free_inputs, which="u")
            )
        if len(free_disturbances):
            blocks.append(
                system.B_w[:, free_disturbances]
                + input_jacobian(f, x_k, u_k, w_k, free_disturbances, which="w")
            )
        try:
            delta = lstsq(np.hstack(blocks), -F)[0]
        except LinAlgError as e:
            raise SingularJacobianError(f"equilibrium Jacobian: {e}") from e

        step, current = _damped(norm, lambda s: z + s * delta, current)
        z = z + step * delta
        F = residual(z)
        current = np.max(np.abs(F))
        if current < best[0]:
            best = (current, z)

    x, u, w = unpack(z)
    logger.info(f"equilibrium after {iteration} Gauss-Newton steps, residual {current:.2e}")
    return OperatingPoint(x=x, u=u, w=w)


def initialize(grid, system, tol=1e-10):
    """Power flow, closed-form device states, then a full-NDAE polish.

    The slack power set-point and the irradiances are solved for while the slack
    rotor angle and the DC link levels stay at their power-flow values.
    """
    x, u, w = operating_point_guess(grid)
    index = state_index(grid)

    slack_bus = next((bus.id for bus in grid.buses if bus.slack), None)
    free_inputs, pinned = [], []
    for k, machine in enumerate(grid.machines):
        if machine.bus == slack_bus or (slack_bus is None and k == 0):
            free_inputs.append(index.machine_power_ref()[k])
            pinned.append(index.machine("delta")[k])
            break
    if not pinned and grid.solar:
        pinned.append(index.solar("delta_c")[0])
    pinned.extend(index.solar("e_dc"))

    residual = np.max(np.abs(system.rhs(x, u, w)), initial=0.0)
    logger.info(f"power-flow operating point residual {residual:.2e}")
    return find_equilibrium(
        system, u, w, x, tol=tol,
        free_inputs=free_inputs,
        free_disturbances=index.irradiance(),
        pinned=pinned,
    )
