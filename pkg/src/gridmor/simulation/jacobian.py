import logging

import numpy as np

logger = logging.getLogger(__name__)

EPS = np.finfo(float).eps
JACOBIAN_MODES = ("finite-difference", "analytic")


class JacobianCache(object):
    """Forward-difference Jacobian of f over the columns f actually depends on.

    The dependent columns are found once by probing and reused afterwards. In
    "analytic" mode a nonlinearity that provides `jacobian` is asked first.
    """

    def __init__(self, system, seed=0, mode="finite-difference", columns=None):
        if mode not in JACOBIAN_MODES:
            raise ValueError(f"unknown Jacobian mode {mode!r}")
        self.system = system
        self.seed = seed
        self.mode = mode
        self._columns = columns
        self.evaluations = 0

    def with_system(self, system):
        """Same dependency pattern on a system whose linear part changed."""
        cache = JacobianCache(system, seed=self.seed, mode=self.mode, columns=self._columns)
        cache.evaluations = self.evaluations
        return cache

    def columns(self, x, u, w):
        if self._columns is None:
            self._columns = self._sparsity(x, u, w)
            logger.debug(f"nonlinearity depends on {len(self._columns)} of {len(x)} columns")
        return self._columns

    def _sparsity(self, x, u, w):
        nonlinearity = self.system.nonlinearity
        if len(nonlinearity.rows) == 0:
            return np.array([], dtype=int)
        rng = np.random.default_rng(self.seed)
        base = x + 1e-3 * (1.0 + np.abs(x)) * rng.standard_normal(len(x))
        f0 = nonlinearity.evaluate(base, u, w)
        active = []
        for j in range(len(x)):
            shifted = base.copy()
            shifted[j] += 1e-4 * (1.0 + abs(base[j]))
            if np.any(nonlinearity.evaluate(shifted, u, w) != f0):
                active.append(j)
        self.evaluations += len(x) + 1
        return np.array(active, dtype=int)

    def nonlinear(self, x, u, w, f0=None):
        nonlinearity = self.system.nonlinearity
        if self.mode == "analytic":
            J = nonlinearity.jacobian(x, u, w)
            if J is not None:
                return J
        n = len(x)
        J = np.zeros((n, n))
        columns = self.columns(x, u, w)
        if len(columns) == 0:
            return J
        f0 = nonlinearity.evaluate(x, u, w) if f0 is None else f0
        for j in columns:
            step = np.sqrt(EPS) * max(1.0, abs(x[j]))
            shifted = x.copy()
            shifted[j] += step
            J[:, j] = (nonlinearity.evaluate(shifted, u, w) - f0) / step
        self.evaluations += len(columns)
        return J

    def full(self, x, u, w, f0=None):
        """A + df/dx."""
        return self.system.A + self.nonlinear(x, u, w, f0=f0)


def input_jacobian(nonlinearity, x, u, w, columns, which="u"):
    """Forward differences of f with respect to selected input or disturbance entries."""
    f0 = nonlinearity.evaluate(x, u, w)
    J = np.zeros((len(f0), len(columns)))
    for k, j in enumerate(columns):
        if which == "u":
            vector = u.copy()
            step = np.sqrt(EPS) * max(1.0, abs(u[j]))
            vector[j] += step
            J[:, k] = (nonlinearity.evaluate(x, vector, w) - f0) / step
        else:
            vector = w.copy()
            step = np.sqrt(EPS) * max(1.0, abs(w[j]))
            vector[j] += step
            J[:, k] = (nonlinearity.evaluate(x, u, vector) - f0) / step
    return J
