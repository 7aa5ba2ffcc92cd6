import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from gridmor.grid.system import EvaluationError, NdaeSystem, Nonlinearity, OperatingPoint
from gridmor.reduction.deim import deim_eval
from gridmor.reduction.pod import StructureViolation
from gridmor.simulation.equilibrium import solve_consistent
from gridmor.simulation.jacobian import JacobianCache
from gridmor.simulation.solver import Trajectory, integrate

logger = logging.getLogger(__name__)

NONLINEARITY_PATHS = ("full-projection", "deim")


class ProjectedNonlinearity(Nonlinearity):
    """W_L f(x_ref + W_R z)."""

    def __init__(self, inner, basis):
        super().__init__(basis.r)
        self.inner = inner
        self.basis = basis
        self.W_L = basis.W_L[:, inner.rows]

    def evaluate(self, z, u, w):
        x = self.basis.recover_state(z)
        values = self.inner.evaluate_rows(x, u, w, self.inner.rows)
        if not np.all(np.isfinite(values)):
            raise EvaluationError("non-finite nonlinearity in the projected system")
        return self.W_L @ values


class DeimNonlinearity(Nonlinearity):
    """W_L (f_ref + W_fr (P' W_fr)^-1 (f_P(x_ref + W_R z) - f_ref,P)), projector formed once."""

    def __init__(self, inner, basis, artifacts, mode="selective"):
        super().__init__(basis.r)
        self.inner = inner
        self.basis = basis
        self.artifacts = artifacts
        self.mode = mode
        self.projector = artifacts.projector(basis.W_L)
        self.shift = artifacts.shift(basis.W_L)

    def evaluate(self, z, u, w):
        return deim_eval(
            self.artifacts, self.basis, self.inner, z, u, w,
            mode=self.mode, projector=self.projector, shift=self.shift,
        )


@dataclass(frozen=True, eq=False)
class Rom:
    """Reduced NDAE together with the basis and full-order system it came from."""

    system: NdaeSystem
    basis: object
    fom: NdaeSystem
    path: str = "full-projection"
    regular: Optional[bool] = None

    @property
    def E_r(self):
        return self.system.E

    @property
    def A_r(self):
        return self.system.A

    @property
    def B_ur(self):
        return self.system.B_u

    @property
    def B_wr(self):
        return self.system.B_w

    @property
    def C_r(self):
        return self.system.C

    @property
    def provenance(self):
        return {"method": self.basis.method, "nonlinearity": self.path,
                "r_d": self.basis.r_d, "r_a": self.basis.r_a}


def _reduced_names(basis):
    return [f"z_d_{k + 1}" for k in range(basis.r_d)] + [
        f"z_a_{k + 1}" for k in range(basis.r_a)
    ]


def _project_matrices(fom, basis, nonlinearity):
    W_L, W_R = basis.W_L, basis.W_R
    E_r = basis.descriptor()
    target = np.diag(np.r_[np.ones(basis.r_d), np.zeros(basis.r_a)])
    if not np.array_equal(E_r, target):
        raise StructureViolation("projected E is not blkdiag(I, 0)")

    c_r = W_L @ fom.c
    if basis.reference is not None:
        c_r = c_r + W_L @ (fom.A @ basis.reference)
    layout = fom.layout
    if layout is not None:
        groups = {"dynamic": np.arange(basis.r_d), "algebraic": np.arange(basis.r_d, basis.r)}
        layout = layout.with_states(_reduced_names(basis), groups=groups)
    return NdaeSystem(
        n_d=basis.r_d,
        n_a=basis.r_a,
        A=W_L @ fom.A @ W_R,
        B_u=W_L @ fom.B_u,
        B_w=W_L @ fom.B_w,
        C=fom.C @ W_R,
        c=c_r,
        nonlinearity=nonlinearity,
        Y=fom.Y,
        layout=layout,
    )


def project(fom, basis, deim=True, mode="selective"):
    """Galerkin projection of the full NDAE onto the basis.

    With `deim` and DEIM artifacts on the basis the nonlinearity is
    hyper-reduced, otherwise the full nonlinearity is projected.
    """
    if basis.n_d != fom.n_d or basis.n_a != fom.n_a:
        raise ValueError(
            f"basis blocks ({basis.n_d}, {basis.n_a}) do not match the system ({fom.n_d}, {fom.n_a})"
        )
    use_deim = deim and basis.deim is not None
    path = "deim" if use_deim else "full-projection"

    def reduced(full):
        if use_deim:
            nonlinearity = DeimNonlinearity(full.nonlinearity, basis, basis.deim, mode=mode)
        else:
            nonlinearity = ProjectedNonlinearity(full.nonlinearity, basis)
        return _project_matrices(full, basis, nonlinearity)

    system = reduced(fom)
    if fom.rebuild is not None:

        def rebuild(current, Y):
            rebuilt = reduced(fom.with_admittance(Y))
            return replace(rebuilt, C=current.C, rebuild=rebuild)

        system = replace(system, rebuild=rebuild)
    logger.info(f"projected {fom.n}-state system onto r={basis.r} ({path})")
    return Rom(system=system, basis=basis, fom=fom, path=path)


def is_regular(E, A, trials=3, seed=0, condition_limit=1e12):
    """Random-shift test: s E - A nonsingular for some random s means a regular pencil."""
    rng = np.random.default_rng(seed)
    scale = max(1.0, np.linalg.norm(A, ord=np.inf))
    for s in scale * rng.uniform(0.5, 2.0, size=trials):
        if np.linalg.cond(s * E - A) < condition_limit:
            return True
    return False


def check_regularity(rom, point):
    """Regularity of the pencil linearized at a reduced point."""
    jacobian = JacobianCache(rom.system)
    J = jacobian.full(point.x, point.u, point.w)
    regular = is_regular(rom.system.E, J)
    if not regular:
        logger.warning("reduced pencil looks singular at the operating point")
    return replace(rom, regular=regular)


def reduce_point(rom, point):
    """Reduced initial state: dynamic part projected, algebraic part re-solved."""
    point = point if isinstance(point, OperatingPoint) else OperatingPoint(*point)
    z = rom.basis.reduce_state(point.x)
    r_d = rom.basis.r_d
    if rom.basis.r_a:
        z[r_d:] = solve_consistent(rom.system, z[:r_d], point.u, point.w, z[r_d:])
    return OperatingPoint(x=z, u=point.u, w=point.w)


def simulate_rom(rom, point, scenario=None, t_span=(0.0, 1.0), options=None, reduced=False):
    """Integrates the reduced NDAE; a full-order point is reduced first unless `reduced`."""
    point = point if isinstance(point, OperatingPoint) else OperatingPoint(*point)
    if not reduced:
        point = reduce_point(rom, point)
    return integrate(rom.system, point, scenario, t_span, options)


def recover(basis, trajectory, system=None):
    """Full-state trajectory x = x_ref + W_R z, column by column.

    With the full-order system given, the network residual of the recovered
    states is reported in the diagnostics (columns of the first topology only).
    """
    X = basis.recover_state(trajectory.X)
    diagnostics = dict(trajectory.diagnostics)
    names = tuple(system.state_names) if system is not None else tuple(
        f"x_{k + 1}" for k in range(basis.n)
    )
    if system is not None:
        columns = np.flatnonzero(trajectory.topology == 0)
        band = 0.0
        for k in columns:
            residual = system.rhs(X[:, k], trajectory.U[:, k], trajectory.W[:, k])
            band = max(band, float(np.max(np.abs(residual[system.n_d:]), initial=0.0)))
        diagnostics["recovered_network_residual"] = band
        logger.info(f"recovered states meet the network equations within {band:.2e}")
    return Trajectory(
        t=trajectory.t.copy(),
        X=X,
        U=trajectory.U.copy(),
        W=trajectory.W.copy(),
        topology=trajectory.topology.copy(),
        state_names=names,
        input_names=trajectory.input_names,
        disturbance_names=trajectory.disturbance_names,
        diagnostics=diagnostics,
    )
