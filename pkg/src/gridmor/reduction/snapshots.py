import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from gridmor.grid.system import Nonlinearity

logger = logging.getLogger(__name__)


class ScalingError(Exception):
    """A steady-state entry is zero and no fallback was allowed"""


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """Recorded states split by block, with the nonlinearity at every column."""

    X_d: np.ndarray
    X_a: np.ndarray
    X_f: np.ndarray
    t: np.ndarray
    U: np.ndarray
    W: np.ndarray
    scenario: str = ""
    reference: Optional[np.ndarray] = None
    # f(reference, u_0, w_0)
    f_reference: Optional[np.ndarray] = None

    def __post_init__(self):
        columns = {self.X_d.shape[1], self.X_a.shape[1], self.X_f.shape[1], len(self.t)}
        if len(columns) != 1:
            raise ValueError(f"snapshot blocks disagree on the column count: {sorted(columns)}")

    @property
    def n_d(self):
        return self.X_d.shape[0]

    @property
    def n_columns(self):
        return len(self.t)

    @property
    def X(self):
        return np.vstack([self.X_d, self.X_a])

    def deviations(self):
        """Dynamic and algebraic blocks relative to the stored reference (raw if none)."""
        if self.reference is None:
            return self.X_d, self.X_a
        x_d, x_a = self.reference[: self.n_d], self.reference[self.n_d:]
        return self.X_d - x_d[:, None], self.X_a - x_a[:, None]

    def with_reference(self, x_ref, f_ref=None):
        return replace(
            self,
            reference=None if x_ref is None else np.asarray(x_ref, dtype=float),
            f_reference=None if x_ref is None or f_ref is None else np.asarray(f_ref, dtype=float),
        )


def collect(trajectory, system, reference=None):
    """Snapshot matrices of a trajectory; X_f is recomputed from the stored (x, u, w)."""
    X = trajectory.X
    n_d = system.n_d
    X_f = np.empty_like(X)
    for k in range(X.shape[1]):
        X_f[:, k] = system.f(X[:, k], trajectory.U[:, k], trajectory.W[:, k])
    if not np.all(np.isfinite(X_f)):
        raise ValueError("non-finite nonlinearity values in the snapshot set")
    f_reference = None
    if reference is not None:
        reference = np.asarray(reference, dtype=float)
        f_reference = system.f(reference, trajectory.U[:, 0], trajectory.W[:, 0])
    logger.info(f"collected {X.shape[1]} snapshots of {X.shape[0]} states")
    return SnapshotSet(
        X_d=X[:n_d].copy(),
        X_a=X[n_d:].copy(),
        X_f=X_f,
        t=trajectory.t.copy(),
        U=trajectory.U.copy(),
        W=trajectory.W.copy(),
        scenario=trajectory.diagnostics.get("scenario", ""),
        reference=reference,
        f_reference=f_reference,
    )


def merge(snapshot_sets):
    """Column-wise union of several snapshot sets sharing one reference."""
    first = snapshot_sets[0]
    return SnapshotSet(
        X_d=np.hstack([s.X_d for s in snapshot_sets]),
        X_a=np.hstack([s.X_a for s in snapshot_sets]),
        X_f=np.hstack([s.X_f for s in snapshot_sets]),
        t=np.concatenate([s.t for s in snapshot_sets]),
        U=np.hstack([s.U for s in snapshot_sets]),
        W=np.hstack([s.W for s in snapshot_sets]),
        scenario="+".join(s.scenario for s in snapshot_sets),
        reference=first.reference,
        f_reference=first.f_reference,
    )


@dataclass(frozen=True, eq=False)
class ScalingSet:
    """Diagonals of S_x, S_u and S_w."""

    s_x: np.ndarray
    s_u: np.ndarray
    s_w: np.ndarray

    def scale(self, x, u=None, w=None):
        scaled = [np.asarray(x) / _column(self.s_x, x)]
        if u is not None:
            scaled.append(np.asarray(u) / _column(self.s_u, u))
        if w is not None:
            scaled.append(np.asarray(w) / _column(self.s_w, w))
        return scaled[0] if len(scaled) == 1 else tuple(scaled)

    def unscale(self, x, u=None, w=None):
        raw = [np.asarray(x) * _column(self.s_x, x)]
        if u is not None:
            raw.append(np.asarray(u) * _column(self.s_u, u))
        if w is not None:
            raw.append(np.asarray(w) * _column(self.s_w, w))
        return raw[0] if len(raw) == 1 else tuple(raw)


def _column(diagonal, values):
    return diagonal[:, None] if np.ndim(values) == 2 else diagonal


def scaling_diagonal(values, threshold=1e-6, fallback=True, label="x"):
    values = np.array(values, dtype=float)
    small = np.abs(values) < threshold
    if small.any():
        if not fallback:
            raise ScalingError(
                f"steady-state {label} has zero entries at {np.flatnonzero(small).tolist()}"
            )
        logger.debug(f"{small.sum()} {label} entries left unscaled")
        values[small] = 1.0
    return values


class ScaledNonlinearity(Nonlinearity):
    """S_x^-1 f(S_x x, S_u u, S_w w)."""

    def __init__(self, inner, scaling):
        super().__init__(inner.n, rows=inner.rows)
        self.inner = inner
        self.scaling = scaling

    def evaluate(self, x, u, w):
        s = self.scaling
        return self.inner.evaluate(s.s_x * x, s.s_u * u, s.s_w * w) / s.s_x

    def evaluate_rows(self, x, u, w, rows):
        s = self.scaling
        values = self.inner.evaluate_rows(s.s_x * x, s.s_u * u, s.s_w * w, rows)
        return values / s.s_x[rows]


def _scaled(system, scaling, C=None):
    s_x, s_u, s_w = scaling.s_x, scaling.s_u, scaling.s_w
    C = system.C if C is None else C
    return replace(
        system,
        A=system.A * s_x[None, :] / s_x[:, None],
        B_u=system.B_u * s_u[None, :] / s_x[:, None],
        B_w=system.B_w * s_w[None, :] / s_x[:, None],
        C=C * s_x[None, :],
        c=system.c / s_x,
        nonlinearity=ScaledNonlinearity(system.nonlinearity, scaling),
        rebuild=None,
    )


def scale_system(system, x0, u0, w0, threshold=1e-6, fallback=True):
    """System in coordinates normalized by the steady state; its equilibrium is all ones."""
    scaling = ScalingSet(
        s_x=scaling_diagonal(x0, threshold, fallback, "x"),
        s_u=scaling_diagonal(u0, threshold, fallback, "u"),
        s_w=scaling_diagonal(w0, threshold, fallback, "w"),
    )
    scaled = _scaled(system, scaling)
    if system.rebuild is not None:

        def rebuild(current, Y):
            raw_C = current.C / scaling.s_x[None, :]
            return replace(
                _scaled(system.with_admittance(Y), scaling, C=raw_C), rebuild=rebuild
            )

        scaled = replace(scaled, rebuild=rebuild)
    return scaled, scaling
