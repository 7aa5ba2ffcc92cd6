import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from gridmor.grid.system import EvaluationError
from gridmor.reduction.pod import BasisError, select_order
from gridmor.utils.array import fix_signs

logger = logging.getLogger(__name__)

EVAL_MODES = ("selective", "full")


class SelectionError(Exception):
    """The greedy interpolation system became singular"""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True, eq=False)
class DeimArtifacts:
    """Nonlinearity modes, interpolation indices and the small interpolation matrix."""

    modes: np.ndarray
    indices: np.ndarray
    values: np.ndarray = None
    # f at the snapshot reference; the modes then span deviations from it
    offset: np.ndarray = None

    @property
    def n(self):
        return self.modes.shape[0]

    @property
    def p(self):
        return len(self.indices)

    @property
    def selector(self):
        """P_M: unit columns e_i for the selected indices."""
        P = np.zeros((self.n, self.p))
        P[self.indices, np.arange(self.p)] = 1.0
        return P

    @property
    def interpolation(self):
        """P_M' W_fr."""
        return self.modes[self.indices, :]

    def coefficients(self, sampled):
        return scipy.linalg.solve(self.interpolation, sampled)

    def reconstruct(self, sampled):
        """W_fr (P_M' W_fr)^-1 applied to sampled components, around the offset if any."""
        if self.offset is None:
            return self.modes @ self.coefficients(sampled)
        return self.offset + self.modes @ self.coefficients(sampled - self.offset[self.indices])

    def projector(self, W_L):
        """W_L W_fr (P_M' W_fr)^-1, an r x p matrix."""
        # solve with the transpose instead of forming the inverse
        return scipy.linalg.solve(self.interpolation.T, (W_L @ self.modes).T).T

    def shift(self, W_L):
        """W_L f_ref, the constant part of the reduced term."""
        return None if self.offset is None else W_L @ self.offset


def nonlinearity_modes(X_f, energy=0.999, p=None):
    """Leading left singular vectors of X_f, p chosen by cumulative energy unless given."""
    X_f = np.asarray(X_f, dtype=float)
    if not np.any(X_f):
        raise BasisError("nonlinearity snapshots are identically zero")
    W_f, sigma, _ = scipy.linalg.svd(X_f, full_matrices=False, lapack_driver="gesvd")
    rank = int(np.sum(sigma > 1e-12 * sigma[0]))
    if p is None:
        p = select_order(sigma[:rank], energy) if energy < 1.0 else rank
    if not 0 < p <= rank:
        raise BasisError(f"{p} interpolation points requested, X_f has rank {rank}")
    logger.info(f"DEIM uses {p} of {rank} nonlinearity modes")
    return fix_signs(W_f[:, :p]), sigma


def deim_select(W_f, p=None):
    """Greedy interpolation indices, each at the largest residual magnitude."""
    W_f = np.asarray(W_f, dtype=float)
    p = W_f.shape[1] if p is None else p
    if p > W_f.shape[1]:
        raise SelectionError(f"{p} points requested from {W_f.shape[1]} modes")

    indices = [int(np.argmax(np.abs(W_f[:, 0])))]
    for j in range(1, p):
        sampled = W_f[indices, :j]
        try:
            c = scipy.linalg.solve(sampled, W_f[indices, j])
        except (scipy.linalg.LinAlgError, ValueError) as e:
            raise SelectionError(f"singular interpolation system at step {j + 1}", step=j + 1) from e
        residual = W_f[:, j] - W_f[:, :j] @ c
        index = int(np.argmax(np.abs(residual)))
        if index in indices or residual[index] == 0:
            raise SelectionError(
                f"residual vanished at step {j + 1}, modes are dependent", step=j + 1
            )
        indices.append(index)

    artifacts = DeimArtifacts(modes=W_f[:, :p], indices=np.array(indices, dtype=int))
    condition = np.linalg.cond(artifacts.interpolation)
    logger.debug(f"DEIM interpolation matrix condition {condition:.2e}")
    return artifacts


def build_deim(snapshots, energy=0.999, p=None):
    """Modes and indices of the snapshot nonlinearity, taken about f_reference when set."""
    offset = snapshots.f_reference
    X_f = snapshots.X_f if offset is None else snapshots.X_f - offset[:, None]
    W_f, sigma = nonlinearity_modes(X_f, energy=energy, p=p)
    artifacts = deim_select(W_f)
    return DeimArtifacts(
        modes=artifacts.modes, indices=artifacts.indices, values=sigma, offset=offset
    )


def deim_eval(
    artifacts, basis, nonlinearity, z, u, w, mode="selective", projector=None, shift=None
):
    """Reduced nonlinear term W_L W_fr f_r at reduced state z."""
    if mode not in EVAL_MODES:
        raise ValueError(f"unknown DEIM evaluation mode {mode!r}")
    x = basis.recover_state(z)
    if mode == "selective":
        sampled = nonlinearity.evaluate_rows(x, u, w, artifacts.indices)
    else:
        sampled = nonlinearity.evaluate(x, u, w)[artifacts.indices]
    if not np.all(np.isfinite(sampled)):
        raise EvaluationError("non-finite nonlinearity components at the DEIM indices")
    projector = artifacts.projector(basis.W_L) if projector is None else projector
    if artifacts.offset is None:
        return projector @ sampled
    shift = artifacts.shift(basis.W_L) if shift is None else shift
    return shift + projector @ (sampled - artifacts.offset[artifacts.indices])
