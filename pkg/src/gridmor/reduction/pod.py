import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np
import scipy.linalg

from gridmor.utils.array import descending_eigh, fix_signs

logger = logging.getLogger(__name__)

POD_MODES = ("direct-svd", "snapshot-ed")
METHODS = ("sp-pod", "sp-bpod")
EIGEN_CUTOFF = 1e-12


class BasisError(Exception):
    """No modes, an empty order, or an order beyond the available modes"""


class StructureViolation(Exception):
    """The projected descriptor matrix is not blkdiag(I, 0)"""


@dataclass(frozen=True, eq=False)
class PodSpectrum:
    values: np.ndarray
    modes: np.ndarray

    @property
    def rank(self):
        if not len(self.values) or self.values[0] == 0:
            return 0
        return int(np.sum(self.values > EIGEN_CUTOFF * self.values[0]))


def _complete(W_r, n):
    """Orthonormal n x n matrix whose leading columns are W_r."""
    if W_r.shape[1] >= n:
        return W_r[:, :n]
    complement = scipy.linalg.null_space(W_r.T)
    return np.hstack([W_r, complement])


def pod_modes(X, mode="direct-svd"):
    """Square orthonormal mode matrix of X and its singular values, padded with zeros."""
    if mode not in POD_MODES:
        raise BasisError(f"unknown POD mode {mode!r}")
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if X.size == 0 or not np.any(X):
        raise BasisError("snapshot block is empty or zero, it has no modes")

    if mode == "direct-svd":
        W, sigma, _ = scipy.linalg.svd(X, full_matrices=True, lapack_driver="gesvd")
        values = np.zeros(n)
        values[: len(sigma)] = sigma
    else:
        # method of snapshots on the small Gram matrix
        eigenvalues, V = descending_eigh(X.T @ X)
        keep = eigenvalues > EIGEN_CUTOFF * eigenvalues[0]
        keep[n:] = False
        sigma = np.sqrt(eigenvalues[keep])
        W_r = X @ V[:, keep] / sigma
        # one re-orthonormalization pass against round-off
        W_r, _ = np.linalg.qr(W_r)
        W = _complete(W_r, n)
        values = np.zeros(n)
        values[: len(sigma)] = sigma

    return PodSpectrum(values=values, modes=fix_signs(W))


def select_order(values, energy_fraction):
    """Smallest r whose cumulative singular-value sum reaches the fraction."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise BasisError("cannot select an order from an empty spectrum")
    if not 0 < energy_fraction <= 1:
        raise BasisError(f"energy fraction {energy_fraction} outside (0, 1]")
    total = np.sum(values)
    if total <= 0:
        raise BasisError("spectrum carries no energy")
    energy = np.cumsum(values) / total
    return int(np.searchsorted(energy, energy_fraction - 1e-12) + 1)


@dataclass(frozen=True, eq=False)
class ReductionBasis:
    """W = blkdiag(W_d, W_a) truncated to W_R = W T and W_L = T' W^-1.

    With a reference state the map is affine: x = reference + W_R z.
    """

    W_d: np.ndarray
    W_a: np.ndarray
    r_d: int
    r_a: int
    W_R: np.ndarray
    W_L: np.ndarray
    method: str = "sp-pod"
    reference: Optional[np.ndarray] = None
    spectra: Dict[str, np.ndarray] = field(default_factory=dict)
    deim: Optional[object] = None

    @property
    def n_d(self):
        return self.W_d.shape[0]

    @property
    def n_a(self):
        return self.W_a.shape[0]

    @property
    def n(self):
        return self.n_d + self.n_a

    @property
    def r(self):
        return self.r_d + self.r_a

    @property
    def T(self):
        return scipy.linalg.block_diag(
            np.eye(self.n_d)[:, : self.r_d], np.eye(self.n_a)[:, : self.r_a]
        )

    @property
    def W(self):
        return scipy.linalg.block_diag(self.W_d, self.W_a)

    def reduce_state(self, x):
        x = np.asarray(x, dtype=float)
        if self.reference is not None:
            x = x - (self.reference[:, None] if x.ndim == 2 else self.reference)
        return self.W_L @ x

    def recover_state(self, z):
        x = self.W_R @ np.asarray(z, dtype=float)
        if self.reference is not None:
            x = x + (self.reference[:, None] if x.ndim == 2 else self.reference)
        return x

    def descriptor(self):
        """W_L E W_R with entries within 1e-12 of 0 or 1 rounded."""
        E_r = self.W_L[:, : self.n_d] @ self.W_R[: self.n_d, :]
        E_r[np.abs(E_r) < 1e-12] = 0.0
        E_r[np.abs(E_r - 1.0) < 1e-12] = 1.0
        return E_r

    def check_structure(self, tol=1e-10):
        identity = self.W_L @ self.W_R
        error = np.max(np.abs(identity - np.eye(self.r)), initial=0.0)
        if error > tol:
            raise StructureViolation(f"W_L W_R differs from the identity by {error:.2e}")
        dynamic, algebraic = self.W_R[: self.n_d], self.W_R[self.n_d:]
        if np.any(dynamic[:, self.r_d:]) or np.any(algebraic[:, : self.r_d]):
            raise StructureViolation("W_R mixes dynamic and algebraic coordinates")
        E_r = self.descriptor()
        target = np.diag(np.r_[np.ones(self.r_d), np.zeros(self.r_a)])
        if np.max(np.abs(E_r - target), initial=0.0) > tol:
            raise StructureViolation("projected descriptor matrix is not blkdiag(I, 0)")
        return self

    def unscaled(self, s_x, reference=None):
        """The same basis expressed in raw coordinates x = S_x x_s."""
        s_x = np.asarray(s_x, dtype=float)
        return replace(
            self,
            W_R=self.W_R * s_x[:, None],
            W_L=self.W_L / s_x[None, :],
            reference=reference,
        )

    def with_deim(self, artifacts):
        return replace(self, deim=artifacts)


def _left_block(W, r, orthonormal):
    if orthonormal:
        return W[:, :r].T.copy()
    return scipy.linalg.inv(W)[:r, :]


def build_basis(
    W_d, W_a, r_d, r_a, method="sp-pod", reference=None, spectra=None, tol=1e-10
):
    """W_R = W T and W_L = T' W^-1 for the block-diagonal W."""
    W_d = np.atleast_2d(np.asarray(W_d, dtype=float))
    W_a = np.asarray(W_a, dtype=float)
    if W_a.size == 0:
        W_a = np.zeros((0, 0))
    n_d, n_a = W_d.shape[0], W_a.shape[0]
    if method not in METHODS:
        raise BasisError(f"unknown basis provenance {method!r}")
    if r_d + r_a == 0:
        raise BasisError("reduced order is zero")
    if not (0 <= r_d <= n_d and 0 <= r_a <= n_a):
        raise BasisError(f"orders ({r_d}, {r_a}) exceed the block sizes ({n_d}, {n_a})")

    blocks = []
    for W_block, r in ((W_d, r_d), (W_a, r_a)):
        if W_block.size == 0:
            blocks.append((np.zeros((0, 0)), np.zeros((0, 0))))
            continue
        gram = W_block.T @ W_block
        orthonormal = np.allclose(gram, np.eye(len(gram)), atol=1e-12)
        blocks.append((W_block[:, :r], _left_block(W_block, r, orthonormal)))
    (R_d, L_d), (R_a, L_a) = blocks

    basis = ReductionBasis(
        W_d=W_d,
        W_a=W_a,
        r_d=int(r_d),
        r_a=int(r_a),
        W_R=scipy.linalg.block_diag(R_d, R_a).reshape(n_d + n_a, r_d + r_a),
        W_L=scipy.linalg.block_diag(L_d, L_a).reshape(r_d + r_a, n_d + n_a),
        method=method,
        reference=None if reference is None else np.asarray(reference, dtype=float),
        spectra=dict(spectra or {}),
    )
    return basis.check_structure(tol)


def choose_order(values, energy, explicit, n, label):
    if explicit is not None:
        return int(explicit)
    if energy >= 1.0:
        return n
    order = select_order(values, energy)
    logger.info(f"{label} order {order} of {n} at {energy:.2%} energy")
    return order


def sp_pod(
    system, snapshots, energy_d=0.99, energy_a=0.97, r_d=None, r_a=None,
    mode="direct-svd", deim=None,
):
    """Structure-preserving POD basis from a snapshot set.

    `deim` is an optional callable building DEIM artifacts from the snapshot set,
    it is attached to the returned basis.
    """
    if snapshots.n_d != system.n_d:
        raise BasisError(
            f"snapshots have {snapshots.n_d} dynamic rows, system has {system.n_d}"
        )
    X_d, X_a = snapshots.deviations()
    dynamic = pod_modes(X_d, mode)
    if system.n_a:
        algebraic = pod_modes(X_a, mode)
    else:
        algebraic = PodSpectrum(np.zeros(0), np.zeros((0, 0)))

    order_d = choose_order(dynamic.values, energy_d, r_d, system.n_d, "dynamic")
    order_a = (
        choose_order(algebraic.values, energy_a, r_a, system.n_a, "algebraic") if system.n_a else 0
    )
    basis = build_basis(
        dynamic.modes,
        algebraic.modes,
        order_d,
        order_a,
        method="sp-pod",
        reference=snapshots.reference,
        spectra={"dynamic": dynamic.values, "algebraic": algebraic.values},
    )
    if deim is not None:
        basis = basis.with_deim(deim(snapshots))
    logger.info(f"SP-POD basis with r_d={order_d}, r_a={order_a}")
    return basis
