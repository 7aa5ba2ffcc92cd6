"""Balancing of the dynamic covariances and ordering of the algebraic ones.

The dynamic coordinates are split into four categories: controllable and
observable (balanced, weights Gamma_1), controllable only, observable only
(weights Gamma_3) and neither. Transformations act as x_new = T x, so
covariances change as T G_c T' and T^-T G_o T^-1.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np
import scipy.linalg

from gridmor.reduction.gramians import partition
from gridmor.reduction.pod import BasisError, StructureViolation, build_basis, choose_order
from gridmor.utils.array import descending_eigh, fix_signs

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BalanceResult:
    T1: np.ndarray
    T2: np.ndarray
    T3: np.ndarray
    T4: np.ndarray
    gamma1: np.ndarray
    gamma3: np.ndarray
    ranks: Tuple[int, int, int, int]
    L1: np.ndarray
    L2: np.ndarray
    blocks: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def transform(self):
        """The balancing map, x_balanced = transform @ x."""
        return self.T4 @ self.T3 @ self.T2 @ self.T1

    @property
    def W_d(self):
        """Columns spanning the balanced coordinates, x = W_d x_balanced."""
        return scipy.linalg.inv(self.transform)

    @property
    def n1(self):
        return self.ranks[0]

    @property
    def hsv(self):
        """Ordering weights along the balanced coordinates."""
        n1, n2, n3, n4 = self.ranks
        return np.r_[self.gamma1, np.ones(n2), np.zeros(n3 + n4)]

    def controllability_form(self, G_c11):
        T = self.transform
        return T @ G_c11 @ T.T

    def observability_form(self, G_o11):
        T_inv = self.W_d
        return T_inv.T @ G_o11 @ T_inv

    def targets(self):
        n1, n2, n3, n4 = self.ranks
        controllability = np.diag(np.r_[self.gamma1, np.ones(n2), np.zeros(n3 + n4)])
        observability = np.diag(np.r_[self.gamma1, np.zeros(n2), self.gamma3, np.zeros(n4)])
        return controllability, observability

    def residuals(self, G_c11, G_o11):
        """Largest entrywise deviation of both balanced forms from their patterns."""
        controllability, observability = self.targets()
        return (
            float(np.max(np.abs(self.controllability_form(G_c11) - controllability), initial=0.0)),
            float(np.max(np.abs(self.observability_form(G_o11) - observability), initial=0.0)),
        )

    def summary(self, G_c11=None, G_o11=None):
        record = {
            "categories": dict(zip(("n1", "n2", "n3", "n4"), map(int, self.ranks))),
            "gamma1": self.gamma1.tolist(),
            "gamma3": self.gamma3.tolist(),
        }
        if G_c11 is not None and G_o11 is not None:
            record["residuals"] = dict(
                zip(("controllability", "observability"), self.residuals(G_c11, G_o11))
            )
        return record


def _split(values, rank_tol, label):
    """Count of eigenvalues above rank_tol times the largest one."""
    if not len(values) or values[0] <= 0:
        return 0
    threshold = rank_tol * values[0]
    rank = int(np.sum(values >= threshold))
    band = np.abs(values - threshold) < 0.1 * threshold
    if band.any():
        logger.warning(
            f"{label}: {int(band.sum())} eigenvalues within the rank tolerance band, "
            f"counted as {'nonzero' if values[band][0] >= threshold else 'zero'}"
        )
    return rank


def balance(G_c11, G_o11, rank_tol=1e-8):
    """Four-step balancing of a possibly rank-deficient covariance pair."""
    G_c11 = np.asarray(G_c11, dtype=float)
    G_o11 = np.asarray(G_o11, dtype=float)
    n = G_c11.shape[0]

    # 1. controllable subspace normalized to the identity
    lam, U = descending_eigh(G_c11)
    n_c = _split(lam, rank_tol, "controllability covariance")
    scale = np.ones(n)
    scale[:n_c] = lam[:n_c] ** -0.5
    T1 = scale[:, None] * U.T
    T1_inv = U * (1.0 / scale)[None, :]

    G_tilde = T1_inv.T @ G_o11 @ T1_inv
    G_tilde = (G_tilde + G_tilde.T) / 2
    G1, G2 = G_tilde[:n_c, :n_c], G_tilde[:n_c, n_c:]
    G3, G4 = G_tilde[n_c:, :n_c], G_tilde[n_c:, n_c:]

    # 2. observable part of the controllable block
    mu, V1 = descending_eigh(G1)
    n1 = _split(mu, rank_tol, "controllable observability block") if n_c else 0
    L1 = V1.T
    gamma1 = np.sqrt(mu[:n1])
    T2 = scipy.linalg.block_diag(L1, np.eye(n - n_c))

    G_hat = T2 @ G_tilde @ T2.T
    a, c = slice(0, n1), slice(n_c, n)
    G_hat2 = G_hat[a, c]
    G_hat4 = G_hat[c, c]

    # 3. decouple the uncontrollable block from the balanced one
    M = np.eye(n)
    M[c, a] = -G_hat2.T / gamma1[None, :] ** 2
    T3 = scipy.linalg.inv(M).T

    # 4. order the uncontrollable observable part
    schur = G_hat4 - (G_hat2.T / gamma1[None, :] ** 2) @ G_hat2
    nu, V2 = descending_eigh(schur)
    n3 = _split(nu, rank_tol, "uncontrollable observability block") if n - n_c else 0
    L2 = V2.T
    gamma3 = nu[:n3]
    T4 = scipy.linalg.block_diag(np.diag(np.sqrt(gamma1)), np.eye(n_c - n1), L2)

    ranks = (n1, n_c - n1, n3, n - n_c - n3)
    logger.info(f"balanced categories (n1, n2, n3, n4) = {ranks}")
    return BalanceResult(
        T1=T1, T2=T2, T3=T3, T4=T4,
        gamma1=gamma1, gamma3=gamma3, ranks=ranks, L1=L1, L2=L2,
        blocks={
            "G_tilde_1": G1, "G_tilde_2": G2, "G_tilde_3": G3, "G_tilde_4": G4,
            "G_hat_2": G_hat2, "G_hat_4": G_hat4,
        },
    )


@dataclass(frozen=True, eq=False)
class AlgebraicTransform:
    W_gc: np.ndarray
    sigma: np.ndarray
    Lambda_gc: np.ndarray

    @property
    def W_a(self):
        return self.W_gc


def algebraic_transform(G_c22):
    """Left singular vectors of G_c22, most dominant first."""
    G_c22 = np.asarray(G_c22, dtype=float)
    if G_c22.size == 0:
        return AlgebraicTransform(np.zeros((0, 0)), np.zeros(0), np.zeros((0, 0)))
    W, sigma, Vt = scipy.linalg.svd(G_c22, lapack_driver="gesvd")
    flipped = fix_signs(W)
    signs = np.sign(np.sum(flipped * W, axis=0))
    return AlgebraicTransform(W_gc=flipped, sigma=sigma, Lambda_gc=signs[:, None] * Vt)


def sp_bpod(
    system, pair, energy_d=0.99, energy_a=0.97, r_d=None, r_a=None, rank_tol=1e-8,
    observability="full", scaling=None, reference=None, deim=None, snapshots=None,
):
    """Structure-preserving balanced POD basis from a covariance pair.

    The covariances live in scaled coordinates; with `scaling` the basis is
    returned in raw coordinates. `reference` is the raw offset of the basis.
    """
    n_d = system.n_d
    G_c11, _, _, G_c22 = partition(pair.G_c, n_d)
    algebraic = algebraic_transform(G_c22)

    if observability == "none":
        values, vectors = descending_eigh(G_c11)
        W_d = fix_signs(vectors)
        spectrum = np.clip(values, 0.0, None)
        summary = {"categories": None, "eigenvalues": spectrum.tolist()}
        order_d = choose_order(spectrum, energy_d, r_d, n_d, "controllability-only dynamic")
    else:
        result = balance(G_c11, pair.G_o11, rank_tol=rank_tol)
        W_d = result.W_d
        spectrum = result.gamma1
        summary = result.summary(G_c11, pair.G_o11)
        if result.n1 == 0 and r_d is None:
            raise BasisError("no state is both controllable and observable")
        if r_d is None:
            order_d = choose_order(result.gamma1, energy_d, None, result.n1, "balanced dynamic")
        else:
            order_d = int(r_d)
        if order_d > result.n1:
            logger.warning(
                f"r_d={order_d} reaches past the {result.n1} balanced states into "
                "controllable-only or unobservable coordinates"
            )

    order_a = choose_order(algebraic.sigma, energy_a, r_a, system.n_a, "algebraic") if system.n_a else 0
    basis = build_basis(
        W_d,
        algebraic.W_a,
        order_d,
        order_a,
        method="sp-bpod",
        spectra={"dynamic": spectrum, "algebraic": algebraic.sigma},
        tol=1e-8,
    )
    if scaling is not None:
        basis = basis.unscaled(scaling.s_x, reference=reference)
    elif reference is not None:
        basis = basis.unscaled(np.ones(system.n), reference=reference)
    try:
        basis.check_structure(tol=1e-8)
    except StructureViolation:
        logger.error("SP-BPOD basis lost the block structure after unscaling")
        raise
    if deim is not None and snapshots is not None:
        basis = basis.with_deim(deim(snapshots))
    logger.info(f"SP-BPOD basis with r_d={order_d}, r_a={order_a}")
    return basis, summary
