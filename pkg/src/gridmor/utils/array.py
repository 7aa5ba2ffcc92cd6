import numpy as np
import scipy.linalg


def fix_signs(W, tol=1e-14):
    """Flips columns so that the first nonzero entry of each one is positive."""
    W = np.array(W, dtype=float, copy=True)
    for j in range(W.shape[1]):
        column = W[:, j]
        scale = np.max(np.abs(column)) if column.size else 0.0
        if scale == 0.0:
            continue
        first = np.flatnonzero(np.abs(column) > tol * scale)[0]
        if column[first] < 0:
            W[:, j] = -column
    return W


def descending_eigh(matrix):
    """Symmetric eigendecomposition sorted by decreasing eigenvalue (ties keep index order)."""
    if matrix.size == 0:
        return np.zeros(0), np.zeros(matrix.shape)
    values, vectors = scipy.linalg.eigh((matrix + matrix.T) / 2)
    order = np.argsort(-values, kind="stable")
    return values[order], vectors[:, order]


def symmetrize(matrix):
    return (matrix + matrix.T) / 2
