import numpy as np
import pytest
from numpy.testing import assert_allclose

from gridmor.reduction.deim import (
    SelectionError,
    build_deim,
    deim_eval,
    deim_select,
    nonlinearity_modes,
)
from gridmor.reduction.pod import BasisError, sp_pod
from gridmor.reduction.snapshots import collect


def test_greedy_selection_follows_residuals():
    W_f = np.zeros((4, 2))
    W_f[2, 0] = 1.0
    W_f[0, 1], W_f[2, 1] = 1.0, 0.5
    artifacts = deim_select(W_f)
    assert list(artifacts.indices) == [2, 0]
    assert_allclose(artifacts.selector.T @ W_f, artifacts.interpolation)


def test_interpolation_is_exact_in_the_mode_span(rng):
    W_f = np.linalg.qr(rng.standard_normal((10, 3)))[0]
    artifacts = deim_select(W_f)
    assert len(set(artifacts.indices)) == 3
    f = W_f @ rng.standard_normal(3)
    assert_allclose(artifacts.reconstruct(f[artifacts.indices]), f, atol=1e-12)


def test_projector_matches_the_explicit_inverse(rng):
    W_f = np.linalg.qr(rng.standard_normal((8, 3)))[0]
    W_L = rng.standard_normal((2, 8))
    artifacts = deim_select(W_f)
    expected = W_L @ W_f @ np.linalg.inv(W_f[artifacts.indices])
    assert_allclose(artifacts.projector(W_L), expected, atol=1e-12)


def test_dependent_modes_are_rejected():
    W_f = np.array([[1.0, 1.0], [0.5, 0.5], [0.0, 0.0]])
    with pytest.raises(SelectionError) as info:
        deim_select(W_f)
    assert info.value.step == 2
    with pytest.raises(SelectionError):
        deim_select(W_f, p=3)


def test_mode_count_from_energy(rng):
    X_f = rng.standard_normal((12, 2)) @ rng.standard_normal((2, 30))
    W_f, sigma = nonlinearity_modes(X_f, energy=1.0)
    assert W_f.shape == (12, 2)
    with pytest.raises(BasisError):
        nonlinearity_modes(X_f, p=3)
    with pytest.raises(BasisError):
        nonlinearity_modes(np.zeros((3, 3)))


def test_selective_and_full_evaluation_agree(system, trajectory):
    snapshots = collect(trajectory, system)
    basis = sp_pod(system, snapshots, deim=build_deim)
    artifacts = basis.deim
    assert artifacts.p == len(set(artifacts.indices))
    assert artifacts.values[0] >= artifacts.values[-1]
    k = trajectory.n_records - 1
    z = basis.reduce_state(trajectory.X[:, k])
    u, w = trajectory.U[:, k], trajectory.W[:, k]
    selective = deim_eval(artifacts, basis, system.nonlinearity, z, u, w)
    full = deim_eval(artifacts, basis, system.nonlinearity, z, u, w, mode="full")
    assert selective.shape == (basis.r,)
    assert_allclose(selective, full, rtol=1e-12, atol=1e-12)
    with pytest.raises(ValueError):
        deim_eval(artifacts, basis, system.nonlinearity, z, u, w, mode="lazy")


def test_affine_interpolation_is_exact_at_the_reference(system, trajectory, point):
    snapshots = collect(trajectory, system, reference=point.x)
    basis = sp_pod(system, snapshots, deim=build_deim)
    artifacts = basis.deim
    assert_allclose(artifacts.offset, snapshots.f_reference)
    # the modes span deviations from f at the reference
    assert_allclose(artifacts.reconstruct(artifacts.offset[artifacts.indices]), artifacts.offset, atol=1e-12)
    z = np.zeros(basis.r)
    reduced = deim_eval(artifacts, basis, system.nonlinearity, z, point.u, point.w)
    assert_allclose(reduced, basis.W_L @ system.f(point.x, point.u, point.w), atol=1e-10)
    assert_allclose(reduced, artifacts.shift(basis.W_L), atol=1e-10)
