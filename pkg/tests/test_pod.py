import numpy as np
import pytest
from numpy.testing import assert_allclose

from gridmor.reduction.pod import (
    BasisError,
    StructureViolation,
    build_basis,
    pod_modes,
    select_order,
    sp_pod,
)
from gridmor.reduction.snapshots import collect


@pytest.fixture
def low_rank(rng):
    return rng.standard_normal((6, 3)) @ rng.standard_normal((3, 20))


def test_modes_are_orthonormal(low_rank):
    spectrum = pod_modes(low_rank)
    assert spectrum.modes.shape == (6, 6)
    assert_allclose(spectrum.modes.T @ spectrum.modes, np.eye(6), atol=1e-12)
    assert spectrum.rank == 3
    assert np.all(np.diff(spectrum.values) <= 1e-12)


def test_method_of_snapshots_agrees_with_svd(low_rank):
    direct = pod_modes(low_rank, "direct-svd")
    gram = pod_modes(low_rank, "snapshot-ed")
    assert_allclose(gram.values[:3], direct.values[:3], rtol=1e-8)
    assert_allclose(gram.modes[:, :3], direct.modes[:, :3], atol=1e-8)
    assert_allclose(gram.modes.T @ gram.modes, np.eye(6), atol=1e-10)


def test_zero_block_has_no_modes():
    with pytest.raises(BasisError):
        pod_modes(np.zeros((3, 4)))
    with pytest.raises(BasisError):
        pod_modes(np.ones((3, 4)), mode="qr")


def test_select_order():
    assert select_order([4.0, 3.0, 2.0, 1.0], 0.7) == 2
    assert select_order([4.0, 3.0, 2.0, 1.0], 1.0) == 4
    assert select_order([1.0, 0.0, 0.0], 0.5) == 1
    for bad in (0.0, 1.5):
        with pytest.raises(BasisError):
            select_order([1.0], bad)
    with pytest.raises(BasisError):
        select_order([], 0.9)


def test_orthonormal_basis_structure(rng):
    W_d = np.linalg.qr(rng.standard_normal((4, 4)))[0]
    W_a = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    basis = build_basis(W_d, W_a, 2, 1)
    assert basis.W_R.shape == (7, 3)
    assert_allclose(basis.W_L, basis.W_R.T)
    assert_allclose(basis.descriptor(), np.diag([1.0, 1.0, 0.0]))


def test_non_orthonormal_basis_uses_inverse(rng):
    W_d = rng.standard_normal((4, 4)) + 4 * np.eye(4)
    W_a = np.eye(2)
    basis = build_basis(W_d, W_a, 3, 2, method="sp-bpod")
    assert_allclose(basis.W_L @ basis.W_R, np.eye(5), atol=1e-12)
    assert_allclose(basis.W_L[:3, :4], np.linalg.inv(W_d)[:3], atol=1e-12)


def test_bad_orders():
    with pytest.raises(BasisError):
        build_basis(np.eye(2), np.eye(2), 0, 0)
    with pytest.raises(BasisError):
        build_basis(np.eye(2), np.eye(2), 3, 1)
    with pytest.raises(BasisError):
        build_basis(np.eye(2), np.eye(2), 1, 1, method="balanced")


def test_mixed_basis_is_a_structure_violation():
    basis = build_basis(np.eye(2), np.eye(2), 1, 1)
    W_R = basis.W_R.copy()
    W_R[3, 0] = 0.5
    mixed = type(basis)(basis.W_d, basis.W_a, 1, 1, W_R, basis.W_L)
    with pytest.raises(StructureViolation):
        mixed.check_structure()


def test_affine_state_maps(rng):
    reference = rng.standard_normal(4)
    basis = build_basis(np.eye(2), np.eye(2), 2, 2, reference=reference)
    x = rng.standard_normal((4, 5))
    assert_allclose(basis.recover_state(basis.reduce_state(x)), x)
    assert_allclose(basis.reduce_state(reference), 0.0)


def test_unscaled_basis_keeps_the_identity(rng):
    basis = build_basis(np.linalg.qr(rng.standard_normal((3, 3)))[0], np.eye(2), 2, 1)
    s_x = np.array([2.0, 0.5, 3.0, 1.5, 4.0])
    raw = basis.unscaled(s_x)
    assert_allclose(raw.W_L @ raw.W_R, np.eye(3), atol=1e-12)
    assert_allclose(raw.W_d, basis.W_d)


def test_sp_pod_on_nine_bus(system, trajectory):
    snapshots = collect(trajectory, system)
    basis = sp_pod(system, snapshots, energy_d=0.99, energy_a=0.97)
    assert 1 <= basis.r_d < system.n_d
    assert 1 <= basis.r_a <= system.n_a
    assert set(basis.spectra) == {"dynamic", "algebraic"}
    basis.check_structure()


def test_sp_pod_full_order_reproduces_snapshots(system, trajectory, point):
    snapshots = collect(trajectory, system, reference=point.x)
    basis = sp_pod(system, snapshots, r_d=system.n_d, r_a=system.n_a)
    assert_allclose(basis.recover_state(basis.reduce_state(trajectory.X)), trajectory.X, atol=1e-10)


def test_sp_pod_rejects_foreign_snapshots(linear_dae, system, trajectory):
    with pytest.raises(BasisError):
        sp_pod(linear_dae, collect(trajectory, system))


def test_truncated_modes_minimize_the_projection_error(rng):
    # snapshots with a decaying spectrum
    U = np.linalg.qr(rng.standard_normal((8, 8)))[0]
    V = np.linalg.qr(rng.standard_normal((30, 8)))[0]
    X = U @ np.diag(2.0 ** -np.arange(8)) @ V.T
    spectrum = pod_modes(X)
    for r in (1, 3, 5):
        W = spectrum.modes[:, :r]
        error = np.linalg.norm(X - W @ W.T @ X) ** 2
        assert error == pytest.approx(np.sum(spectrum.values[r:] ** 2), rel=1e-10)
        for _ in range(100):
            Q = np.linalg.qr(rng.standard_normal((8, r)))[0]
            assert np.linalg.norm(X - Q @ Q.T @ X) ** 2 >= error * (1 - 1e-12)
