import numpy as np
import pytest
from numpy.testing import assert_allclose

from gridmor.reduction.snapshots import (
    ScalingError,
    SnapshotSet,
    collect,
    merge,
    scale_system,
    scaling_diagonal,
)


def test_collect_splits_blocks(system, trajectory):
    snapshots = collect(trajectory, system)
    assert snapshots.X_d.shape == (system.n_d, trajectory.n_records)
    assert snapshots.X_a.shape == (system.n_a, trajectory.n_records)
    assert_allclose(snapshots.X, trajectory.X)
    assert snapshots.scenario == "load-step"
    k = trajectory.n_records // 2
    expected = system.f(trajectory.X[:, k], trajectory.U[:, k], trajectory.W[:, k])
    assert_allclose(snapshots.X_f[:, k], expected)


def test_deviations_from_reference(system, trajectory, point):
    snapshots = collect(trajectory, system, reference=point.x)
    X_d, X_a = snapshots.deviations()
    assert_allclose(X_d[:, 0], 0.0, atol=1e-9)
    assert_allclose(X_a[:, 0], 0.0, atol=1e-9)
    assert_allclose(snapshots.f_reference, system.f(point.x, point.u, point.w), atol=1e-12)
    raw_d, _ = snapshots.with_reference(None).deviations()
    assert_allclose(raw_d, trajectory.X[: system.n_d])
    assert snapshots.with_reference(None).f_reference is None
    assert collect(trajectory, system).f_reference is None


def test_merge_concatenates_columns(system, trajectory):
    snapshots = collect(trajectory, system)
    merged = merge([snapshots, snapshots])
    assert merged.n_columns == 2 * snapshots.n_columns
    assert merged.f_reference is snapshots.f_reference
    assert merged.scenario == "load-step+load-step"


def test_mismatched_columns_are_rejected():
    with pytest.raises(ValueError):
        SnapshotSet(
            X_d=np.zeros((2, 3)), X_a=np.zeros((1, 4)), X_f=np.zeros((3, 3)),
            t=np.zeros(3), U=np.zeros((0, 3)), W=np.zeros((0, 3)),
        )


def test_scaling_diagonal_fallback():
    assert_allclose(scaling_diagonal([2.0, 0.0, -0.5]), [2.0, 1.0, -0.5])
    with pytest.raises(ScalingError):
        scaling_diagonal([2.0, 0.0], fallback=False)


def test_scaled_equilibrium_is_ones(system, point):
    scaled, scaling = scale_system(system, point.x, point.u, point.w)
    x_s, u_s, w_s = scaling.scale(point.x, point.u, point.w)
    nonzero = np.abs(point.x) >= 1e-6
    assert_allclose(x_s[nonzero], 1.0)
    assert_allclose(scaled.rhs(x_s, u_s, w_s) * scaling.s_x, system.rhs(point.x, point.u, point.w), atol=1e-10)
    assert_allclose(scaling.unscale(x_s), point.x)


def test_scaled_system_follows_topology_changes(system, point):
    scaled, scaling = scale_system(system, point.x, point.u, point.w)
    Y = system.Y.copy()
    Y[3, 3] += 5.0j
    raw = system.with_admittance(Y)
    changed = scaled.with_admittance(Y)
    x_s, u_s, w_s = scaling.scale(point.x, point.u, point.w)
    assert_allclose(changed.rhs(x_s, u_s, w_s) * scaling.s_x, raw.rhs(point.x, point.u, point.w), atol=1e-10)
    assert_allclose(changed.C, scaled.C)
