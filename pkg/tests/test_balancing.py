import numpy as np
import pytest
from numpy.testing import assert_allclose

from gridmor.grid.system import linear_system
from gridmor.reduction.balancing import algebraic_transform, balance, sp_bpod
from gridmor.reduction.gramians import CovariancePair
from gridmor.reduction.pod import BasisError
from gridmor.reduction.snapshots import ScalingSet


def spd(rng, n, rank=None):
    M = rng.standard_normal((n, n if rank is None else rank))
    return M @ M.T + (1e-3 * np.eye(n) if rank is None else 0.0)


@pytest.fixture
def descriptor_system():
    return linear_system(-np.eye(5), n_d=3)


def test_full_rank_pair_is_balanced(rng):
    G_c, G_o = spd(rng, 5), spd(rng, 5)
    result = balance(G_c, G_o)
    assert result.ranks == (5, 0, 0, 0)
    expected = np.sqrt(np.sort(np.linalg.eigvals(G_c @ G_o).real)[::-1])
    assert_allclose(result.gamma1, expected, rtol=1e-8)
    controllability, observability = result.residuals(G_c, G_o)
    assert controllability < 1e-8 * np.max(result.gamma1)
    assert observability < 1e-8 * np.max(result.gamma1)
    assert_allclose(result.W_d @ result.transform, np.eye(5), atol=1e-10)


def test_rank_deficient_controllability(rng):
    G_c, G_o = spd(rng, 5, rank=3), spd(rng, 5)
    result = balance(G_c, G_o)
    assert result.ranks == (3, 0, 2, 0)
    assert len(result.gamma3) == 2
    controllability, observability = result.residuals(G_c, G_o)
    scale = max(np.max(result.gamma1), np.max(result.gamma3))
    assert controllability < 1e-7 * scale
    assert observability < 1e-7 * scale


def test_rank_deficient_observability(rng):
    G_c, G_o = spd(rng, 4), spd(rng, 4, rank=2)
    result = balance(G_c, G_o)
    assert result.ranks == (2, 2, 0, 0)
    assert_allclose(result.hsv[2:], 1.0)
    controllability, observability = result.residuals(G_c, G_o)
    assert max(controllability, observability) < 1e-7 * np.max(result.gamma1)


def test_summary_records_categories(rng):
    G_c, G_o = spd(rng, 3), spd(rng, 3)
    summary = balance(G_c, G_o).summary(G_c, G_o)
    assert summary["categories"] == {"n1": 3, "n2": 0, "n3": 0, "n4": 0}
    assert len(summary["gamma1"]) == 3
    assert set(summary["residuals"]) == {"controllability", "observability"}


def test_algebraic_transform_factorizes(rng):
    G = spd(rng, 4)
    transform = algebraic_transform(G)
    assert_allclose(transform.W_a.T @ transform.W_a, np.eye(4), atol=1e-12)
    assert_allclose(transform.W_gc @ np.diag(transform.sigma) @ transform.Lambda_gc, G, atol=1e-10)
    assert np.all(np.diff(transform.sigma) <= 0)
    assert algebraic_transform(np.zeros((0, 0))).W_a.shape == (0, 0)


def test_sp_bpod_keeps_the_block_structure(rng, descriptor_system):
    pair = CovariancePair(G_c=spd(rng, 5), G_o11=spd(rng, 3), n_d=3)
    basis, summary = sp_bpod(descriptor_system, pair, r_d=2, r_a=1)
    assert (basis.r_d, basis.r_a) == (2, 1)
    assert basis.method == "sp-bpod"
    assert_allclose(basis.descriptor(), np.diag([1.0, 1.0, 0.0]), atol=1e-12)
    assert len(basis.spectra["dynamic"]) == summary["categories"]["n1"]
    assert_allclose(basis.spectra["dynamic"], summary["gamma1"])


def test_sp_bpod_in_raw_coordinates(rng, descriptor_system):
    pair = CovariancePair(G_c=spd(rng, 5), G_o11=spd(rng, 3), n_d=3)
    scaling = ScalingSet(s_x=np.array([2.0, 0.5, 1.0, 3.0, 0.25]), s_u=np.ones(0), s_w=np.ones(0))
    reference = rng.standard_normal(5)
    basis, _ = sp_bpod(descriptor_system, pair, r_d=2, r_a=2, scaling=scaling, reference=reference)
    assert_allclose(basis.W_L @ basis.W_R, np.eye(4), atol=1e-10)
    assert_allclose(basis.reduce_state(reference), 0.0, atol=1e-12)


def test_controllability_only_ordering(rng, descriptor_system):
    pair = CovariancePair(G_c=spd(rng, 5), G_o11=np.zeros((3, 3)), n_d=3)
    basis, summary = sp_bpod(descriptor_system, pair, energy_d=0.9, observability="none")
    assert summary["categories"] is None
    assert basis.W_d.shape == (3, 3)
    assert np.all(np.diff(basis.spectra["dynamic"]) <= 0)


def test_unobservable_pair_has_no_balanced_states(rng, descriptor_system):
    pair = CovariancePair(G_c=spd(rng, 5), G_o11=np.zeros((3, 3)), n_d=3)
    with pytest.raises(BasisError):
        sp_bpod(descriptor_system, pair)


def test_balancing_holds_over_random_pairs(rng):
    for _ in range(100):
        n = int(rng.integers(2, 8))
        G_c, G_o = spd(rng, n), spd(rng, n)
        result = balance(G_c, G_o)
        assert result.ranks == (n, 0, 0, 0)
        expected = np.sqrt(np.sort(np.linalg.eigvals(G_c @ G_o).real)[::-1])
        assert_allclose(result.gamma1, expected, rtol=1e-6)
        controllability, observability = result.residuals(G_c, G_o)
        assert max(controllability, observability) < 1e-6 * np.max(result.gamma1)
        assert_allclose(result.W_d @ result.transform, np.eye(n), atol=1e-8)
