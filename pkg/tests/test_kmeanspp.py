import numpy as np
import pytest

from balclust.core import Constraints
from balclust.instances import gen_groups
from balclust.kmeanspp import (SeedingConfig, balance_heuristic, dsquared_seed, greedy_prune,
                               kmeans_cost, kmeanspp_balanced, lloyd)
from balclust.errors import BalclustError


def blobs(rng, n_each=50, sigma=0.1):
    a = rng.normal(0.0, sigma, (n_each, 2))
    b = rng.normal(0.0, sigma, (n_each, 2)) + [10.0, 0.0]
    return np.vstack([a, b]), np.repeat([0, 1], n_each)


def test_config_validation():
    with pytest.raises(BalclustError):
        SeedingConfig(k=3, oversample=2)
    assert SeedingConfig(k=4).n_seeds >= 4


def test_dsquared_seeds_distinct(rng):
    X = rng.random((30, 2))
    seeds = dsquared_seed(X, 10, rng)
    assert len(set(seeds)) == 10


def test_prune_identity_when_k_centers(rng):
    X = rng.random((20, 2))
    assert greedy_prune(X, [1, 5, 7], 3) == [1, 5, 7]


def test_prune_drops_redundant_seed(rng):
    X, _ = blobs(rng)
    # two seeds inside blob 0, one in blob 1
    kept = greedy_prune(X, [0, 1, 60], 2)
    assert 60 in kept and len(kept) == 2
    cost = kmeans_cost(X, X[kept])
    assert cost <= min(kmeans_cost(X, X[[0, 60]]), kmeans_cost(X, X[[1, 60]])) + 1e-9


def test_prune_identical_seeds():
    X = np.zeros((5, 2))
    kept = greedy_prune(X, [0, 1, 2], 2)
    assert len(kept) == 2 and kmeans_cost(X, X[kept]) == 0.0


def test_lloyd_fixed_point_and_zero_iters(rng):
    X, lab = blobs(rng)
    means = np.array([X[lab == 0].mean(axis=0), X[lab == 1].mean(axis=0)])
    assert np.allclose(lloyd(X, means, 5), means)
    start = means + 0.5
    assert np.array_equal(lloyd(X, start, 0), start)
    assert kmeans_cost(X, lloyd(X, start, 1)) < kmeans_cost(X, start)


def test_balance_identity_when_balanced(rng):
    X = rng.random((10, 2))
    lab = np.repeat([0, 1], 5)
    out, _ = balance_heuristic(X, lab, 0.2, 0.6, rng)
    assert np.array_equal(out, lab)


def test_balance_merge_then_split(rng):
    X = rng.random((10, 2))
    lab = np.array([0] + [1] * 9)
    out, _ = balance_heuristic(X, lab, 0.2, 0.6, rng)
    sizes = np.bincount(out)
    assert sizes.min() >= 2 and sizes.max() <= 6


def test_balance_splits_single_cluster(rng):
    X = rng.random((40, 2))
    out, _ = balance_heuristic(X, np.zeros(40, dtype=int), 1 / 8, 2 / 4, rng)
    sizes = np.bincount(out)
    assert len(sizes) >= 2 and sizes.max() <= 20


def test_singletons_when_n_equals_k(rng):
    X = rng.random((4, 2))
    a, rep = kmeanspp_balanced(X, Constraints(k=4, ell=0.25, cap_L=0.25), rng=rng)
    assert sorted(np.bincount(a.labels())) == [1, 1, 1, 1]
    assert rep.feasible


def test_separated_blobs_pure(rng):
    pure = 0
    for s in range(20):
        X, lab = blobs(np.random.default_rng(s))
        a, rep = kmeanspp_balanced(X, Constraints(k=2, ell=0.25, cap_L=0.75), rng=np.random.default_rng(s))
        assert rep.feasible
        got = a.labels()
        purity = max(np.mean(got == lab), np.mean(got != lab))
        pure += purity >= 0.95
    assert pure >= 19


def test_groups_cost_zero_mostly():
    inst = gen_groups(3, 3)
    X = np.eye(3)[inst.labels] * 10.0
    zero = 0
    for s in range(20):
        a, _ = kmeanspp_balanced(X, Constraints(k=3), rng=np.random.default_rng(s))
        zero += kmeans_cost(X, a.center_coords) < 1e-9
    assert zero >= 18


def test_weighted_loads(rng):
    heavy = rng.normal(0, 0.1, (20, 2))
    light = rng.normal(0, 0.1, (20, 2)) + 10
    X = np.vstack([heavy, light])
    w = np.concatenate([np.full(20, 0.8 / 20), np.full(20, 0.2 / 20)])
    a, rep = kmeanspp_balanced(X, Constraints(k=2, ell=0.3, cap_L=0.7), rng=rng, weights=w)
    loads = np.array(rep.loads)
    assert np.all(loads >= 0.3 - 0.05) and np.all(loads <= 0.7 + 0.05)


def test_rejects_replication():
    with pytest.raises(BalclustError):
        kmeanspp_balanced(np.zeros((4, 2)), Constraints(k=2, p=2))
