import numpy as np
import pytest

from balclust.core import Instance
from balclust.errors import NotStableError, SuggestLargerTauError
from balclust.instances import brute_force_opt
from balclust.core import Constraints
from balclust.stability import (ThresholdClustering, bbg_cluster, capacity_repair, kcenter_stable,
                                kmedian_cost, size_violation, tau_sweep)


def cliques(sizes, intra=1.0, inter=10.0):
    lab = np.repeat(np.arange(len(sizes)), sizes)
    d = np.where(lab[:, None] == lab[None, :], intra, inter)
    np.fill_diagonal(d, 0.0)
    return Instance.from_distances(d, labels=lab)


def partition(clusters):
    return sorted(tuple(sorted(c)) for c in clusters)


def test_bbg_recovers_cliques():
    inst = cliques([4, 4, 4])
    cl = bbg_cluster(inst, 3, 1.0)
    assert partition(cl.clusters) == [(0, 1, 2, 3), (4, 5, 6, 7), (8, 9, 10, 11)]


def test_bbg_k1():
    cl = bbg_cluster(cliques([3, 3]), 1, 1.0)
    assert cl.attached == [3, 4, 5]
    assert partition(cl.clusters) == [tuple(range(6))]


def test_bbg_suggests_larger_tau():
    inst = Instance.from_points(np.zeros((2, 1)))
    with pytest.raises(SuggestLargerTauError):
        bbg_cluster(inst, 3, 0.0)


def test_repair_identity():
    d = cliques([5, 5]).distances
    cl = ThresholdClustering(1.0, [list(range(5)), list(range(5, 10))])
    out = capacity_repair(cl, 0.3, 0.7, d)
    assert out.moves == 0 and partition(out.clusters) == partition(cl.clusters)


def test_repair_one_move():
    d = Instance.from_points(np.arange(10, dtype=float)[:, None]).distances
    cl = ThresholdClustering(1.0, [list(range(8)), [8, 9]])
    out = capacity_repair(cl, 0.3, 1.0, d)
    assert out.moves == 1
    assert sorted(len(c) for c in out.clusters) == [3, 7]
    assert 7 in out.clusters[1]


def test_repair_from_single_cluster():
    d = Instance.from_points(np.arange(10, dtype=float)[:, None]).distances
    cl = ThresholdClustering(1.0, [list(range(10)), [], []])
    out = capacity_repair(cl, 0.2, 0.5, d)
    sizes = [len(c) for c in out.clusters]
    assert size_violation(sizes, 10, 0.2, 0.5) == 0
    assert out.moves == 5


def test_tau_sweep_stable_instance_matches_oracle():
    inst = cliques([3, 3, 3])
    cl = tau_sweep(inst, 3, 0.2, 0.5)
    opt, _ = brute_force_opt(inst, Constraints(k=3, ell=0.2, cap_L=0.5), "kmedian")
    assert kmedian_cost(inst.distances, cl.clusters) == pytest.approx(opt)


def test_tau_sweep_zero_when_n_equals_k():
    inst = Instance.from_points(np.random.default_rng(0).random((4, 2)))
    cl = tau_sweep(inst, 4, 0.0, 1.0)
    assert kmedian_cost(inst.distances, cl.clusters) == 0.0


def test_tau_sweep_threads_agree():
    inst = Instance.from_points(np.random.default_rng(1).random((12, 2)))
    a = tau_sweep(inst, 3, 0.2, 0.5)
    b = tau_sweep(inst, 3, 0.2, 0.5, threads=3)
    assert partition(a.clusters) == partition(b.clusters)


def test_kcenter_stable_cliques():
    inst = cliques([4, 4])
    cl, r = kcenter_stable(inst, 2, 0.25, 0.75)
    assert r == 1.0
    assert partition(cl.clusters) == [(0, 1, 2, 3), (4, 5, 6, 7)]


def test_kcenter_stable_chain_not_stable():
    inst = Instance.from_points(np.arange(6, dtype=float)[:, None])
    with pytest.raises(NotStableError):
        kcenter_stable(inst, 2, 0.4, 0.6)
