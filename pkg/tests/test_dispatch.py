import numpy as np
import pytest

from balclust.core import Constraints, nearest_index
from balclust.dispatch import (Dispatcher, build_rptree, dispatch, estimate_alpha, estimate_weights,
                               fit_dispatcher, load_dispatcher, nn_query, nn_query_many,
                               second_sample_size)
from balclust.errors import BalclustError


def test_weights_self_sample(rng):
    S = rng.random((6, 2))
    assert estimate_weights(S, S).w_hat == pytest.approx(np.full(6, 1 / 6))


def test_weights_hand_example():
    est = estimate_weights(np.array([[0.0], [10.0]]), np.array([[1.0], [2.0], [9.0]]))
    assert est.w_hat == pytest.approx([2 / 3, 1 / 3])
    assert list(est.counts) == [2, 1]


def test_weights_singleton_and_empty():
    assert estimate_weights([[1.0, 2.0]], [[0.0, 0.0], [5.0, 5.0]]).w_hat == pytest.approx([1.0])
    with pytest.raises(BalclustError):
        estimate_weights([[1.0]], np.zeros((0, 1)))


def test_second_sample_size():
    assert second_sample_size(50, 0.1, 0.05) == int(np.ceil(2 * (50 + np.log(20)) / 0.01))


def test_alpha_examples():
    assert estimate_alpha([[0.0], [1.0]], [[0.4]], 1) == pytest.approx(0.4)
    assert estimate_alpha([[0.0], [1.0]], [[0.4]], 2) == pytest.approx(0.16)
    S = np.random.default_rng(0).random((5, 2))
    assert estimate_alpha(S, S[:3]) == 0.0


def test_alpha_shrinks_with_larger_sample():
    small, large = [], []
    for s in range(15):
        r = np.random.default_rng(s)
        H = r.random((200, 2))
        small.append(estimate_alpha(r.random((20, 2)), H))
        large.append(estimate_alpha(r.random((200, 2)), H))
    assert np.median(large) <= np.median(small)


def test_rptree_structure(rng):
    X = rng.standard_normal((500, 3))
    tree = build_rptree(X, 16, rng)
    leaves = np.flatnonzero(tree.left < 0)
    owned = np.concatenate([tree.perm[tree.start[v]:tree.stop[v]] for v in leaves])
    assert sorted(owned.tolist()) == list(range(500))
    assert all(tree.stop[v] - tree.start[v] <= 16 for v in leaves)
    assert tree.depth() <= int(np.ceil(np.log2(500 / 16))) + 1


def test_rptree_single_leaf_is_exact(rng):
    X = rng.random((40, 2))
    tree = build_rptree(X, 40, rng)
    Q = rng.random((30, 2))
    assert np.array_equal(nn_query_many(tree, Q), nearest_index(Q, X))
    two = build_rptree(X[:2], 32, rng)
    for q in Q[:5]:
        assert nn_query(two, q) == int(nearest_index(q[None], X[:2])[0])


def test_rptree_self_query(rng):
    X = rng.standard_normal((1000, 10))
    tree = build_rptree(X, 32, rng)
    assert np.array_equal(nn_query_many(tree, X), np.arange(1000))


def test_rptree_recall_10d(rng):
    X = rng.standard_normal((1000, 10))
    tree = build_rptree(X, 32, rng)
    Q = rng.standard_normal((1000, 10))
    recall = np.mean(nn_query_many(tree, Q) == nearest_index(Q, X))
    assert recall >= 0.8


def test_fit_and_route(rng):
    S = rng.standard_normal((200, 2))
    Sp = rng.standard_normal((2000, 2))
    d = fit_dispatcher(S, Sp, Constraints(k=4, p=1, ell=0.1, cap_L=0.4), rng=rng)
    assert d.backend == "exact" and d.p == 1
    assert dispatch(d, S[7]) == tuple(d.g_S[7])
    loads = np.bincount(d.g_S[:, 0], weights=d.w_hat, minlength=d.n_clusters)
    assert np.all(loads >= 0.1 - 1e-9) and np.all(loads <= 0.4 + 1e-9)
    Q = rng.standard_normal((50, 2))
    assert np.array_equal(d.route(Q), d.route(Q))


def test_midpoint_routes_to_nearer():
    S = np.array([[0.0], [10.0]])
    d = Dispatcher(S, np.array([[0], [1]]), Constraints(k=2), "kmeanspp", "exact", 2, np.array([0.5, 0.5]))
    assert dispatch(d, [4.9]) == (0,)
    assert dispatch(d, [5.1]) == (1,)


def test_identity_when_sample_equals_k(rng):
    S = rng.random((4, 2))
    d = fit_dispatcher(S, S, Constraints(k=4, ell=0.25, cap_L=0.25), rng=rng)
    assert sorted(d.g_S[:, 0].tolist()) == [0, 1, 2, 3]


def test_two_blob_weighted_loads(rng):
    S = np.vstack([rng.normal(0, 0.1, (30, 2)), rng.normal(0, 0.1, (30, 2)) + 10])
    Sp = np.vstack([rng.normal(0, 0.1, (800, 2)), rng.normal(0, 0.1, (200, 2)) + 10])
    d = fit_dispatcher(S, Sp, Constraints(k=2, ell=0.3, cap_L=0.7), rng=rng)
    loads = np.bincount(d.g_S[:, 0], weights=d.w_hat, minlength=d.n_clusters)
    assert np.all(loads >= 0.3 - 0.1) and np.all(loads <= 0.7 + 0.1)


def test_lp_round_dispatcher(rng):
    S = rng.random((12, 2))
    Sp = rng.random((300, 2))
    d = fit_dispatcher(S, Sp, Constraints(k=3, p=2, ell=0.1, cap_L=0.8), "lp-round", rng)
    assert d.p == 2
    out = dispatch(d, rng.random(2))
    assert len(out) == 2


def test_backend_agreement_2d(rng):
    S = rng.standard_normal((1000, 2))
    d = fit_dispatcher(S, rng.standard_normal((5000, 2)), Constraints(k=8, ell=1 / 16, cap_L=0.25),
                       rng=rng, backend="exact")
    tree = build_rptree(S, 32, rng)
    d2 = Dispatcher(d.S, d.g_S, d.constraints, d.algo, "rptree", d.n_clusters, d.w_hat, tree, 32)
    Q = rng.standard_normal((2000, 2))
    assert np.mean(np.all(d.route(Q) == d2.route(Q), axis=1)) >= 0.9


def test_save_load_roundtrip(tmp_path, rng):
    S = rng.standard_normal((300, 3))
    d = fit_dispatcher(S, S, Constraints(k=4, ell=0.1, cap_L=0.5), rng=rng, backend="rptree", leaf_size=8)
    path = tmp_path / "d.bin"
    d.save(path)
    back = load_dispatcher(path)
    Q = rng.standard_normal((100, 3))
    assert back.backend == "rptree"
    assert np.array_equal(back.route(Q), d.route(Q))
    assert path.read_bytes()[:5] == b"BDSP1"
