import numpy as np
import pytest

from balclust.errors import BalclustError
from balclust.harness import (ExperimentConfig, imbalance_guard, run_experiment, run_once,
                              scaling_run, train_local)


def small(**kw):
    base = dict(dataset="grid", dataset_params={"dims": 4}, n_train=1500, n_test=500, k=4,
                subsample=200, epochs=30)
    base.update(kw)
    return ExperimentConfig(**base)


def test_guard_examples():
    assert not imbalance_guard([25, 25, 25, 25], 4)
    assert imbalance_guard([100, 0, 0, 0], 4)
    assert not imbalance_guard([0.5, 0.47, 0.02, 0.01], 4)
    with pytest.raises(BalclustError):
        imbalance_guard([1.0], 1)


def test_config_rejects_bad_input():
    with pytest.raises(BalclustError):
        ExperimentConfig(workers=0)
    with pytest.raises(BalclustError):
        ExperimentConfig(dispatcher="nope")
    with pytest.raises(BalclustError):
        ExperimentConfig.from_dict({"k": 4, "bogus": 1})
    cfg = ExperimentConfig.from_dict(small().to_dict())
    assert cfg.bounds == (1 / 8, 0.5)


def test_separable_training_accuracy(rng):
    X = np.vstack([rng.normal(-2, 0.3, (50, 2)), rng.normal(2, 0.3, (50, 2))])
    y = np.repeat(["a", "b"], 50)
    model = train_local(X, y)
    assert np.mean(model.predict(X) == y) == 1.0


def test_single_class_and_empty(rng):
    X = rng.random((10, 2))
    m = train_local(X, np.full(10, 3))
    assert np.all(m.predict(rng.random((5, 2))) == 3)
    e = train_local(np.zeros((0, 2)), np.zeros(0), fallback=7)
    assert np.all(e.predict(rng.random((4, 2))) == 7)
    with pytest.raises(BalclustError):
        train_local(np.zeros((0, 2)), np.zeros(0))


def test_heavy_regularization_predicts_majority(rng):
    X = rng.random((90, 2))
    y = np.array([0] * 60 + [1] * 30)
    m = train_local(X, y, {"lambdas": [1e6], "epochs": 50})
    assert np.abs(m.W[:-1]).max() < 1e-3
    assert np.all(m.predict(X) == 0)


def test_random_k1_matches_global_model():
    cfg = small(dispatcher="random", k=1)
    out = run_once(cfg, 3)
    from balclust.harness import make_dataset
    data = make_dataset(cfg, np.random.default_rng(3))
    X, y = data.points, data.labels
    model = train_local(X[:1500], y[:1500], {"lambdas": cfg.lambdas, "epochs": cfg.epochs,
                                             "folds": cfg.cv_folds, "seed": 3})
    assert out["accuracy"] == pytest.approx(np.mean(model.predict(X[1500:]) == y[1500:]))


@pytest.mark.parametrize("disp", ["kmeanspp", "bpt", "lsh", "random"])
def test_partition_sizes_sum(disp):
    out = run_once(small(dispatcher=disp), 0)
    assert sum(out["sizes"]) == 1500
    assert 0.0 <= out["accuracy"] <= 1.0


def test_reproducible():
    a = run_once(small(), 1)
    b = run_once(small(), 1)
    assert a["accuracy"] == b["accuracy"] and a["sizes"] == b["sizes"]


def test_guard_withholds_accuracy():
    cfg = small(dispatcher="lsh", k=16, dataset_params={"dims": 2})
    res = run_experiment(cfg)
    if res.guard_tripped:
        assert res.accuracy is None
    else:
        assert 0 <= res.accuracy <= 1


def test_scaling_single_count():
    out = scaling_run(small(), (1,))
    assert out["speedup"] == [1.0]
    assert "wall" in out["timings"][0]


def test_workers_do_not_change_result():
    assert run_once(small(), 2, workers=1)["accuracy"] == run_once(small(), 2, workers=3)["accuracy"]


@pytest.mark.slow
def test_oracle_beats_kmeanspp_on_two_gaussians():
    base = dict(dataset="twogauss", n_train=2000, n_test=1000, k=2, p=1, ell=0.1, cap_L=1.0,
                subsample=14, epochs=50)
    orc, kpp = [], []
    for s in range(5):
        orc.append(run_once(ExperimentConfig(dispatcher="oracle", **base), s)["accuracy"])
        kpp.append(run_once(ExperimentConfig(dispatcher="kmeanspp", **base), s)["accuracy"])
    assert np.median(orc) >= np.median(kpp)
