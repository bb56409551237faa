"""Desk-scale distributed-learning experiment.

A dispatcher is fitted on a subsample of the training set, every training
point is routed to its worker(s), each worker fits a one-vs-all linear model
on what it received, and test points are classified by the models of the
workers they are routed to.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .baselines import bpt_dispatcher, lsh_dispatcher, random_dispatcher
from .core import Assignment, Constraints, Instance, class_entropy
from .dispatch import Dispatcher, fit_dispatcher
from .errors import BalclustError, InvariantError
from .instances import brute_force_opt, gen_gaussian_mixture, gen_grid_rect, gen_two_gaussians

log = logging.getLogger(__name__)

DISPATCHERS = ("kmeanspp", "lp-round", "oracle", "bpt", "lsh", "random")
LAMBDA_GRID = (1e-3, 1e-1, 10.0)
GUARD_SHARE = 0.98


@dataclass
class ExperimentConfig:
    dataset: str = "grid"
    dataset_params: dict = field(default_factory=dict)
    n_train: int = 20000
    n_test: int = 5000
    dispatcher: str = "kmeanspp"
    k: int = 16
    p: int = 1
    ell: float | None = None
    cap_L: float | None = None
    subsample: int = 1000
    second_sample: int | None = None
    workers: int = 1
    lambdas: tuple = LAMBDA_GRID
    epochs: int = 100
    cv_folds: int = 3
    repeats: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.workers < 1:
            raise BalclustError("worker count must be at least 1")
        if self.dispatcher not in DISPATCHERS:
            raise BalclustError(f"unknown dispatcher {self.dispatcher!r}")
        self.lambdas = tuple(float(x) for x in self.lambdas)

    @property
    def bounds(self) -> tuple[float, float]:
        ell = 1.0 / (2 * self.k) if self.ell is None else self.ell
        cap = min(1.0, 2.0 / self.k) if self.cap_L is None else self.cap_L
        return ell, cap

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise BalclustError(f"unknown config keys: {sorted(extra)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        return d


@dataclass
class ExperimentResult:
    accuracy: float | None
    accuracies: list
    cluster_sizes: list
    entropy: float
    timings: dict
    guard_tripped: bool

    def to_dict(self) -> dict:
        return asdict(self)


def imbalance_guard(sizes, k: int) -> bool:
    """True when the largest ceil(k/2) clusters hold more than 98% of the mass."""
    if k < 2:
        raise BalclustError("the imbalance guard needs k >= 2")
    s = np.sort(np.asarray(sizes, dtype=float))[::-1]
    total = s.sum()
    if total <= 0:
        return False
    return bool(s[:math.ceil(k / 2)].sum() / total > GUARD_SHARE)


# ---------------------------------------------------------------- local models

@dataclass(frozen=True, eq=False)
class LinearModel:
    """One-vs-all linear scorer over standardized features; a single class means a constant model."""

    classes: np.ndarray
    W: np.ndarray | None = None
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    lam: float | None = None

    def scores(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.W is None:
            return np.ones((X.shape[0], 1))
        Z = (X - self.mean) / self.scale
        return Z @ self.W[:-1] + self.W[-1]

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.scores(X), axis=1)]


def _hinge_objective(Z1, Y, W, lam):
    margin = np.maximum(0.0, 1.0 - Y * (Z1 @ W))
    reg = 0.5 * lam * (W[:-1] ** 2).sum(axis=0)
    return reg + (margin ** 2).mean(axis=0)


def _fit_ova(Z, y_idx, n_classes, lam, epochs):
    """Full-batch gradient descent on L2-regularized squared hinge, all classes at once."""
    m = Z.shape[0]
    Z1 = np.hstack([Z, np.ones((m, 1))])
    Y = -np.ones((m, n_classes))
    Y[np.arange(m), y_idx] = 1.0
    lip = lam + 2.0 * np.linalg.norm(Z1, 2) ** 2 / m
    step = 1.0 / lip
    W = np.zeros((Z1.shape[1], n_classes))
    prev = _hinge_objective(Z1, Y, W, lam)
    for _ in range(epochs):
        margin = np.maximum(0.0, 1.0 - Y * (Z1 @ W))
        grad = -2.0 * Z1.T @ (Y * margin) / m
        grad[:-1] += lam * W[:-1]
        W = W - step * grad
        obj = _hinge_objective(Z1, Y, W, lam)
        if np.any(obj > prev * (1 + 1e-10) + 1e-12):
            raise InvariantError("squared-hinge objective increased during gradient descent")
        prev = obj
    return W


def train_local(points, labels, hyperparams: dict | None = None, fallback=None) -> LinearModel:
    """Fit a one-vs-all linear model, picking lambda by k-fold CV over a fixed grid.

    ``hyperparams`` may set ``lambdas``, ``epochs``, ``folds`` and ``seed``.
    An empty partition returns a constant model predicting ``fallback``.
    """
    hp = dict(hyperparams or {})
    lambdas = tuple(hp.get("lambdas", LAMBDA_GRID))
    epochs = int(hp.get("epochs", 100))
    folds = int(hp.get("folds", 3))
    seed = int(hp.get("seed", 0))
    X = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(labels)
    if y.size == 0:
        if fallback is None:
            raise BalclustError("empty partition and no fallback class")
        return LinearModel(np.array([fallback]))
    classes, y_idx = np.unique(y, return_inverse=True)
    if classes.size == 1:
        return LinearModel(classes)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale <= 0] = 1.0
    Z = (X - mean) / scale
    lam = lambdas[0]
    if len(lambdas) > 1 and folds >= 2 and y.size >= folds:
        fold_of = np.random.default_rng(seed).permutation(y.size) % folds
        best = -1.0
        for cand in lambdas:
            hits = 0
            for f in range(folds):
                tr, te = fold_of != f, fold_of == f
                W = _fit_ova(Z[tr], y_idx[tr], classes.size, cand, epochs)
                pred = np.argmax(np.hstack([Z[te], np.ones((te.sum(), 1))]) @ W, axis=1)
                hits += int((pred == y_idx[te]).sum())
            if hits > best:
                best, lam = hits, cand
    W = _fit_ova(Z, y_idx, classes.size, lam, epochs)
    return LinearModel(classes, W, mean, scale, lam)


# ---------------------------------------------------------------- experiment

def make_dataset(config: ExperimentConfig, rng: np.random.Generator) -> Instance:
    n = config.n_train + config.n_test
    params = dict(config.dataset_params)
    if config.dataset == "grid":
        return gen_grid_rect(n, rng, **params)
    if config.dataset == "gmm":
        return gen_gaussian_mixture(n=n, rng=rng, **params)
    if config.dataset == "twogauss":
        return gen_two_gaussians(n, rng, **params)
    raise BalclustError(f"unknown dataset {config.dataset!r}")


def build_dispatcher(config: ExperimentConfig, S, S_prime, rng):
    k = config.k
    if config.dispatcher == "random":
        return random_dispatcher(k, rng)
    if config.dispatcher == "bpt":
        return bpt_dispatcher(S, k, rng)
    if config.dispatcher == "lsh":
        return lsh_dispatcher(S, k, rng)
    ell, cap = config.bounds
    cons = Constraints(k, config.p, ell, cap)
    if config.dispatcher == "oracle":
        _, assignment = brute_force_opt(Instance.from_points(S), cons, "kmeans")
        g = np.array([sorted(c for c, m in row.items() for _ in range(m)) for row in assignment.assign])
        w = np.full(S.shape[0], 1.0 / S.shape[0])
        return Dispatcher(S, g, cons, "oracle", "exact", assignment.n_clusters, w)
    objective = "kmeans" if config.dispatcher == "lp-round" else "kmedian"
    return fit_dispatcher(S, S_prime, cons, config.dispatcher, rng, objective=objective)


def _run_pool(fn, jobs, workers):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with threadpool_limits(limits=1), ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, jobs))


def _route_chunks(dispatcher, X, workers, chunk=2048):
    parts = [X[s:s + chunk] for s in range(0, X.shape[0], chunk)]
    return np.vstack(_run_pool(dispatcher.route, parts, workers))


def run_once(config: ExperimentConfig, seed: int, workers: int | None = None) -> dict:
    workers = config.workers if workers is None else workers
    rng = np.random.default_rng(seed)
    timings = {}
    t0 = time.perf_counter()
    data = make_dataset(config, rng)
    X, y = data.points, data.labels
    if y is None:
        raise BalclustError("the dataset has no labels")
    Xtr, ytr = X[:config.n_train], y[:config.n_train]
    Xte, yte = X[config.n_train:], y[config.n_train:]
    perm = rng.permutation(config.n_train)
    m = min(config.subsample, config.n_train)
    S = Xtr[perm[:m]]
    rest = perm[m:] if config.second_sample is None else perm[m:m + config.second_sample]
    S_prime = Xtr[rest] if rest.size else S
    timings["data"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    disp = build_dispatcher(config, S, S_prime, rng)
    timings["fit"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    routes = _route_chunks(disp, Xtr, workers)
    n_clusters = disp.n_clusters
    sizes = np.bincount(routes.ravel(), minlength=n_clusters)
    if sizes.sum() != routes.shape[0] * routes.shape[1]:
        raise InvariantError("routing lost or duplicated points")
    timings["dispatch_train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    values, counts = np.unique(ytr, return_counts=True)
    majority = values[np.argmax(counts)]
    hp = {"lambdas": config.lambdas, "epochs": config.epochs, "folds": config.cv_folds, "seed": seed}

    def fit(c):
        mask = (routes == c).any(axis=1)
        return train_local(Xtr[mask], ytr[mask], hp, fallback=majority)

    models = _run_pool(fit, range(n_clusters), workers)
    timings["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    test_routes = _route_chunks(disp, Xte, workers)
    pred = np.empty(Xte.shape[0], dtype=ytr.dtype)
    best = np.full(Xte.shape[0], -np.inf)
    for slot in range(test_routes.shape[1]):
        for c in np.unique(test_routes[:, slot]):
            q = np.flatnonzero(test_routes[:, slot] == c)
            sc = models[c].scores(Xte[q])
            top = sc.max(axis=1)
            lab = models[c].classes[np.argmax(sc, axis=1)]
            take = top > best[q]
            pred[q[take]] = lab[take]
            best[q[take]] = top[take]
    accuracy = float(np.mean(pred == yte)) if yte.size else 0.0
    timings["test"] = time.perf_counter() - t0

    labels = routes[:, 0]
    assignment = Assignment.from_labels(labels) if labels.size else None
    entropy = class_entropy(assignment, ytr, n_clusters) if assignment is not None else 0.0
    guard = imbalance_guard(sizes, n_clusters) if n_clusters >= 2 else False
    return {"accuracy": accuracy, "sizes": sizes.tolist(), "entropy": entropy,
            "timings": timings, "guard": guard}


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Average over ``config.repeats`` seeded runs; a tripped guard withholds the accuracy."""
    runs = [run_once(config, config.seed + r) for r in range(config.repeats)]
    tripped = any(r["guard"] for r in runs)
    accs = [r["accuracy"] for r in runs]
    timings = {k: float(np.mean([r["timings"][k] for r in runs])) for k in runs[0]["timings"]}
    timings["total"] = float(sum(timings.values()))
    if tripped:
        log.warning("partition imbalance guard tripped; accuracy withheld")
    return ExperimentResult(None if tripped else float(np.mean(accs)), accs,
                            [r["sizes"] for r in runs], float(np.mean([r["entropy"] for r in runs])),
                            timings, tripped)


def scaling_run(config: ExperimentConfig, worker_counts=(1, 4)) -> dict:
    """Time the same seeded workload at each worker count; speedups are relative to the first."""
    out = {"workers": list(worker_counts), "timings": [], "speedup": []}
    base = None
    for w in worker_counts:
        t0 = time.perf_counter()
        run = run_once(config, config.seed, workers=w)
        wall = time.perf_counter() - t0
        run["timings"]["wall"] = wall
        out["timings"].append(run["timings"])
        base = wall if base is None else base
        out["speedup"].append(base / wall if wall > 0 else 1.0)
    return out


def default_scaling_config() -> ExperimentConfig:
    return ExperimentConfig(dataset="grid", dataset_params={"dims": 20}, n_train=8000, n_test=2000,
                            dispatcher="kmeanspp", k=8, subsample=500, epochs=100)
