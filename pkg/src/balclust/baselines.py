"""Comparison dispatchers: hashed random, balanced partition tree and LSH.

Each exposes ``route(X) -> (m, 1)`` cluster ids, ``n_clusters``, ``p`` and
``save(path)`` in the shared dispatcher file format.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from . import persist
from .core import pairwise_sq_dists
from .errors import BalclustError

log = logging.getLogger(__name__)

LSH_PROJECTIONS = 10
_EXACT_DIAMETER_N = 4096


@dataclass(frozen=True, eq=False)
class RandomDispatcher:
    """Uniform-looking ids from a keyed hash of each point's bytes.

    Hashing instead of drawing keeps train and test routing consistent.
    """

    n_clusters: int
    seed: int = 0

    kind = "random"
    p = 1

    def route(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
        key = int(self.seed).to_bytes(8, "little", signed=True)
        out = np.empty(X.shape[0], dtype=np.int64)
        for i, row in enumerate(X):
            digest = hashlib.blake2b(row.tobytes(), digest_size=8, key=key).digest()
            out[i] = int.from_bytes(digest, "little") % self.n_clusters
        return out[:, None]

    def save(self, path) -> None:
        persist.dump(path, self.kind, {"k": self.n_clusters, "seed": self.seed}, {})


def random_dispatcher(k: int, rng: np.random.Generator | None = None, seed: int | None = None) -> RandomDispatcher:
    if k < 1:
        raise BalclustError("k must be positive")
    if seed is None:
        seed = 0 if rng is None else int(rng.integers(0, 2 ** 62))
    return RandomDispatcher(k, seed)


@dataclass(frozen=True, eq=False)
class BptDispatcher:
    """Complete binary tree in heap order: node v splits on ``dims[v]`` at ``thresh[v]``.

    Leaves are numbered left to right as cluster ids.
    """

    dims: np.ndarray
    thresh: np.ndarray

    kind = "bpt"
    p = 1

    @property
    def n_clusters(self) -> int:
        return self.thresh.size + 1

    def route(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        v = np.zeros(X.shape[0], dtype=np.int64)
        inner = self.thresh.size
        while inner and v[0] < inner:
            right = X[np.arange(X.shape[0]), self.dims[v]] > self.thresh[v]
            v = 2 * v + 1 + right
        return (v - inner)[:, None]

    def save(self, path) -> None:
        persist.dump(path, self.kind, {"k": self.n_clusters},
                     {"dims": self.dims.astype(np.int32), "thresh": self.thresh.astype(np.float64)})


def bpt_dispatcher(S, k: int, rng: np.random.Generator) -> BptDispatcher:
    """Median splits on random coordinates until there are k leaves (k a power of 2)."""
    X = np.atleast_2d(np.asarray(S, dtype=float))
    n, d = X.shape
    if k < 1 or k & (k - 1):
        raise BalclustError(f"k={k} is not a power of 2")
    if k > n:
        raise BalclustError(f"k={k} exceeds the sample size {n}")
    dims = np.zeros(k - 1, dtype=np.int64)
    thresh = np.zeros(k - 1)
    parts = {0: np.arange(n)}
    for v in range(k - 1):
        idx = parts.pop(v)
        dim = int(rng.integers(d))
        vals = X[idx, dim]
        order = np.lexsort((idx, vals))
        half = (idx.size + 1) // 2
        dims[v] = dim
        thresh[v] = vals[order[half - 1]]
        parts[2 * v + 1] = idx[order[:half]]
        parts[2 * v + 2] = idx[order[half:]]
    return BptDispatcher(dims, thresh)


_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def splitmix64(z: np.ndarray) -> np.ndarray:
    """The splitmix64 finalizer applied elementwise to uint64 values."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True, eq=False)
class LshDispatcher:
    """Bins floor(u_t . x / w + b_t) for every direction, folded by splitmix64, reduced mod k.

    The offsets b_t in [0, 1) are in bin units, so a huge w sends everything
    to bin 0 instead of splitting on the sign of each projection.
    """

    directions: np.ndarray
    w: float
    n_clusters: int
    seed: int = 0
    offsets: np.ndarray | None = None

    kind = "lsh"
    p = 1

    def bins(self, X) -> np.ndarray:
        return _bins(self.directions, self.w, np.atleast_2d(np.asarray(X, dtype=float)), self.offsets)

    def bucket_hash(self, X) -> np.ndarray:
        h = np.full(np.atleast_2d(X).shape[0], np.uint64(self.seed), dtype=np.uint64)
        for col in self.bins(X).T:
            h = splitmix64(h ^ col.astype(np.uint64))
        return h

    def route(self, X) -> np.ndarray:
        return (self.bucket_hash(X) % np.uint64(self.n_clusters)).astype(np.int64)[:, None]

    def save(self, path) -> None:
        arrays = {"directions": self.directions.astype(np.float64)}
        if self.offsets is not None:
            arrays["offsets"] = self.offsets.astype(np.float64)
        persist.dump(path, self.kind, {"k": self.n_clusters, "w": self.w, "seed": self.seed}, arrays)


def _bins(directions, w, X, offsets=None) -> np.ndarray:
    z = X @ directions.T / w
    if offsets is not None:
        z = z + offsets
    return np.floor(z).astype(np.int64)


def nonempty_bins(directions: np.ndarray, w: float, X: np.ndarray, offsets=None) -> int:
    return int(np.unique(_bins(directions, w, X, offsets), axis=0).shape[0])


def diameter(X: np.ndarray) -> float:
    """Exact for small inputs; above that, twice the largest distance from the first point."""
    if X.shape[0] <= _EXACT_DIAMETER_N:
        return float(np.sqrt(max(pairwise_sq_dists(X, X).max(), 0.0)))
    return 2.0 * float(np.sqrt(max(pairwise_sq_dists(X[:1], X).max(), 0.0)))


def lsh_dispatcher(S, k: int, rng: np.random.Generator, projections: int = LSH_PROJECTIONS,
                   iters: int = 40) -> LshDispatcher:
    """Calibrate w by bisection to the smallest scale giving at most 2k nonempty bins."""
    X = np.atleast_2d(np.asarray(S, dtype=float))
    if k < 1:
        raise BalclustError("k must be positive")
    U = rng.standard_normal((projections, X.shape[1]))
    b = rng.random(projections)
    seed = int(rng.integers(0, 2 ** 62))
    D = diameter(X)
    if D <= 0:
        log.warning("all fitting points coincide; LSH collapses to a single bucket")
        return LshDispatcher(U, 1.0, k, seed, b)
    lo, hi = 1e-6 * D, D
    # Unnormalized directions can stretch projections past D; widen until 2k bins fit.
    while nonempty_bins(U, hi, X, b) > 2 * k:
        lo, hi = hi, 2 * hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if nonempty_bins(U, mid, X, b) <= 2 * k:
            hi = mid
        else:
            lo = mid
    return LshDispatcher(U, hi, k, seed, b)


def from_saved(kind: str, params: dict, arrays: dict):
    if kind == "random":
        return RandomDispatcher(params["k"], params["seed"])
    if kind == "bpt":
        return BptDispatcher(arrays["dims"].astype(np.int64), arrays["thresh"])
    if kind == "lsh":
        return LshDispatcher(arrays["directions"], params["w"], params["k"], params["seed"],
                             arrays.get("offsets"))
    raise BalclustError(f"unknown baseline kind {kind!r}")
