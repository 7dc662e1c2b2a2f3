"""Per-class feature queues, their mean templates, and the proxy-label rule."""

from __future__ import annotations

from collections import deque

import numpy as np

IGNORE = -1


class PoolNotWarmed(RuntimeError):
    """A center was requested for a class whose queue is still empty."""


def pool_capacity(labels_per_class: int) -> int:
    """Queue length: five times the per-class labeled count."""
    if labels_per_class < 1:
        raise ValueError("labels_per_class must be >= 1")
    return 5 * labels_per_class


class FeaturePool:
    """Bounded FIFO queue of feature vectors per class.

    Centers are the arithmetic mean of each queue, recomputed lazily for
    classes touched since the last query.  Features are stored as detached
    float64 copies.
    """

    def __init__(self, n_classes: int, feature_dim: int, capacity: int):
        if n_classes < 1 or feature_dim < 1 or capacity < 1:
            raise ValueError("n_classes, feature_dim and capacity must all be positive")
        self.n_classes = n_classes
        self.feature_dim = feature_dim
        self.capacity = capacity
        self.queues: list[deque] = [deque(maxlen=capacity) for _ in range(n_classes)]
        self._centers = np.zeros((n_classes, feature_dim))
        self._dirty = np.ones(n_classes, dtype=bool)

    def push(self, cls: int, f) -> FeaturePool:
        if not 0 <= cls < self.n_classes:
            raise IndexError(f"class {cls} out of range 0..{self.n_classes - 1}")
        f = np.array(f, dtype=np.float64).reshape(-1)
        if f.shape[0] != self.feature_dim:
            raise ValueError(f"feature length {f.shape[0]} != {self.feature_dim}")
        self.queues[cls].append(f)
        self._dirty[cls] = True
        return self

    def push_many(self, classes, features) -> FeaturePool:
        for c, f in zip(classes, features):
            self.push(int(c), f)
        return self

    def sizes(self) -> list[int]:
        return [len(q) for q in self.queues]

    @property
    def warmed(self) -> bool:
        return all(len(q) > 0 for q in self.queues)

    def centers(self) -> np.ndarray:
        for i in np.flatnonzero(self._dirty):
            q = self.queues[i]
            if not q:
                raise PoolNotWarmed(f"class {i} has no features; seed the pool from the labeled set first")
            self._centers[i] = np.mean(np.stack(q), axis=0)
            self._dirty[i] = False
        return self._centers.copy()

    # -- serialization -------------------------------------------------
    def state(self) -> dict:
        return {
            "capacity": self.capacity,
            "queues": [np.stack(q) if q else np.zeros((0, self.feature_dim)) for q in self.queues],
        }

    @classmethod
    def from_state(cls, state: dict) -> FeaturePool:
        queues = state["queues"]
        pool = cls(len(queues), queues[0].shape[1], int(state["capacity"]))
        for i, q in enumerate(queues):
            for f in q:
                pool.push(i, f)
        return pool


def _cosines(f: np.ndarray, centers: np.ndarray) -> np.ndarray:
    fn = np.linalg.norm(f)
    cn = np.linalg.norm(centers, axis=1)
    sims = np.full(len(centers), -1.0)
    ok = (cn > 0) & (fn > 0)
    sims[ok] = centers[ok] @ f / (cn[ok] * fn)
    return sims


def match_centers(f, centers: np.ndarray) -> tuple[int, int, float]:
    """(m, n, sim): cosine argmax, Euclidean argmin, and cos(f, c_m).

    np.argmax/argmin return the first extremum, so ties go to the lowest class.
    A zero-norm feature or center scores -1 on the cosine side.
    """
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    sims = _cosines(f, centers)
    dists = np.linalg.norm(centers - f, axis=1)
    m = int(np.argmax(sims))
    n = int(np.argmin(dists))
    return m, n, float(sims[m])


def match(pool: FeaturePool, f) -> tuple[int, int, float]:
    return match_centers(f, pool.centers())


def assign_proxy_centers(f, centers: np.ndarray, tau: float) -> int:
    m, n, sim = match_centers(f, centers)
    return m if (m == n and sim >= tau) else IGNORE


def assign_proxy(pool: FeaturePool, f, tau: float = 0.85) -> int:
    """Class m when cosine and Euclidean agree on m and cos(f, c_m) >= tau, else -1."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    return assign_proxy_centers(f, pool.centers(), tau)


def assign_proxies(pool: FeaturePool, features: np.ndarray, tau: float = 0.85) -> np.ndarray:
    """:func:`assign_proxy` applied to each row of ``features``."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    centers = pool.centers()
    return np.array([assign_proxy_centers(f, centers, tau) for f in features], dtype=np.int64)
