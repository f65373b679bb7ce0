"""l1 k-medians over best-response route flows and the induced pair sets."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KMediansResult:
    centers: np.ndarray  # (n_c, dim)
    labels: np.ndarray  # (n,)
    objective: float
    history: tuple[float, ...] = ()


@dataclass(frozen=True, eq=False)
class ClusterModel:
    """Cluster centers, membership radius and the member type ids of each cluster."""

    centers: np.ndarray
    epsilon: float
    members: tuple[tuple[int, ...], ...]

    @property
    def n_c(self) -> int:
        return len(self.members)

    def labels(self, n_a: int) -> np.ndarray:
        out = np.full(n_a, -1, dtype=int)
        for k, mem in enumerate(self.members):
            out[list(mem)] = k
        return out

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "centers": [[float(v) for v in c] for c in self.centers],
            "members": [list(m) for m in self.members],
        }

    @classmethod
    def from_dict(cls, data: dict) -> ClusterModel:
        return cls(
            centers=np.array(data["centers"], dtype=float),
            epsilon=float(data["epsilon"]),
            members=tuple(tuple(int(i) for i in m) for m in data["members"]),
        )


@dataclass(frozen=True)
class PairSets:
    P: tuple[tuple[int, int], ...]  # cross-cluster pairs
    Q: tuple[tuple[int, int], ...]  # same-cluster pairs
    unassigned: tuple[int, ...] = ()


def l1_distances(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.abs(X[:, None, :] - centers[None, :, :]).sum(axis=2)


def kmedians_objective(X: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> float:
    return float(np.abs(X - centers[labels]).sum())


def _seed_centers(X: np.ndarray, n_c: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    chosen = [int(rng.integers(n))]
    dmin = np.abs(X - X[chosen[0]]).sum(axis=1)
    for _ in range(1, n_c):
        total = dmin.sum()
        idx = int(rng.integers(n)) if total <= 0 else int(rng.choice(n, p=dmin / total))
        chosen.append(idx)
        dmin = np.minimum(dmin, np.abs(X - X[idx]).sum(axis=1))
    return X[chosen].astype(float)


def _lloyd_l1(X: np.ndarray, centers: np.ndarray, max_iter: int) -> KMediansResult:
    labels = None
    history = []
    for _ in range(max_iter):
        new = l1_distances(X, centers).argmin(axis=1)
        history.append(kmedians_objective(X, centers, new))
        new_centers = centers.copy()
        for k in range(len(centers)):
            pts = X[new == k]
            if len(pts):
                new_centers[k] = np.median(pts, axis=0)
        stable = labels is not None and np.array_equal(new, labels) and np.array_equal(new_centers, centers)
        labels, centers = new, new_centers
        if stable:
            break
    labels = l1_distances(X, centers).argmin(axis=1)
    obj = kmedians_objective(X, centers, labels)
    history.append(obj)
    return KMediansResult(centers, labels, obj, tuple(history))


def k_medians(flows, n_c: int, restarts: int = 32, seed: int = 0, max_iter: int = 300) -> KMediansResult:
    """Alternating l1 k-medians; best of ``restarts`` D1-weighted seedings.

    Points go to the nearest center (lowest index on ties); each center
    becomes the coordinate-wise median of its points.
    """
    X = np.asarray(flows, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ClusteringError("flows must be a nonempty 2-D array")
    if n_c < 1 or restarts < 1:
        raise ClusteringError("n_c and restarts must be >= 1")
    if n_c > len(np.unique(X, axis=0)):
        warnings.warn(f"n_c={n_c} exceeds the number of distinct flows; centers will repeat", stacklevel=2)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        res = _lloyd_l1(X, _seed_centers(X, n_c, rng), max_iter)
        if best is None or res.objective < best.objective:
            best = res
    return best


def choose_n_c(flows, epsilon: float, n_c_max: int | None = None, restarts: int = 32, seed: int = 0) -> ClusterModel:
    """Smallest cluster count whose k-medians centers cover every flow within ``epsilon``."""
    X = np.asarray(flows, dtype=float)
    if epsilon <= 0:
        raise ClusteringError("epsilon must be positive")
    n_c_max = len(X) if n_c_max is None else n_c_max
    uncovered: list[int] = []
    for n_c in range(1, n_c_max + 1):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = k_medians(X, n_c, restarts=restarts, seed=seed)
        dist = l1_distances(X, res.centers)
        nearest = dist.argmin(axis=1)
        ok = dist[np.arange(len(X)), nearest] <= epsilon
        if ok.all():
            members = tuple(tuple(int(i) for i in np.flatnonzero(nearest == k)) for k in range(n_c))
            return ClusterModel(res.centers, float(epsilon), members)
        uncovered = [int(i) for i in np.flatnonzero(~ok)]
    raise ClusteringError(f"no n_c <= {n_c_max} covers all flows; uncovered types: {uncovered}")


def pair_sets(model: ClusterModel, n_a: int) -> PairSets:
    owner: dict[int, int] = {}
    for k, mem in enumerate(model.members):
        for i in mem:
            if i in owner:
                raise ClusteringError(f"type {i} belongs to clusters {owner[i]} and {k}")
            if not 0 <= i < n_a:
                raise ClusteringError(f"type id {i} out of range")
            owner[i] = k
    P, Q = [], []
    for i, j in itertools.combinations(range(n_a), 2):
        if i in owner and j in owner:
            (Q if owner[i] == owner[j] else P).append((i, j))
    unassigned = tuple(i for i in range(n_a) if i not in owner)
    if unassigned:
        warnings.warn(f"types {list(unassigned)} are in no cluster and excluded from pair sets", stacklevel=2)
    return PairSets(tuple(P), tuple(Q), unassigned)
