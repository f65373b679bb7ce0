"""Pairwise divergence matrix and exact lexicographic sensor allocation.

Both allocation programs are 0/1 knapsacks with a nonnegative matrix ``M``
(pairs x groups) and are solved exactly by depth-first branch and bound
with per-row fractional-knapsack bounds. Objective values within a relative
1e-12 of each other count as ties, and among tied selections the
lexicographically largest ``x`` wins, i.e. the one that prefers
lower-indexed groups.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from .attacks import AttackType
from .partition import Partition

_TIE = 1e-12


class AllocationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DifferenceMatrix:
    M: np.ndarray  # (n_p, n_g)
    pairs: tuple[tuple[int, int], ...]
    groups: tuple[int, ...]

    def write_csv(self, stream: TextIO):
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["type_p", "type_q"] + [f"g{g}" for g in self.groups])
        for (p, q), row in zip(self.pairs, self.M):
            w.writerow([p, q] + [repr(float(v)) for v in row])

    @classmethod
    def read_csv(cls, stream: TextIO) -> DifferenceMatrix:
        rows = list(csv.reader(stream))
        groups = tuple(int(h[1:]) for h in rows[0][2:])
        pairs = tuple((int(r[0]), int(r[1])) for r in rows[1:])
        M = np.array([[float(v) for v in r[2:]] for r in rows[1:]]).reshape(len(pairs), len(groups))
        return cls(M, pairs, groups)


@dataclass(frozen=True, eq=False)
class Allocation:
    x: tuple[int, ...]
    u: np.ndarray
    alpha: float
    avg: float
    cost: float

    @property
    def selected(self) -> tuple[int, ...]:
        return tuple(i for i, v in enumerate(self.x) if v)

    def to_dict(self) -> dict:
        return {
            "x": list(self.x),
            "selected": list(self.selected),
            "alpha": self.alpha,
            "avg": self.avg,
            "cost": self.cost,
        }


def difference_matrix(
    types: Sequence[AttackType], partition: Partition, pairs: Sequence[tuple[int, int]]
) -> DifferenceMatrix:
    """``M[i, g] = sum over links l in group g of (mu_p - mu_q)^2 / (s_p^2 + s_q^2)``.

    This is the Mahalanobis gap with the summed covariances, restricted to a
    group. Links where both variances vanish are skipped (pseudo-inverse
    convention), with a warning if the means differ there.
    """
    if not pairs:
        raise AllocationError("no attack pairs to distinguish")
    for gi, g in enumerate(partition.groups):
        if not g:
            raise AllocationError(f"group {gi} is empty")
    by_id = {t.id: t for t in types}
    group_of = partition.group_of()
    in_group = group_of >= 0
    M = np.zeros((len(pairs), partition.n_groups))
    dropped = 0
    for r, (p, q) in enumerate(pairs):
        tp, tq = by_id[p], by_id[q]
        num = (tp.mu - tq.mu) ** 2
        den = tp.variance + tq.variance
        zero = den == 0
        dropped += int(np.count_nonzero(zero & (num > 0) & in_group))
        contrib = np.divide(num, den, out=np.zeros_like(num), where=~zero)
        M[r] = np.bincount(group_of[in_group], weights=contrib[in_group], minlength=partition.n_groups)
    if dropped:
        warnings.warn(f"{dropped} zero-variance link terms with differing means were ignored", stacklevel=2)
    return DifferenceMatrix(M, tuple(tuple(p) for p in pairs), tuple(range(partition.n_groups)))


def evaluate(M: np.ndarray, q: np.ndarray, x: Sequence[int]) -> Allocation:
    xv = np.asarray(x, dtype=float)
    u = M @ xv
    return Allocation(
        x=tuple(int(v) for v in x),
        u=u,
        alpha=float(u.min()) if len(u) else float("inf"),
        avg=float(u.mean()) if len(u) else 0.0,
        cost=float(np.dot(q, xv)),
    )


class _Search:
    """Depth-first branch and bound over x_0, x_1, ... with the 1-branch first."""

    def __init__(self, M: np.ndarray, q: np.ndarray, gamma: float, mode: str, floor: float | None):
        self.M = M
        self.q = q
        self.gamma = gamma
        self.mode = mode
        self.floor = floor
        n_p, n_g = M.shape
        self.n_g = n_g
        self.colsum = M.sum(axis=0)
        # per suffix start j: rows' remaining columns sorted by value per cost
        self.orders = []
        for j in range(n_g + 1):
            Ms, qs = M[:, j:], q[j:]
            order = np.argsort(-(Ms / qs), axis=1, kind="stable")
            Mo = np.take_along_axis(Ms, order, axis=1)
            qo = qs[order]
            co = np.argsort(-(self.colsum[j:] / qs), kind="stable")
            self.orders.append((Mo, qo, np.cumsum(qo, axis=1) - qo, self.colsum[j:][co], qs[co], np.cumsum(qs[co]) - qs[co]))
        self.best_key: tuple[float, tuple[int, ...]] | None = None
        self.best: Allocation | None = None
        self.nodes = 0

    @staticmethod
    def _lp(Mo, qo, prev, rem):
        frac = np.clip((rem - prev) / qo, 0.0, 1.0)
        return (Mo * frac).sum(axis=-1)

    def offer(self, x: tuple[int, ...]):
        alloc = evaluate(self.M, self.q, x)
        if alloc.cost > self.gamma:
            return
        if self.mode == "min":
            value = alloc.alpha
        else:
            if np.any(alloc.u < self.floor):
                return
            value = alloc.avg
        if self.best_key is not None:
            v, xb = self.best_key
            slack = _TIE * abs(v)
            if value < v - slack or (value <= v + slack and x <= xb):
                return
        self.best_key, self.best = (value, x), alloc

    def _prunable(self, bound: float, prefix: tuple[int, ...]) -> bool:
        if self.best_key is None:
            return False
        v, xb = self.best_key
        slack = _TIE * abs(v)
        if bound < v - slack:
            return True
        if bound <= v + slack:
            # a tie can only win on x; the largest x below this node is prefix + ones
            return prefix + (1,) * (self.n_g - len(prefix)) <= xb
        return False

    def run(self, incumbent: Sequence[int] | None = None) -> Allocation | None:
        if incumbent is not None:
            self.offer(tuple(int(v) for v in incumbent))
        self._visit((), np.zeros(self.M.shape[0]), 0.0, self.gamma)
        return self.best

    def _visit(self, prefix: tuple[int, ...], u: np.ndarray, usum: float, rem: float):
        self.nodes += 1
        j = len(prefix)
        if j == self.n_g:
            self.offer(prefix)
            return
        Mo, qo, prev, cs, cq, cprev = self.orders[j]
        row_bounds = u + self._lp(Mo, qo, prev, rem)
        if self.mode == "min":
            bound = float(row_bounds.min())
        else:
            if np.any(row_bounds < self.floor - _TIE * (1.0 + abs(self.floor))):
                return
            bound = (usum + float(self._lp(cs, cq, cprev, rem))) / self.M.shape[0]
        if self._prunable(bound, prefix):
            return
        if self.q[j] <= rem:
            self._visit(prefix + (1,), u + self.M[:, j], usum + self.colsum[j], rem - self.q[j])
        self._visit(prefix + (0,), u, usum, rem)


def _check(M, q, gamma):
    M = np.asarray(M, dtype=float)
    q = np.asarray(q, dtype=float)
    if M.ndim != 2 or M.shape[0] == 0:
        raise AllocationError("empty pair set: nothing to distinguish")
    if q.shape != (M.shape[1],):
        raise AllocationError("one cost per group required")
    if np.any(q <= 0):
        raise AllocationError("group costs must be positive")
    if np.any(M < 0):
        raise AllocationError("divergences must be nonnegative")
    if gamma < 0:
        raise AllocationError("budget must be nonnegative")
    return M, q


def _greedy(M: np.ndarray, q: np.ndarray, gamma: float) -> tuple[int, ...]:
    """Add the affordable group that most raises (min, sum) per unit cost, until none helps."""
    x = np.zeros(M.shape[1], dtype=int)
    u = np.zeros(M.shape[0])
    rem = gamma
    while True:
        best, best_key = None, None
        for j in np.flatnonzero((x == 0) & (q <= rem)):
            nu = u + M[:, j]
            key = (nu.min(), nu.sum() / q[j])
            if best_key is None or key > best_key:
                best, best_key = j, key
        if best is None:
            break
        x[best] = 1
        u += M[:, best]
        rem -= q[best]
    return tuple(int(v) for v in x)


def solve_max_min(M, q, gamma: float) -> tuple[float, tuple[int, ...]]:
    """Exact ``max min_i (M x)_i`` s.t. ``q.x <= gamma``, x binary."""
    M, q = _check(M, q, gamma)
    search = _Search(M, q, gamma, "min", None)
    best = search.run(_greedy(M, q, gamma))
    return best.alpha, best.x


def solve_lexicographic(M, q, gamma: float) -> Allocation:
    """Maximize the mean divergence among allocations that attain the max-min value."""
    M, q = _check(M, q, gamma)
    alpha, x_min = solve_max_min(M, q, gamma)
    floor = alpha - 1e-9 * (1.0 + abs(alpha))
    search = _Search(M, q, gamma, "avg", floor)
    best = search.run(x_min)
    return best
