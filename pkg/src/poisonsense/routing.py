"""Route-based Frank-Wolfe solver for separable polynomial link objectives.

Every routing program here has the form::

    minimize   sum_j sum_k zeta[j, k] * y_j^(k+1)
    subject to H z = d,  F z = y,  z >= 0

over an explicitly enumerated route set, so the linear minimization oracle
is a per-OD argmin over route costs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .attacks import AttackType
from .costs import ExpectedCostParams, poly_coefficients, poly_derivative, poly_value
from .network import Network, NoRouteError

log = logging.getLogger(__name__)


class NonConvexObjectiveError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LinkObjective:
    """Per-link quintic coefficients, shape (n_links, 5), lowest degree first."""

    zeta: np.ndarray

    def __post_init__(self):
        z = np.array(self.zeta, dtype=float)
        if z.ndim != 2 or z.shape[1] != 5:
            raise ValueError("zeta must have shape (n_links, 5)")
        if np.any(z[:, 4] <= 0):
            raise ValueError("leading coefficient must be positive on every link")
        z.setflags(write=False)
        object.__setattr__(self, "zeta", z)

    @classmethod
    def from_params(cls, p: ExpectedCostParams) -> LinkObjective:
        return cls(poly_coefficients(p))

    @classmethod
    def system_optimal(cls, network: Network, f) -> LinkObjective:
        """Deterministic BPR objective with known ambient flow ``f``."""
        return cls.from_params(ExpectedCostParams.known_flow(network.b, network.w, network.c, f))

    @classmethod
    def best_response(cls, network: Network, attack: AttackType, f_hat) -> LinkObjective:
        p = ExpectedCostParams(network.b, network.w, network.c, attack.mu - np.asarray(f_hat, dtype=float), attack.sigma)
        return cls.from_params(p)

    def value(self, y) -> float:
        return float(np.sum(poly_value(self.zeta, y)))

    def gradient(self, y) -> np.ndarray:
        return poly_derivative(self.zeta, y)

    def curvature(self, y) -> np.ndarray:
        """Second derivative per link."""
        zt = self.zeta
        y = np.asarray(y, dtype=float)
        return (((20.0 * zt[:, 4] * y + 12.0 * zt[:, 3]) * y + 6.0 * zt[:, 2]) * y) + 2.0 * zt[:, 1]


@dataclass(frozen=True, eq=False)
class RoutingSolution:
    z: np.ndarray
    y: np.ndarray
    objective: float
    gap: float
    iterations: int
    converged: bool = True
    convex: bool = True
    history: tuple[float, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "z": [float(v) for v in self.z],
            "y": [float(v) for v in self.y],
            "objective": self.objective,
            "gap": self.gap,
            "iterations": self.iterations,
            "converged": self.converged,
            "convex": self.convex,
        }


def _od_blocks(network: Network) -> list[np.ndarray]:
    blocks = [[] for _ in range(network.n_od)]
    for r, od in enumerate(network.route_od):
        blocks[od].append(r)
    for od, blk in enumerate(blocks):
        if not blk:
            raise NoRouteError(f"OD pair {network.od_pairs[od]} has no route")
    return [np.array(b, dtype=int) for b in blocks]


class _LineSearch:
    """Exact minimization of the objective along ``y + t dy`` for t in [0, 1]."""

    def __init__(self, obj: LinkObjective, y: np.ndarray, dy: np.ndarray):
        nz = np.flatnonzero(dy)
        self.zeta = obj.zeta[nz]
        self.y = y[nz]
        self.dy = dy[nz]

    def value(self, t: float) -> float:
        return float(np.sum(poly_value(self.zeta, self.y + t * self.dy)))

    def slope(self, t: float) -> float:
        return float(np.dot(self.dy, poly_derivative(self.zeta, self.y + t * self.dy)))

    def curvature_ok(self) -> bool:
        lo = LinkObjective.__new__(LinkObjective)
        object.__setattr__(lo, "zeta", self.zeta)
        dy2 = self.dy * self.dy
        for t in np.linspace(0.0, 1.0, 5):
            h = dy2 * lo.curvature(self.y + t * self.dy)
            if h.sum() < -1e-9 * (np.abs(h).sum() + 1e-300):
                return False
        return True

    def minimize(self, convex: bool) -> float:
        if self.dy.size == 0:
            return 0.0
        if convex:
            s0, s1 = self.slope(0.0), self.slope(1.0)
            if s0 >= 0:
                return 0.0
            if s1 <= 0:
                return 1.0
            return brentq(self.slope, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        # global minimum over endpoints and stationary points of the quintic
        ts = np.linspace(0.0, 1.0, 65)
        slopes = [self.slope(t) for t in ts]
        cands = [0.0, 1.0]
        for a, b, sa, sb in zip(ts, ts[1:], slopes, slopes[1:]):
            if sa < 0 <= sb:
                cands.append(brentq(self.slope, a, b, xtol=1e-15, maxiter=200))
        vals = [self.value(t) for t in cands]
        return cands[int(np.argmin(vals))]


def solve(
    network: Network,
    obj: LinkObjective,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    method: str = "pairwise",
    allow_nonconvex: bool = False,
) -> RoutingSolution:
    """Minimize ``obj`` over the route polytope of ``network``.

    ``method="fw"`` is textbook Frank-Wolfe; ``"pairwise"`` moves, in every
    OD pair, flow from the costliest used route to the cheapest one, which
    converges linearly when some routes end up unused. Both start with each
    OD's demand on its first route and stop when the Frank-Wolfe gap
    ``<grad, z - z_fw>`` is at most ``tol * max(1, |objective|)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if obj.zeta.shape[0] != network.n_links:
        raise ValueError("objective and network disagree on the link count")
    if method not in ("fw", "pairwise"):
        raise ValueError(f"unknown method {method!r}")
    blocks = _od_blocks(network)
    F = network.F
    FT = F.T.tocsr()
    d = network.d

    z = np.zeros(network.n_routes)
    for od, blk in enumerate(blocks):
        z[blk[0]] = d[od]

    convex = True
    history = []
    converged = False
    it = 0
    while True:
        it += 1
        y = np.asarray(F @ z).ravel()
        value = obj.value(y)
        history.append(value)
        rc = np.asarray(FT @ obj.gradient(y)).ravel()
        best = np.array([blk[np.argmin(rc[blk])] for blk in blocks])
        gap = max(float(np.dot(rc, z) - np.dot(d, rc[best])), 0.0)
        if gap <= tol * max(1.0, abs(value)):
            converged = True
            break
        if it >= max_iter:
            break

        dz = np.zeros_like(z)
        if method == "fw":
            dz[best] += d
            dz -= z
        else:
            for od, blk in enumerate(blocks):
                used = blk[z[blk] > 0]
                if used.size == 0:
                    continue
                worst = used[np.argmax(rc[used])]
                if rc[worst] > rc[best[od]]:
                    dz[best[od]] += z[worst]
                    dz[worst] -= z[worst]
        dy = np.asarray(F @ dz).ravel()
        ls = _LineSearch(obj, y, dy)
        if convex and not ls.curvature_ok():
            if not allow_nonconvex:
                raise NonConvexObjectiveError("negative curvature along a search direction")
            convex = False
            log.debug("objective is not convex; switching to global 1-D search")
        t = ls.minimize(convex)
        if t == 0.0:
            log.debug("line search stalled at iteration %d (gap %.3e)", it, gap)
            break
        if method == "pairwise" and t == 1.0:
            # exact transfer, keeps dropped routes at exactly zero
            z = np.where(dz < 0, 0.0, z + dz)
        else:
            z = np.maximum(z + t * dz, 0.0)

    return RoutingSolution(
        z=z,
        y=y,
        objective=value,
        gap=gap,
        iterations=it,
        converged=converged,
        convex=convex,
        history=tuple(history),
    )


def best_response_flow(network: Network, attack: AttackType, f_hat, tol: float = 1e-8, **kw) -> RoutingSolution:
    """Route flow minimizing expected cost when the attack is known to be ``attack``."""
    f_hat = np.asarray(f_hat, dtype=float)
    if np.any(f_hat < 0):
        raise ValueError("reported flow must be nonnegative")
    return solve(network, LinkObjective.best_response(network, attack, f_hat), tol=tol, **kw)


def system_optimal_flow(network: Network, f, tol: float = 1e-8, **kw) -> RoutingSolution:
    return solve(network, LinkObjective.system_optimal(network, f), tol=tol, **kw)
