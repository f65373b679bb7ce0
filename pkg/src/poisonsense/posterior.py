"""Type likelihoods from sensed links and routing with partial observation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .allocation import Allocation
from .attacks import AttackType, SelectionMatrix
from .costs import ExpectedCostParams, poly_coefficients
from .network import Network
from .partition import Partition
from .routing import LinkObjective, RoutingSolution, solve


@dataclass(frozen=True, eq=False)
class Observation:
    """Attack values ``o = E a`` read on the sensed links ``E.rows``."""

    E: SelectionMatrix
    o: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.o, dtype=float)
        if o.shape != (len(self.E),):
            raise ValueError("observation length must equal the number of sensed links")
        object.__setattr__(self, "o", o)

    @classmethod
    def of(cls, E: SelectionMatrix, a: np.ndarray) -> Observation:
        return cls(E, E.apply(a))


@dataclass(frozen=True, eq=False)
class PosteriorWeights:
    omega: np.ndarray
    log_likelihood: np.ndarray | None = None


def sensed_links(allocation: Allocation | Sequence[int], partition: Partition) -> SelectionMatrix:
    x = allocation.x if isinstance(allocation, Allocation) else tuple(allocation)
    links = sorted(i for g, on in zip(partition.groups, x) if on for i in g)
    return SelectionMatrix(tuple(links), partition.n_links)


def log_likelihoods(obs: Observation, types: Sequence[AttackType]) -> np.ndarray:
    idx = list(obs.E.rows)
    out = np.empty(len(types))
    for k, t in enumerate(types):
        var = t.variance[idx]
        if np.any(var <= 0):
            raise ValueError(f"attack type {t.id} has zero variance on a sensed link")
        r = obs.o - t.mu[idx]
        out[k] = -0.5 * np.sum(r * r / var + np.log(2.0 * np.pi * var))
    return out


def likelihood_weights(obs: Observation, types: Sequence[AttackType]) -> PosteriorWeights:
    """Normalized Gaussian likelihood of ``obs`` under each type (uniform prior).

    An empty observation carries no information and yields uniform weights.
    """
    if not types:
        raise ValueError("no attack types")
    if len(obs.E) == 0:
        return PosteriorWeights(np.full(len(types), 1.0 / len(types)), np.zeros(len(types)))
    ll = log_likelihoods(obs, types)
    logw = ll - logsumexp(ll)
    w = np.exp(logw)
    w /= w.sum()
    return PosteriorWeights(w, ll)


def post_sensing_objective(
    network: Network, f_hat, obs: Observation, omega: PosteriorWeights, types: Sequence[AttackType]
) -> LinkObjective:
    """Known BPR cost on sensed links, the weighted mix of expected costs elsewhere."""
    f_hat = np.asarray(f_hat, dtype=float)
    b, w, c = network.b, network.w, network.c
    zeta = np.zeros((network.n_links, 5))
    for wt, t in zip(omega.omega, types):
        if wt == 0.0:
            continue
        zeta += wt * poly_coefficients(ExpectedCostParams(b, w, c, t.mu - f_hat, t.sigma))
    idx = list(obs.E.rows)
    if idx:
        known = ExpectedCostParams.known_flow(b[idx], w[idx], c[idx], f_hat[idx] - obs.o)
        zeta[idx] = poly_coefficients(known)
    return LinkObjective(zeta)


def post_sensing_routing(
    network: Network,
    f_hat,
    obs: Observation,
    omega: PosteriorWeights,
    types: Sequence[AttackType],
    tol: float = 1e-8,
    **kw,
) -> RoutingSolution:
    return solve(network, post_sensing_objective(network, f_hat, obs, omega, types), tol=tol, **kw)
