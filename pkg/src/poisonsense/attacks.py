"""Gaussian attack hypotheses on reported link flows."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from .partition import Partition


class AttackModelError(ValueError):
    pass


class InfeasibleAttackWarning(UserWarning):
    """An attack mean exceeds the reported flow on some link."""


@dataclass(frozen=True, eq=False)
class AttackType:
    """Independent per-link Gaussian attack ``a_j ~ N(mu_j, sigma_j^2)``."""

    id: int
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if mu.ndim != 1 or mu.shape != sigma.shape:
            raise AttackModelError("mu and sigma must be 1-D vectors of equal length")
        if np.any(sigma <= 0):
            raise AttackModelError(f"attack type {self.id}: sigma must be positive")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_links(self) -> int:
        return len(self.mu)

    @property
    def variance(self) -> np.ndarray:
        return self.sigma * self.sigma

    def check_feasible(self, f_hat: np.ndarray) -> bool:
        """Warn if ``mu_j > f_hat_j`` anywhere; returns whether the check passed."""
        bad = np.flatnonzero(self.mu > np.asarray(f_hat))
        if bad.size:
            warnings.warn(
                f"attack type {self.id}: mean exceeds reported flow on {bad.size} links "
                f"(first: {bad[0]})",
                InfeasibleAttackWarning,
                stacklevel=2,
            )
            return False
        return True

    def same_as(self, other: AttackType) -> bool:
        return (
            self.id == other.id
            and np.array_equal(self.mu, other.mu)
            and np.array_equal(self.sigma, other.sigma)
        )


@dataclass(frozen=True)
class SelectionMatrix:
    """Row selector over link ids; ``rows[k]`` is the link read by row ``k``."""

    rows: tuple[int, ...]
    n_links: int

    def __post_init__(self):
        rows = tuple(int(i) for i in self.rows)
        if any(b <= a for a, b in zip(rows, rows[1:])):
            raise AttackModelError("selection rows must be strictly increasing")
        if rows and not (0 <= rows[0] and rows[-1] < self.n_links):
            raise AttackModelError("selection link id out of range")
        object.__setattr__(self, "rows", rows)

    def __len__(self):
        return len(self.rows)

    def dense(self) -> np.ndarray:
        S = np.zeros((len(self.rows), self.n_links))
        S[np.arange(len(self.rows)), list(self.rows)] = 1.0
        return S

    def apply(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v)[list(self.rows)]


@dataclass(frozen=True, eq=False)
class ProjectedGaussian:
    xi: np.ndarray
    Lambda_diag: np.ndarray

    def logpdf(self, o: np.ndarray) -> float:
        r = np.asarray(o, dtype=float) - self.xi
        return float(-0.5 * np.sum(r * r / self.Lambda_diag + np.log(2 * np.pi * self.Lambda_diag)))


def project(attack: AttackType, S: SelectionMatrix) -> ProjectedGaussian:
    """Marginal of ``S a`` under ``attack``: mean ``S mu`` and variances ``S sigma^2``."""
    if len(S) == 0:
        raise AttackModelError("empty selection")
    if S.n_links != attack.n_links:
        raise AttackModelError("selection and attack disagree on the link count")
    return ProjectedGaussian(S.apply(attack.mu), S.apply(attack.variance))


def make_zone_attack_types(
    partition: Partition, c: np.ndarray, mean_scale: float = 30.0, rel_std: float = 0.1
) -> list[AttackType]:
    """One attack type per group: mean ``mean_scale * c`` on the group's links, zero elsewhere.

    The noise level ``rel_std * c`` applies to every link.
    """
    c = np.asarray(c, dtype=float)
    if mean_scale < 0:
        raise AttackModelError("mean_scale must be nonnegative")
    if rel_std <= 0:
        raise AttackModelError("rel_std must be positive")
    sigma = rel_std * c
    types = []
    for i, g in enumerate(partition.groups):
        if not g:
            raise AttackModelError(f"group {i} is empty")
        mu = np.zeros_like(c)
        idx = list(g)
        mu[idx] = mean_scale * c[idx]
        types.append(AttackType(i, mu, sigma))
    return types


def attack_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for ``(seed, *key)``; draws never depend on call order."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key)))


def sample_attack(attack: AttackType, rng: np.random.Generator | int, force_mean: bool = False) -> np.ndarray:
    if force_mean:
        return attack.mu.copy()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return rng.normal(attack.mu, attack.sigma)


def attacks_to_json(types: Sequence[AttackType], stream: TextIO):
    out = []
    for t in types:
        nz = np.flatnonzero(t.mu)
        out.append({
            "id": t.id,
            "mu": {str(int(j)): float(t.mu[j]) for j in nz},
            "sigma": [float(s) for s in t.sigma],
        })
    json.dump({"n_links": types[0].n_links if types else 0, "types": out}, stream, indent=1)


def attacks_from_json(stream: TextIO, c: np.ndarray | None = None) -> list[AttackType]:
    """Inverse of :func:`attacks_to_json`.

    ``sigma`` may also be ``{"rel": r}``, meaning ``r * c`` with ``c`` given.
    """
    data = json.load(stream)
    n = int(data["n_links"])
    types = []
    for rec in data["types"]:
        mu = np.zeros(n)
        for j, v in rec["mu"].items():
            mu[int(j)] = float(v)
        sig = rec["sigma"]
        if isinstance(sig, dict):
            if c is None:
                raise AttackModelError("relative sigma needs the capacity vector")
            sigma = float(sig["rel"]) * np.asarray(c, dtype=float)
        else:
            sigma = np.asarray(sig, dtype=float)
        types.append(AttackType(int(rec["id"]), mu, sigma))
    return types
