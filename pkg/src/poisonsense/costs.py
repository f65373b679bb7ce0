"""Quartic BPR link costs and their Gaussian expectations.

All functions broadcast over numpy arrays, so one call evaluates every link.
The per-link objective term is the degree-5 polynomial
``y * psi(y) = sum_k zeta_k y^k`` with ``psi(y) = E[b + w ((y - mu_tilde + s Z)/c)^4]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class ExpectedCostParams:
    """Per-link parameters of the expected cost.

    ``mu_tilde`` is the attack mean minus the reported flow, so the believed
    ambient flow is ``-mu_tilde``. A link with known ambient flow ``f`` has
    ``sigma = 0`` and ``mu_tilde = -f``.
    """

    b: np.ndarray
    w: np.ndarray
    c: np.ndarray
    mu_tilde: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        arrs = np.broadcast_arrays(*(np.asarray(getattr(self, k), dtype=float)
                                     for k in ("b", "w", "c", "mu_tilde", "sigma")))
        for k, a in zip(("b", "w", "c", "mu_tilde", "sigma"), arrs):
            object.__setattr__(self, k, a)
        if np.any(self.c <= 0):
            raise ValueError("capacity must be positive")
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be nonnegative")

    @classmethod
    def known_flow(cls, b, w, c, f) -> ExpectedCostParams:
        f = np.asarray(f, dtype=float)
        return cls(b, w, c, -f, np.zeros_like(f))


def bpr_cost(y, f, b, w, c):
    """``b + w ((f + y) / c)^4``."""
    r = (np.asarray(f) + np.asarray(y)) / c
    r2 = r * r
    return b + w * r2 * r2


def expected_link_cost(y, p: ExpectedCostParams):
    """Exact ``E[bpr_cost]`` with the ambient flow Gaussian: mean ``-mu_tilde``, std ``sigma``."""
    m = np.asarray(y) - p.mu_tilde
    m2 = m * m
    s2 = p.sigma * p.sigma
    return p.b + p.w / p.c**4 * (m2 * m2 + 6.0 * m2 * s2 + 3.0 * s2 * s2)


def poly_coefficients(p: ExpectedCostParams) -> np.ndarray:
    """Coefficients ``zeta[..., k-1]`` of ``y^k`` (k = 1..5) in ``y * psi(y)``."""
    u = p.mu_tilde
    s2 = p.sigma * p.sigma
    a = p.w / p.c**4
    u2 = u * u
    zeta = np.stack(
        [
            p.b + a * (u2 * u2 + 6.0 * u2 * s2 + 3.0 * s2 * s2),
            -4.0 * a * (u2 * u + 3.0 * u * s2),
            6.0 * a * (u2 + s2),
            -4.0 * a * u,
            a,
        ],
        axis=-1,
    )
    return zeta


def poly_value(zeta: np.ndarray, y) -> np.ndarray:
    """``sum_k zeta_k y^k`` by Horner."""
    y = np.asarray(y, dtype=float)
    acc = zeta[..., 4]
    for k in (3, 2, 1, 0):
        acc = acc * y + zeta[..., k]
    return acc * y


def poly_derivative(zeta: np.ndarray, y) -> np.ndarray:
    """``sum_k k zeta_k y^(k-1)`` by Horner."""
    y = np.asarray(y, dtype=float)
    acc = 5.0 * zeta[..., 4]
    for k in (3, 2, 1, 0):
        acc = acc * y + (k + 1) * zeta[..., k]
    return acc


def objective_derivative(y, p: ExpectedCostParams):
    """Marginal cost ``d/dy [y psi(y)]``."""
    return poly_derivative(poly_coefficients(p), y)

