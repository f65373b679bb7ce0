import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import central_difference, monte_carlo_psi, quadrature_psi, random_cost_params
from poisonsense.costs import (
    ExpectedCostParams,
    bpr_cost,
    expected_link_cost,
    objective_derivative,
    poly_coefficients,
    poly_derivative,
    poly_value,
)


def params(**kw):
    base = dict(b=0.0, w=1.0, c=1.0, mu_tilde=0.0, sigma=0.0)
    base.update(kw)
    return ExpectedCostParams(**base)


def test_bpr_examples():
    assert bpr_cost(0.0, 0.0, 1.0, 0.15, 2.0) == 1.0
    assert bpr_cost(1.0, 1.0, 1.0, 0.15, 2.0) == pytest.approx(1.15)
    assert bpr_cost(2.0, 2.0, 1.0, 0.15, 2.0) == pytest.approx(3.4)


def test_expected_cost_examples():
    assert expected_link_cost(1.0, params(sigma=1.0)) == pytest.approx(10.0)
    # zero mean offset: central fourth moment only
    p = params(b=2.0, w=3.0, c=2.0, mu_tilde=5.0, sigma=0.5)
    assert expected_link_cost(5.0, p) == pytest.approx(2.0 + 3.0 * 3 * 0.5**4 / 2.0**4)
    # deterministic limit
    q = params(b=1.0, w=0.15, c=10.0, mu_tilde=-7.0, sigma=0.0)
    for y in (0.0, 3.0, 12.5):
        assert expected_link_cost(y, q) == bpr_cost(y, 7.0, 1.0, 0.15, 10.0)


def test_coefficient_examples():
    np.testing.assert_allclose(poly_coefficients(params(b=2.0, w=3.0, c=2.0)), [2, 0, 0, 0, 3 / 16])
    np.testing.assert_allclose(poly_coefficients(params(sigma=1.0)), [3, 0, 6, 0, 1])


def test_derivative_examples():
    p = params(b=1.5, w=2.0, c=3.0, mu_tilde=-1.0, sigma=0.7)
    assert objective_derivative(0.0, p) == pytest.approx(poly_coefficients(p)[0])
    assert objective_derivative(1.0, params()) == pytest.approx(5.0)


def test_params_validation():
    with pytest.raises(ValueError):
        params(c=0.0)
    with pytest.raises(ValueError):
        params(sigma=-1.0)


def test_polynomial_matches_quadrature(rng):
    for _ in range(200):
        kw = random_cost_params(rng)
        zeta = poly_coefficients(ExpectedCostParams(**kw))
        for y in rng.uniform(0, 10 * kw["c"], 20):
            ref = y * quadrature_psi(y, **kw)
            assert abs(poly_value(zeta, y) - ref) <= 1e-9 * (1 + abs(ref))


def test_derivative_matches_finite_differences(rng):
    for _ in range(200):
        kw = random_cost_params(rng)
        p = ExpectedCostParams(**kw)
        y = rng.uniform(0, 10 * kw["c"])
        h = 1e-5 * max(1.0, y)
        fd = central_difference(lambda v: v * expected_link_cost(v, p), y, h)
        assert objective_derivative(y, p) == pytest.approx(fd, rel=1e-6)


def test_expected_cost_matches_monte_carlo(rng):
    hits = 0
    n = 30
    for _ in range(n):
        kw = random_cost_params(rng)
        y = rng.uniform(0, 3 * kw["c"])
        mean, se = monte_carlo_psi(y, rng=rng, n=200_000, **kw)
        hits += abs(expected_link_cost(y, ExpectedCostParams(**kw)) - mean) <= 4 * se + 1e-12 * abs(mean)
    assert hits >= n - 1


@settings(max_examples=100, deadline=None)
@given(
    st.floats(0, 10), st.floats(0.01, 5), st.floats(0.5, 50),
    st.floats(0, 1), st.floats(0, 1),
)
def test_convex_when_mean_below_report(b, w, c, u, s):
    """With mu_tilde <= 0 the objective term is convex on y >= 0."""
    p = ExpectedCostParams(b, w, c, -3 * c * u, c * s)
    y = np.linspace(0, 5 * c, 401)
    v = y * expected_link_cost(y, p)
    second = v[2:] - 2 * v[1:-1] + v[:-2]
    assert second.min() >= -1e-8 * (1 + np.abs(v).max())


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 10), st.floats(0.01, 5), st.floats(0.5, 50), st.floats(-100, 100), st.floats(0, 30), st.floats(0, 200))
def test_expected_cost_at_least_free_flow(b, w, c, u, s, y):
    assert expected_link_cost(y, ExpectedCostParams(b, w, c, u, s)) >= b


def test_three_representations_agree(rng):
    b, w, c = rng.uniform(0, 5, 50), rng.uniform(0.1, 2, 50), rng.uniform(1, 20, 50)
    p = ExpectedCostParams(b, w, c, rng.uniform(-30, 30, 50), rng.uniform(0, 10, 50))
    y = rng.uniform(0, 40, 50)
    zeta = poly_coefficients(p)
    np.testing.assert_allclose(poly_value(zeta, y), y * expected_link_cost(y, p), rtol=1e-12, atol=1e-9)
    np.testing.assert_array_equal(objective_derivative(y, p), poly_derivative(zeta, y))

