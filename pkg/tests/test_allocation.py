import io
import itertools
import time

import numpy as np
import pytest

from oracles import dense_divergence, enumerate_allocations
from poisonsense.allocation import (
    AllocationError,
    DifferenceMatrix,
    difference_matrix,
    evaluate,
    solve_lexicographic,
    solve_max_min,
)
from poisonsense.attacks import AttackType
from poisonsense.partition import Partition


def random_mip(rng, n_g=None, n_p=None):
    n_g = n_g or int(rng.integers(1, 13))
    n_p = n_p or int(rng.integers(1, 11))
    M = rng.exponential(1.0, size=(n_p, n_g)) * (rng.random((n_p, n_g)) < 0.6)
    if rng.random() < 0.3:
        M = np.round(M)  # integer data produces many ties
    q = rng.integers(1, 4, n_g).astype(float) if rng.random() < 0.5 else np.ones(n_g)
    gamma = float(rng.uniform(0, q.sum()))
    return M, q, gamma


def test_matches_enumeration(rng):
    for _ in range(60):
        M, q, gamma = random_mip(rng)
        alpha, x_min, lex_alpha, avg, x_lex = enumerate_allocations(M, q, gamma)
        a, x = solve_max_min(M, q, gamma)
        assert a == pytest.approx(alpha, abs=1e-12) and x == x_min
        lex = solve_lexicographic(M, q, gamma)
        assert lex.x == x_lex
        assert lex.alpha == pytest.approx(lex_alpha, abs=1e-12)
        assert lex.avg == pytest.approx(avg, abs=1e-12)
        assert lex.cost <= gamma
        assert lex.alpha >= alpha - 1e-9 * (1 + alpha)


def test_full_budget_selects_everything(rng):
    M = rng.uniform(0, 1, (4, 5))
    q = np.ones(5)
    alpha, x = solve_max_min(M, q, 5.0)
    assert x == (1,) * 5 and alpha == pytest.approx((M.sum(axis=1)).min())


def test_budget_below_every_cost():
    M = np.ones((2, 3))
    alpha, x = solve_max_min(M, np.array([2.0, 3.0, 4.0]), 1.0)
    assert (alpha, x) == (0.0, (0, 0, 0))


def test_single_group():
    assert solve_lexicographic(np.array([[2.0]]), np.ones(1), 1.0).x == (1,)


def test_tie_break_prefers_first_group():
    a = solve_lexicographic(np.array([[1.0, 1.0]]), np.ones(2), 1.0)
    assert a.x == (1, 0)


def test_adding_an_affordable_group_never_lowers_alpha(rng):
    for _ in range(20):
        M, q, gamma = random_mip(rng)
        a1, _ = solve_max_min(M, q, gamma)
        a2, _ = solve_max_min(M, q, gamma + q.max())
        assert a2 >= a1


def test_sigma_scaling(rng):
    for _ in range(10):
        n_l, n_g = 8, 4
        mus = rng.normal(0, 10, (3, n_l))
        sig = rng.uniform(0.5, 2, n_l)
        part = Partition(tuple(tuple(range(2 * g, 2 * g + 2)) for g in range(n_g)), (1.0,) * n_g, n_l)
        pairs = [(0, 1), (0, 2), (1, 2)]
        M1 = difference_matrix([AttackType(i, mus[i], sig) for i in range(3)], part, pairs).M
        M2 = difference_matrix([AttackType(i, mus[i], 3.0 * sig) for i in range(3)], part, pairs).M
        np.testing.assert_allclose(M2, M1 / 9.0, rtol=1e-12)
        assert solve_lexicographic(M1, part.q, 2).x == solve_lexicographic(M2, part.q, 2).x


def test_difference_examples():
    part = Partition(((0,), (1,)), (1.0, 1.0), 2)
    tp = AttackType(0, [3.0, 1.0], [np.sqrt(2), 1.0])
    tq = AttackType(1, [0.0, 1.0], [np.sqrt(2), 2.0])
    dm = difference_matrix([tp, tq], part, [(0, 1)])
    assert dm.M[0, 0] == pytest.approx(2.25, rel=1e-15)
    assert dm.M[0, 1] == 0.0


def test_difference_matches_dense_pseudoinverse(rng):
    for _ in range(30):
        n_l = int(rng.integers(2, 9))
        n_g = int(rng.integers(1, n_l + 1))
        labels = np.concatenate([np.arange(n_g), rng.integers(-1, n_g, n_l - n_g)])
        rng.shuffle(labels)
        groups = tuple(tuple(int(i) for i in np.flatnonzero(labels == g)) for g in range(n_g))
        part = Partition(groups, (1.0,) * n_g, n_l)
        types = [AttackType(i, rng.normal(0, 5, n_l), rng.uniform(0.1, 3, n_l)) for i in range(3)]
        pairs = [(0, 1), (0, 2), (1, 2)]
        M = difference_matrix(types, part, pairs).M
        for r, (p, q) in enumerate(pairs):
            for g, links in enumerate(groups):
                ref = dense_divergence(types[p].mu, types[p].variance, types[q].mu, types[q].variance, list(links))
                assert M[r, g] == pytest.approx(ref, rel=1e-10)


def test_column_additivity(rng):
    types = [AttackType(i, rng.normal(0, 5, 6), rng.uniform(0.1, 3, 6)) for i in range(2)]
    split = Partition(((0, 1), (2, 3, 4), (5,)), (1.0,) * 3, 6)
    merged = Partition(((0, 1, 2, 3, 4), (5,)), (1.0,) * 2, 6)
    a = difference_matrix(types, split, [(0, 1)]).M
    b = difference_matrix(types, merged, [(0, 1)]).M
    assert b[0, 0] == a[0, 0] + a[0, 1]


def test_rejections():
    with pytest.raises(AllocationError):
        solve_max_min(np.zeros((0, 3)), np.ones(3), 1.0)
    with pytest.raises(AllocationError):
        solve_max_min(np.ones((1, 2)), np.array([1.0, 0.0]), 1.0)
    with pytest.raises(AllocationError):
        solve_max_min(-np.ones((1, 2)), np.ones(2), 1.0)
    with pytest.raises(AllocationError):
        difference_matrix([], Partition(((0,),), (1.0,), 1), [])


def test_csv_round_trip(rng):
    dm = DifferenceMatrix(rng.uniform(0, 10, (3, 4)), ((0, 1), (0, 2), (1, 2)), (0, 1, 2, 3))
    buf = io.StringIO()
    dm.write_csv(buf)
    buf.seek(0)
    back = DifferenceMatrix.read_csv(buf)
    np.testing.assert_array_equal(back.M, dm.M)
    assert back.pairs == dm.pairs and back.groups == dm.groups


def test_evaluate():
    a = evaluate(np.array([[1.0, 2.0], [3.0, 0.0]]), np.array([1.0, 2.0]), (1, 1))
    assert (a.alpha, a.avg, a.cost, a.selected) == (3.0, 3.0, 3.0, (0, 1))


def test_zone_structured_27_groups_is_fast(rng):
    M = zone_like_matrix(rng)
    t = time.perf_counter()
    for gamma in (27, 9, 5):
        solve_lexicographic(M, np.ones(27), gamma)
    assert time.perf_counter() - t < 60


def zone_like_matrix(rng, n_a=27):
    """Divergences of one-group-per-type attacks: pair (i, j) only sees groups i and j."""
    labels = np.sort(rng.integers(0, 5, n_a))
    pairs = [(i, j) for i, j in itertools.combinations(range(n_a), 2) if labels[i] != labels[j]]
    M = np.zeros((len(pairs), n_a))
    strength = rng.uniform(1e4, 1e6, n_a)
    for r, (i, j) in enumerate(pairs):
        M[r, i], M[r, j] = strength[i], strength[j]
    return M
