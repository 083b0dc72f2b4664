import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from forecast_gauntlet.assignment import FORBIDDEN, as_cost_matrix, solve, solve_bruteforce

from oracles import exhaustive_assignment

F = FORBIDDEN


def random_gated(rng, max_dim=8, integer=False):
    r, c = rng.integers(0, max_dim + 1, size=2)
    costs = rng.integers(0, 4, size=(r, c)).astype(float) if integer else rng.uniform(0, 10, size=(r, c))
    costs[rng.random((r, c)) < rng.uniform(0, 0.7)] = F
    return costs


@pytest.mark.parametrize("solver", [solve, solve_bruteforce])
class TestExamples:
    def test_empty_rows(self, solver):
        res = solver(np.zeros((0, 4)))
        assert res.pairs == () and res.unmatched_cols == (0, 1, 2, 3) and res.total_cost == 0.0

    def test_empty_cols(self, solver):
        res = solver(np.zeros((3, 0)))
        assert res.pairs == () and res.unmatched_rows == (0, 1, 2)

    def test_only_complete_assignment(self, solver):
        res = solver([[1, F], [3, 1]])
        assert res.pairs == ((0, 0), (1, 1)) and res.total_cost == 2

    def test_single(self, solver):
        res = solver([[5]])
        assert res.pairs == ((0, 0),) and res.total_cost == 5

    def test_all_forbidden(self, solver):
        res = solver(np.full((3, 3), F))
        assert res.pairs == () and res.unmatched_rows == (0, 1, 2) and res.unmatched_cols == (0, 1, 2)

    def test_cardinality_before_cost(self, solver):
        # The cheap pair (0, 0) would starve row 1; two dearer pairs win.
        res = solver([[0.1, 1.9], [1.9, F]])
        assert res.pairs == ((0, 1), (1, 0)) and res.total_cost == pytest.approx(3.8)

    def test_lexicographic_ties(self, solver):
        assert solver(np.ones((3, 3))).pairs == ((0, 0), (1, 1), (2, 2))

    def test_rectangular(self, solver):
        res = solver([[4, 1, 3], [2, 0, 5]])
        assert res.pairs == ((0, 1), (1, 0)) or res.total_cost <= 3
        assert res.total_cost == 3 and res.unmatched_cols == (2,)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        as_cost_matrix([[1, -1]])
    with pytest.raises(ValueError):
        as_cost_matrix([[math.nan]])
    with pytest.raises(ValueError):
        as_cost_matrix([1, 2, 3])
    with pytest.raises(ValueError):
        solve_bruteforce(np.ones((10, 10)))


def test_matches_exhaustive_oracle_small():
    rng = np.random.default_rng(11)
    for _ in range(300):
        costs = random_gated(rng, max_dim=5, integer=bool(rng.integers(2)))
        res = solve(costs)
        count, total = exhaustive_assignment(costs)
        assert len(res.pairs) == count
        assert res.total_cost == pytest.approx(total, abs=1e-12)


def test_dense_cost_matches_scipy():
    rng = np.random.default_rng(5)
    for _ in range(200):
        r, c = rng.integers(1, 9, size=2)
        costs = rng.uniform(0, 100, size=(r, c))
        rr, cc = linear_sum_assignment(costs)
        assert solve(costs).total_cost == pytest.approx(costs[rr, cc].sum(), rel=1e-12)


def test_random_8x8_agree_with_bruteforce():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        costs = rng.uniform(0, 10, size=(8, 8))
        costs[rng.random((8, 8)) < rng.uniform(0, 0.8)] = F
        a, b = solve(costs), solve_bruteforce(costs)
        assert a == b


matrices = st.integers(0, 6).flatmap(
    lambda r: st.integers(0, 6).flatmap(
        lambda c: st.lists(
            st.lists(st.one_of(st.just(F), st.integers(0, 5).map(float), st.floats(0, 50)), min_size=c, max_size=c),
            min_size=r, max_size=r,
        ).map(lambda rows, c=c: np.array(rows, dtype=float).reshape(len(rows), c))
    )
)


@settings(max_examples=300, deadline=None)
@given(matrices)
def test_properties(costs):
    res = solve(costs)
    # One-to-one, feasible only.
    rows = [r for r, _ in res.pairs]
    cols = [c for _, c in res.pairs]
    assert len(set(rows)) == len(rows) and len(set(cols)) == len(cols)
    assert all(math.isfinite(costs[r, c]) for r, c in res.pairs)
    # Maximality: no feasible pair left between two unmatched sides.
    for r in res.unmatched_rows:
        for c in res.unmatched_cols:
            assert not math.isfinite(costs[r, c])
    assert res == solve_bruteforce(costs)


@settings(max_examples=200, deadline=None)
@given(matrices, st.randoms(use_true_random=False))
def test_permutation_invariance(costs, rnd):
    r, c = costs.shape
    pr = list(range(r))
    pc = list(range(c))
    rnd.shuffle(pr)
    rnd.shuffle(pc)
    base = solve(costs)
    perm = solve(costs[np.ix_(pr, pc)]) if r and c else solve(costs)
    assert len(perm.pairs) == len(base.pairs)
    assert perm.total_cost == pytest.approx(base.total_cost, abs=1e-9)
