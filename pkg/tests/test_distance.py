from collections import deque
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.optimize import linprog

from conftest import FIG1_COUNTS
from swnabc.distance import (
    DiscreteDistribution,
    DistanceError,
    emd,
    ground_distance,
    ground_matrix,
    levenshtein,
    remd,
    transport,
)
from swnabc.eventlog import language_from_counts

words = st.lists(st.sampled_from("abc"), max_size=5).map(tuple)


def edit_distance_bfs(s, t):
    """Fewest single-symbol insert/delete/substitute steps from s to t, by BFS."""
    alphabet = set(s) | set(t)
    seen = {s}
    queue = deque([(s, 0)])
    limit = len(s) + len(t)
    while queue:
        w, d = queue.popleft()
        if w == t:
            return d
        if len(w) > limit:
            continue
        nbrs = []
        for i in range(len(w) + 1):
            nbrs += [w[:i] + (a,) + w[i:] for a in alphabet]
        for i in range(len(w)):
            nbrs.append(w[:i] + w[i + 1:])
            nbrs += [w[:i] + (a,) + w[i + 1:] for a in alphabet]
        for x in nbrs:
            if x not in seen:
                seen.add(x)
                queue.append((x, d + 1))
    raise AssertionError("unreachable")


def integer_plan_optimum(a, b, cost):
    """Minimum over all integer transport plans of integer masses a, b."""
    m, n = cost.shape

    @lru_cache(maxsize=None)
    def best(i, remaining):
        if i == m:
            return 0.0 if not any(remaining) else np.inf
        out = np.inf
        for row in _splits(a[i], remaining):
            rest = tuple(r - x for r, x in zip(remaining, row))
            out = min(out, sum(x * cost[i, j] for j, x in enumerate(row)) + best(i + 1, rest))
        return out

    return best(0, tuple(b))


def _splits(total, caps):
    if not caps:
        if total == 0:
            yield ()
        return
    for x in range(min(total, caps[0]) + 1):
        for rest in _splits(total - x, caps[1:]):
            yield (x,) + rest


@pytest.mark.parametrize(
    "s, t, d",
    [("abc", "acb", 2), ("", "abc", 3), ("abc", "abc", 0), ("kitten", "sitting", 3), ("ab", "ba", 2)],
)
def test_levenshtein_known(s, t, d):
    assert levenshtein(tuple(s), tuple(t)) == d


@settings(max_examples=150, deadline=None)
@given(words, words)
def test_levenshtein_matches_bfs(s, t):
    assume(len(s) + len(t) <= 7)
    assert levenshtein(s, t) == edit_distance_bfs(s, t)


def test_normalized_ground():
    assert ground_distance(("a", "b", "c"), ("a", "c", "b")) == pytest.approx(2 / 3)
    assert ground_distance((), ()) == 0.0
    assert ground_distance((), ("a",)) == 1.0
    assert ground_distance(("a", "b"), ("a", "c"), "raw") == 1.0
    with pytest.raises(ValueError):
        ground_distance((), (), "manhattan")


@settings(max_examples=200, deadline=None)
@given(words, words, words)
def test_metric_axioms(x, y, z):
    for mode in ("raw", "normalized"):
        d = lambda s, t: ground_distance(s, t, mode)  # noqa: E731
        assert d(x, y) >= 0
        assert (d(x, y) == 0) == (x == y)
        assert d(x, y) == d(y, x)
        assert d(x, z) <= d(x, y) + d(y, z) + 1e-12
        if mode == "normalized":
            assert d(x, y) <= 1


def test_ground_matrix_read_only():
    g = ground_matrix([("a",)], [("b",), ("a",)])
    assert g.tolist() == [[1.0, 0.0]]
    with pytest.raises(ValueError):
        g[0, 0] = 3


def dist(pairs):
    return DiscreteDistribution.from_pairs([(tuple(t), p) for t, p in pairs])


def test_emd_identity_and_point_masses():
    p = dist([("abc", 0.15), ("acb", 0.35), ("abd", 0.15), ("adb", 0.35)])
    assert emd(p, p) == 0.0
    assert emd(dist([("abc", 1)]), dist([("acb", 1)])) == pytest.approx(2 / 3)
    assert emd(dist([("abc", 1)]), dist([("acb", 1)]), "raw") == pytest.approx(2)


def test_emd_split_mass():
    p = dist([("a", 0.5), ("b", 0.5)])
    assert emd(p, dist([("a", 1.0)]), "raw") == pytest.approx(0.5)


def test_emd_rejects_unnormalized():
    with pytest.raises(DistanceError):
        emd(dist([("a", 0.5)]), dist([("a", 1.0)]))
    with pytest.raises(DistanceError):
        emd(dist([("a", 1.5), ("b", -0.5)]), dist([("a", 1.0)]))


def test_emd_custom_ground():
    assert emd(dist([("a", 1)]), dist([("bb", 1)]), lambda s, t: 7.0) == 7.0


def random_dist(rng, size, alphabet="abc"):
    support = set()
    while len(support) < size:
        support.add(tuple(rng.choice(list(alphabet), size=rng.integers(0, 4))))
    support = sorted(support)
    return DiscreteDistribution(tuple(support), rng.dirichlet(np.ones(size)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 5), st.integers(1, 5))
def test_emd_symmetric_and_bounded(seed, m, n):
    rng = np.random.default_rng(seed)
    p, q = random_dist(rng, m), random_dist(rng, n)
    a, b = emd(p, q), emd(q, p)
    assert a == pytest.approx(b, abs=1e-9)
    assert 0 <= a <= ground_matrix(p.support, q.support).max() + 1e-12


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 5), st.integers(1, 5), st.integers(1, 7))
def test_transport_matches_integer_plan_enumeration(seed, m, n, k):
    rng = np.random.default_rng(seed)
    a = rng.multinomial(k, np.ones(m) / m)
    b = rng.multinomial(k, np.ones(n) / n)
    cost = rng.integers(0, 6, size=(m, n)) / 5.0
    # integer vertices of a totally unimodular polytope contain the optimum
    expected = integer_plan_optimum(tuple(a), tuple(b), cost) / k
    value, plan = transport(a / k, b / k, cost)
    assert value == pytest.approx(expected, abs=1e-9)
    assert np.allclose(plan.sum(axis=1), a / k) and np.allclose(plan.sum(axis=0), b / k)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 8), st.integers(1, 8))
def test_transport_matches_linprog(seed, m, n):
    rng = np.random.default_rng(seed)
    a, b = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(n))
    cost = rng.random((m, n))
    eq = np.zeros((m + n, m * n))
    for i in range(m):
        eq[i, i * n:(i + 1) * n] = 1
    for j in range(n):
        eq[m + j, j::n] = 1
    ref = linprog(cost.ravel(), A_eq=eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    assert transport(a, b, cost)[0] == pytest.approx(ref.fun, abs=1e-9)


def test_degenerate_transport():
    # equal row/column partial sums force degenerate northwest-corner bases
    a = np.full(4, 0.25)
    cost = 1.0 - np.eye(4)
    assert transport(a, a, cost)[0] == pytest.approx(0.0, abs=1e-12)
    assert transport(a, a[::-1], cost[::-1])[0] == pytest.approx(0.0, abs=1e-12)


@pytest.fixture
def fig1_log():
    return language_from_counts(FIG1_COUNTS)


def test_remd_self_zero(fig1_log):
    assert remd(fig1_log, fig1_log.probabilities) == 0.0


def test_remd_uniform_model(fig1_log):
    # brute force: masses are multiples of 1/20, so integer plans are exact
    a = np.rint(fig1_log.probabilities * 20).astype(int)
    b = np.full(4, 5)
    cost = ground_matrix(fig1_log.unique_traces, fig1_log.unique_traces)
    expected = integer_plan_optimum(tuple(a), tuple(b), cost) / 20
    assert remd(fig1_log, np.full(4, 0.25)) == pytest.approx(expected, abs=1e-12)
    # renormalization makes the scale of the model side irrelevant
    assert remd(fig1_log, np.full(4, 0.01)) == pytest.approx(expected, abs=1e-12)


def test_remd_zero_mass(fig1_log):
    assert remd(fig1_log, np.zeros(4)) == 1.0
    with pytest.raises(DistanceError):
        remd(fig1_log, np.zeros(4), ground="raw")


def test_remd_residual(fig1_log):
    half = fig1_log.probabilities / 2
    assert remd(fig1_log, half, residual=True) == pytest.approx(0.5)
    assert remd(fig1_log, half) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DistanceError):
        remd(fig1_log, fig1_log.probabilities * 2, residual=True)


def test_remd_accepts_distribution(fig1_log):
    model = dist([("acb", 0.5), ("adb", 0.5)])
    arr = np.zeros(4)
    arr[[fig1_log.index_of(("a", "c", "b")), fig1_log.index_of(("a", "d", "b"))]] = 0.5
    assert remd(fig1_log, model) == pytest.approx(remd(fig1_log, arr))
    with pytest.raises(DistanceError):
        remd(fig1_log, dist([("zz", 1.0)]))
    with pytest.raises(DistanceError):
        remd(fig1_log, np.ones(3))
