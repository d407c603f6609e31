import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import chisquare, norm

from conftest import FIG1_COUNTS, FIG1_WEIGHTS, chain, fig1
from swnabc.abc import (
    ABCConfig,
    AttemptCapExceeded,
    Population,
    Scorer,
    _search_kernel,
    adaptive_tolerance,
    kernel_density,
    kernel_log_density,
    kernel_sample,
    kernel_update,
    rejection_sample,
    score,
    smc_discover,
)
from swnabc.eventlog import language_from_counts


def test_adaptive_tolerance_is_median():
    assert adaptive_tolerance([0.3, 0.1, 0.2]) == 0.2
    assert adaptive_tolerance([0.1, 0.2, 0.3, 0.5]) == 0.25


def test_kernel_update():
    same = np.tile([0.4, 0.7], (5, 1))
    assert kernel_update(same, np.full(5, 0.2)).tolist() == [1e-6, 1e-6]
    split = np.array([[0.0], [1.0]])
    assert kernel_update(split, np.array([0.5, 0.5])) == pytest.approx([0.5])
    # deltas need not arrive normalized
    assert kernel_update(split, np.array([3.0, 1.0])) == pytest.approx([2 * 0.75 * 0.25])


def test_kernel_sample_bounds_and_reproducibility():
    rng = np.random.default_rng(0)
    center = np.array([1e-9, 0.5, 1.0])
    xs = np.array([kernel_sample(center, np.full(3, 0.5), rng) for _ in range(2000)])
    assert xs.min() >= 1e-9 and xs.max() <= 1.0
    a = kernel_sample(center, np.full(3, 0.1), np.random.default_rng(5))
    b = kernel_sample(center, np.full(3, 0.1), np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_kernel_concentrates_with_small_variance():
    rng = np.random.default_rng(1)
    xs = np.array([kernel_sample([0.3, 0.8], [1e-6, 1e-6], rng) for _ in range(500)])
    assert np.abs(xs - [0.3, 0.8]).max() < 0.01


@pytest.mark.parametrize("center, var", [(0.5, 0.01), (0.05, 0.2), (0.99, 1e-3), (0.5, 2.0)])
def test_kernel_density_integrates_to_one(center, var):
    f = lambda x: kernel_density(np.array([x]), np.array([center]), np.array([var]))  # noqa: E731
    total, _ = integrate.quad(f, 1e-9, 1.0, points=[center], limit=200, epsabs=1e-12)
    assert total == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.01, 1.0))
def test_kernel_density_symmetric_away_from_bounds(x, c, var):
    # truncation normalizers differ, so symmetry holds for the untruncated exponent only
    lx = kernel_log_density(np.array([x]), np.array([c]), np.array([var]))[0]
    lc = kernel_log_density(np.array([c]), np.array([x]), np.array([var]))[0]
    sd = np.sqrt(var)
    zx = np.log(norm.cdf((1 - c) / sd) - norm.cdf((1e-9 - c) / sd))
    zc = np.log(norm.cdf((1 - x) / sd) - norm.cdf((1e-9 - x) / sd))
    assert lx + zx == pytest.approx(lc + zc, abs=1e-9)


def test_score_deterministic(fig1_net, fig1_lang):
    assert score(fig1_net, fig1_lang, FIG1_WEIGHTS, seed=4) == score(fig1_net, fig1_lang, FIG1_WEIGHTS, seed=4)
    assert score(fig1_net, fig1_lang, FIG1_WEIGHTS, width=0.01, seed=4) < 0.02


def test_score_zero_acceptance_is_one(fig1_lang):
    assert score(chain("a", "b"), fig1_lang, [0.5, 0.5], max_runs=2000) == 1.0


def test_rejection_with_eps_one_never_rejects(fig1_net, fig1_lang):
    pop = rejection_sample(fig1_net, fig1_lang, 10, 1.0, seed=1)
    assert pop.attempts == 10
    assert pop.weights.shape == (10, 5) and np.all((pop.weights >= 1e-9) & (pop.weights <= 1))
    assert np.allclose(pop.deltas, 0.1)


def test_rejection_with_eps_zero_hits_cap(fig1_net, fig1_lang):
    with pytest.raises(AttemptCapExceeded, match="eps1"):
        rejection_sample(fig1_net, fig1_lang, 2, 0.0, seed=1, rejection_attempts=20)


def test_rejection_respects_eps(fig1_net, fig1_lang):
    pop = rejection_sample(fig1_net, fig1_lang, 10, 0.5, seed=2)
    assert np.all(pop.scores <= 0.5)
    assert pop.attempts >= 10


class _Constant:
    k = 1
    runs = 0

    def __call__(self, w, seed):
        return 0.0


def test_ancestor_selection_follows_deltas():
    centers = np.array([[0.1], [0.4], [0.7], [0.95]])
    deltas = np.array([0.1, 0.2, 0.3, 0.4])
    prev = Population(2, centers, np.zeros(4), deltas, 0.5, 4, 0)
    cfg = ABCConfig(seed=3)
    n = 20_000
    picks = np.zeros(4)
    for slot in range(n):
        w, *_ = _search_kernel(_Constant(), cfg, 3, slot, prev, np.array([1e-8]), 1.0)
        picks[np.argmin(np.abs(centers[:, 0] - w[0]))] += 1
    assert chisquare(picks, deltas * n).pvalue > 1e-3


@pytest.fixture(scope="module")
def fig1_report():
    return smc_discover(fig1(), language_from_counts(FIG1_COUNTS), particles=12, max_layers=4, zeta=1e-9, seed=7)


def test_tolerances_strictly_decrease(fig1_report):
    t = fig1_report.tolerances
    assert t[0] == 1.0 and all(a > b for a, b in zip(t, t[1:]))
    for p in fig1_report.layers:
        assert abs(p.deltas.sum() - 1) < 1e-12 and np.all(p.deltas > 0)
        if p.layer > 1:
            assert np.all(p.scores < p.tolerance)


def test_report_shape(fig1_report):
    d = fig1_report.to_dict()
    assert d["transitions"] == ["ta", "tb", "tc", "td", "tau"]
    assert d["best"]["score"] == min(float(p.scores.min()) for p in fig1_report.layers)
    rows = list(fig1_report.posterior_rows())
    assert len(rows) == 12 * len(fig1_report.layers) and len(rows[0]) == 2 + 5 + 2
    assert fig1_report.total_runs > 0


def test_discover_deterministic(fig1_net, fig1_lang):
    a = smc_discover(fig1_net, fig1_lang, particles=6, max_layers=3, seed=5)
    b = smc_discover(fig1_net, fig1_lang, particles=6, max_layers=3, seed=5)
    assert np.array_equal(a.best_weights, b.best_weights) and a.tolerances == b.tolerances


def test_parallel_workers_match_serial(fig1_net, fig1_lang):
    a = smc_discover(fig1_net, fig1_lang, particles=6, max_layers=2, seed=5)
    b = smc_discover(fig1_net, fig1_lang, particles=6, max_layers=2, seed=5, workers=3)
    assert np.array_equal(a.final.weights, b.final.weights)
    assert a.total_runs == b.total_runs


def test_large_zeta_stops_after_second_layer(fig1_net, fig1_lang):
    r = smc_discover(fig1_net, fig1_lang, particles=6, zeta=1.0, seed=2)
    assert len(r.layers) == 2 and r.stop_reason == "improvement_below_zeta"


def test_attempt_cap_in_smc_layer(fig1_net, fig1_lang):
    r = smc_discover(fig1_net, fig1_lang, particles=6, zeta=1e-9, seed=2, smc_attempts=1, max_layers=50)
    assert r.stop_reason == "attempt_cap" and r.warnings


@pytest.mark.parametrize("bad", [{"particles": 1}, {"eps1": 1.5}, {"zeta": 0}, {"max_layers": 0}])
def test_config_check(bad):
    with pytest.raises(ValueError):
        ABCConfig(**bad).check()


def test_scorer_counts_runs(fig1_net, fig1_lang):
    s = Scorer(fig1_net, fig1_lang)
    s(np.array(FIG1_WEIGHTS), 0)
    assert s.runs >= 1000
