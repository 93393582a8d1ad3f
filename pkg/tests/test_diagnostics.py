import math
from fractions import Fraction
from functools import lru_cache
from itertools import combinations, permutations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from countability.diagnostics import (
    effective_sample_size,
    kendall_tau,
    cross_series_correlation,
    psrf,
    split_psrf,
    summarize,
)


def brute_tau(x, y):
    conc = disc = 0
    for i, j in combinations(range(len(x)), 2):
        s = (x[i] - x[j]) * (y[i] - y[j])
        conc += s > 0
        disc += s < 0
    return Fraction(conc - disc, len(x) * (len(x) - 1) // 2)


@lru_cache(maxsize=None)
def null_taus(n):
    return [abs(brute_tau(range(n), p)) for p in permutations(range(n))]


def brute_p(y):
    # two-sided permutation p-value of tau for x = 0..n-1 against y
    null = null_taus(len(y))
    obs = abs(brute_tau(range(len(y)), y))
    return Fraction(sum(t >= obs for t in null), len(null))


class TestKendall:
    def test_examples(self):
        assert kendall_tau([1, 2, 3, 4], [10, 20, 30, 40])[0] == 1.0
        assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1])[0] == -1.0
        assert kendall_tau([1, 2, 3, 4], [1, 3, 2, 4])[0] == pytest.approx(2 / 3, abs=1e-15)

    @pytest.mark.parametrize("n", [3, 4, 5, 6])
    def test_all_permutations_match_brute_force(self, n):
        x = list(range(n))
        for y in permutations(range(n)):
            tau, p = kendall_tau(x, list(y))
            assert tau == pytest.approx(float(brute_tau(x, y)), abs=1e-15)
            assert p == pytest.approx(float(brute_p(y)), abs=1e-12)

    def test_matches_scipy_with_ties_and_large_n(self):
        rng = np.random.default_rng(0)
        for n in (8, 15, 40):
            x = rng.integers(0, 5, n).astype(float)
            y = x + rng.integers(0, 4, n)
            tau, p = kendall_tau(x, y)
            ref = stats.kendalltau(x, y, method="asymptotic")
            assert tau == pytest.approx(ref.statistic, abs=1e-12)
            assert p == pytest.approx(ref.pvalue, rel=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.permutations(list(range(10))))
    def test_exact_matches_scipy_exact(self, y):
        tau, p = kendall_tau(list(range(10)), y)
        ref = stats.kendalltau(list(range(10)), y, method="exact")
        assert tau == pytest.approx(ref.statistic, abs=1e-12)
        assert p == pytest.approx(ref.pvalue, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            kendall_tau([1, 1, 1], [1, 2, 3])
        with pytest.raises(ValueError):
            kendall_tau([1, 2], [1, 2])
        with pytest.raises(ValueError):
            kendall_tau([1, 2, 3], [1, 2])

    def test_cross_series_alias(self):
        assert cross_series_correlation([0.2, 0.3, 0.1, 0.5], [1, 2, 0, 3]) == kendall_tau([0.2, 0.3, 0.1, 0.5], [1, 2, 0, 3])


class TestEss:
    def test_white_noise(self):
        x = np.random.default_rng(1).standard_normal(20_000)
        assert effective_sample_size(x) == pytest.approx(x.size, rel=0.1)

    def test_ar1(self):
        rng = np.random.default_rng(2)
        phi, n = 0.9, 200_000
        e = rng.standard_normal(n)
        x = np.empty(n)
        x[0] = e[0]
        for i in range(1, n):
            x[i] = phi * x[i - 1] + e[i]
        assert effective_sample_size(x) == pytest.approx(n * (1 - phi) / (1 + phi), rel=0.15)

    def test_constant_is_degenerate(self):
        assert math.isnan(effective_sample_size(np.ones(100)))
        s = summarize([{"a": np.ones(50)}, {"a": np.ones(50)}])["a"]
        assert s["ess_degenerate"] and s["ess"] is None
        assert s["psrf_undefined"] and s["psrf"] is None


class TestPsrf:
    def test_identical_chains(self):
        x = np.random.default_rng(3).standard_normal(1000)
        assert psrf(np.stack([x, x])) == 1.0

    def test_detects_shifted_chains(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal(1000)
        b = rng.standard_normal(1000) + 3
        assert psrf(np.stack([a, b])) > 1.5
        assert split_psrf(np.stack([a, b])) > 1.5

    def test_split_detects_drift(self):
        rng = np.random.default_rng(5)
        drift = np.linspace(0, 4, 1000)
        chains = np.stack([rng.standard_normal(1000) + drift, rng.standard_normal(1000) + drift])
        assert split_psrf(chains) > 1.2

    def test_mixing_chains_near_one(self):
        chains = np.random.default_rng(6).standard_normal((4, 5000))
        assert psrf(chains) == pytest.approx(1.0, abs=0.01)
        assert split_psrf(chains) == pytest.approx(1.0, abs=0.01)


def test_summary_fields():
    rng = np.random.default_rng(7)
    chains = [{"r": rng.normal(size=400), "tau": rng.gamma(2, size=400)} for _ in range(2)]
    s = summarize(chains)
    pooled = np.concatenate([c["r"] for c in chains])
    assert s["r"]["median"] == pytest.approx(np.median(pooled))
    assert s["r"]["q2.5"] == pytest.approx(np.quantile(pooled, 0.025))
    for key in ("mean", "sd", "q10", "q50", "q90", "q97.5", "ess", "psrf", "split_psrf"):
        assert key in s["tau"]
    assert "psrf" not in summarize(chains[:1])["r"]
    with pytest.raises(ValueError):
        summarize([])
