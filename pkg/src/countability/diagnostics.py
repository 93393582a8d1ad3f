"""Posterior summaries, convergence aids and Kendall's tau."""
from __future__ import annotations

import math
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy import stats

SUMMARY_QUANTILES = (0.025, 0.10, 0.50, 0.90, 0.975)


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalized autocorrelation at every lag, via FFT."""
    x = np.asarray(x, float)
    n = x.size
    xc = x - x.mean()
    f = np.fft.rfft(xc, 2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n]
    return acov / acov[0]


def effective_sample_size(x) -> float:
    """ESS of one chain with Geyer's initial positive sequence truncation.

    Returns ``nan`` for a constant (degenerate) chain.
    """
    x = np.asarray(x, float)
    n = x.size
    if n < 4 or np.ptp(x) == 0:
        return float("nan")
    rho = autocorrelation(x)
    total = 0.0
    prev = math.inf
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            break
        # initial monotone sequence
        pair = min(pair, prev)
        total += pair
        prev = pair
        k += 1
    tau = 2.0 * total - 1.0
    return float(n / max(tau, 1.0 / math.log10(max(n, 10))))


def psrf(chains: np.ndarray) -> float:
    """Potential scale reduction factor for an (m, n) array of chains.

    Within-chain variances use the ``1/n`` estimator, so identical chains
    give exactly 1.  Returns ``nan`` when all chains are constant.
    """
    chains = np.asarray(chains, float)
    m, n = chains.shape
    if m < 2:
        return float("nan")
    within = float(np.mean(np.var(chains, axis=1)))
    if within == 0:
        return float("nan")
    means = chains.mean(axis=1)
    between = n * float(np.var(means, ddof=1))
    return math.sqrt((within + between / n) / within)


def split_psrf(chains: np.ndarray) -> float:
    """Split-chain R-hat: each chain is halved before computing :func:`psrf`
    with the classical ``(n-1)/n`` pooling."""
    chains = np.asarray(chains, float)
    m, n = chains.shape
    half = n // 2
    if m < 2 or half < 2:
        return float("nan")
    parts = np.concatenate([chains[:, :half], chains[:, n - half:]], axis=0)
    w = float(np.mean(np.var(parts, axis=1, ddof=1)))
    if w == 0:
        return float("nan")
    b = half * float(np.var(parts.mean(axis=1), ddof=1))
    var_plus = (half - 1) / half * w + b / half
    return math.sqrt(var_plus / w)


def summarize(chains: Sequence[dict[str, np.ndarray]]) -> dict[str, dict]:
    """Per-parameter posterior summary over one or more chains.

    ``chains`` holds one mapping per chain from parameter name to its
    draws.  Every entry reports mean, sd, the quantiles in
    :data:`SUMMARY_QUANTILES`, ESS (summed over chains) with a degeneracy
    flag, and, with two or more chains, ``psrf`` and ``split_psrf``.
    """
    if not chains:
        raise ValueError("need at least one chain")
    names = list(chains[0])
    out = {}
    for name in names:
        per_chain = [np.asarray(c[name], float) for c in chains]
        pooled = np.concatenate(per_chain)
        if pooled.size == 0:
            raise ValueError("empty chain")
        ess_values = [effective_sample_size(x) for x in per_chain]
        degenerate = any(math.isnan(e) for e in ess_values)
        entry = {
            "mean": float(pooled.mean()),
            "sd": float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0,
            "median": float(np.median(pooled)),
        }
        for q, v in zip(SUMMARY_QUANTILES, np.quantile(pooled, SUMMARY_QUANTILES)):
            entry[f"q{q * 100:g}"] = float(v)
        entry["ess"] = None if degenerate else float(sum(ess_values))
        entry["ess_degenerate"] = degenerate
        if len(per_chain) >= 2:
            n = min(x.size for x in per_chain)
            stacked = np.stack([x[:n] for x in per_chain])
            r = psrf(stacked)
            sr = split_psrf(stacked)
            entry["psrf"] = None if math.isnan(r) else r
            entry["split_psrf"] = None if math.isnan(sr) else sr
            entry["psrf_undefined"] = math.isnan(r)
        out[name] = entry
    return out


# -- Kendall's tau --------------------------------------------------------------

def _pair_counts(x: np.ndarray, y: np.ndarray) -> tuple[int, int, int, int]:
    # concordant, discordant, pairs tied in x only-or-both, pairs tied in y
    conc = disc = tie_x = tie_y = 0
    for i, j in combinations(range(x.size), 2):
        dx = np.sign(x[i] - x[j])
        dy = np.sign(y[i] - y[j])
        if dx == 0:
            tie_x += 1
        if dy == 0:
            tie_y += 1
        if dx * dy > 0:
            conc += 1
        elif dx * dy < 0:
            disc += 1
    return conc, disc, tie_x, tie_y


def _inversion_counts(n: int) -> list[int]:
    # number of permutations of n items with k inversions, k = 0..n(n-1)/2
    counts = [1]
    for m in range(2, n + 1):
        new = [0] * (len(counts) + m - 1)
        for k, c in enumerate(counts):
            for j in range(m):
                new[k + j] += c
        counts = new
    return counts


def _tie_sums(values: np.ndarray) -> tuple[float, float, float]:
    _, cnt = np.unique(values, return_counts=True)
    t = cnt.astype(float)
    return (float(np.sum(t * (t - 1))), float(np.sum(t * (t - 1) * (t - 2))),
            float(np.sum(t * (t - 1) * (2 * t + 5))))


def kendall_tau(x, y) -> tuple[float, float]:
    """Kendall's tau-b with a two-sided p-value.

    The p-value is exact (permutation distribution of the discordance count)
    for n <= 12 without ties, and from the tie-corrected normal approximation
    otherwise.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-d and of equal length")
    n = x.size
    if n < 3:
        raise ValueError("need at least 3 pairs")
    conc, disc, tie_x, tie_y = _pair_counts(x, y)
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - tie_x) * (n0 - tie_y))
    if denom == 0:
        raise ValueError("tau is undefined when either series is constant")
    s = conc - disc
    tau = s / denom
    if n <= 12 and tie_x == 0 and tie_y == 0:
        counts = _inversion_counts(n)
        total = math.factorial(n)
        # S = n0 - 2 * inversions
        tail = sum(c for k, c in enumerate(counts) if abs(n0 - 2 * k) >= abs(s))
        p = min(1.0, tail / total)
    else:
        v1x, v2x, v0x = _tie_sums(x)
        v1y, v2y, v0y = _tie_sums(y)
        var_s = ((n * (n - 1) * (2 * n + 5) - v0x - v0y) / 18.0
                 + v1x * v1y / (2.0 * n * (n - 1))
                 + v2x * v2y / (9.0 * n * (n - 1) * (n - 2)))
        p = float(2.0 * stats.norm.sf(abs(s) / math.sqrt(var_s))) if var_s > 0 else 1.0
    return float(tau), float(p)


def cross_series_correlation(a_series_1, a_series_2) -> tuple[float, float]:
    """Kendall's tau-b between two countability series (e.g. posterior means of a_t in two areas)."""
    return kendall_tau(a_series_1, a_series_2)
