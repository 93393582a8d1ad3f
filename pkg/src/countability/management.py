"""One-year-ahead harvest analysis from posterior draws.

Every posterior draw is pushed through the harvest step and then the
breeding step of the female line.  The standard normal innovations are
drawn once per :class:`HarvestPredictor`, so all harvest levels are compared
under common random numbers and every quantile is non-increasing in H.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .model import BREEDING_FRACTION, HARVEST_FRACTION

KINDS = ("stable", "hunter_biased", "forestry_biased")
DEFAULT_QUANTILES = (0.1, 0.5, 0.9)
BISECTION_TOL = 0.5


class InfeasibleStrategy(ValueError):
    """No harvest in [0, n_now) meets the strategy."""


@dataclass(frozen=True)
class StrategySpec:
    """A harvest goal for next year's female population.

    ``stable`` aims the median at ``target``; ``hunter_biased`` wants
    ``P(N >= target) >= prob``; ``forestry_biased`` wants
    ``P(N <= target) >= prob``.
    """

    kind: str
    target: float
    prob: float
    current_female_pop: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.target > 0:
            raise ValueError("target must be positive")
        if not 0 < self.prob < 1:
            raise ValueError("prob must lie in (0, 1)")
        if not self.current_female_pop > 0:
            raise ValueError("current_female_pop must be positive")


@dataclass(frozen=True)
class PosteriorSample:
    """The parameters needed for prediction, one entry per retained draw."""

    r: np.ndarray
    k: np.ndarray
    sigma_f: np.ndarray
    sigma_m: np.ndarray | None = None

    @classmethod
    def from_mapping(cls, draws: Mapping[str, Sequence[float]]) -> "PosteriorSample":
        """Build from decoded draw columns (``r``, ``sigma_F``, optional ``K`` and ``sigma_M``)."""
        missing = [c for c in ("r", "sigma_F") if c not in draws]
        if missing:
            raise KeyError(f"posterior draws lack column(s): {', '.join(missing)}")
        r = np.asarray(draws["r"], float)
        k = np.asarray(draws["K"], float) if "K" in draws else np.zeros_like(r)
        sm = np.asarray(draws["sigma_M"], float) if "sigma_M" in draws else None
        return cls(r, k, np.asarray(draws["sigma_F"], float), sm)

    def __post_init__(self):
        n = np.size(self.r)
        if n == 0:
            raise ValueError("posterior draws are empty")
        shapes = {np.shape(self.r), np.shape(self.k), np.shape(self.sigma_f)}
        if self.sigma_m is not None:
            shapes.add(np.shape(self.sigma_m))
        if len(shapes) != 1 or np.ndim(self.r) != 1:
            raise ValueError("posterior columns must be 1-d and of equal length")
        if np.any(np.asarray(self.sigma_f) < 0):
            raise ValueError("sigma_F draws must be nonnegative")

    def __len__(self) -> int:
        return int(np.size(self.r))

    def plug_in(self) -> "PosteriorSample":
        """Single-draw sample at the posterior medians."""
        med = lambda v: np.array([np.median(v)])  # noqa: E731
        sm = None if self.sigma_m is None else med(self.sigma_m)
        return PosteriorSample(med(self.r), med(self.k), med(self.sigma_f), sm)


def _as_sample(posterior) -> PosteriorSample:
    if isinstance(posterior, PosteriorSample):
        return posterior
    return PosteriorSample.from_mapping(posterior)


def _step(n_now, harvest, r, k, sigma, z_h, z_b):
    # harvest then breeding for one sex line (female: own recruitment)
    post = np.exp(math.log(n_now - harvest) + math.sqrt(HARVEST_FRACTION) * sigma * z_h)
    rate = np.exp(r - k * np.log(post))
    return post, np.exp(np.log1p(rate) + np.log(post) + math.sqrt(BREEDING_FRACTION) * sigma * z_b)


class HarvestPredictor:
    """Next-year female abundance as a function of this year's harvest.

    Parameters
    ----------
    posterior : PosteriorSample or mapping of draw columns
    n_now : float
        Current (pre-hunt) female population.
    n_rep : int
        Replicates simulated per posterior draw.
    rng : numpy.random.Generator, optional
        Source of the shared innovations.
    plug_in : bool
        Use posterior medians instead of the full draws.
    """

    def __init__(self, posterior, n_now: float, n_rep: int = 100,
                 rng: np.random.Generator | None = None, plug_in: bool = False):
        if not n_now > 0:
            raise ValueError("n_now must be positive")
        if n_rep < 1:
            raise ValueError("n_rep must be at least 1")
        sample = _as_sample(posterior)
        self.sample = sample.plug_in() if plug_in else sample
        self.n_now = float(n_now)
        self.n_rep = int(n_rep)
        rng = np.random.default_rng() if rng is None else rng
        shape = (len(self.sample), self.n_rep)
        self._z = rng.standard_normal((4,) + shape)

    def _check(self, harvest: float):
        if harvest < 0:
            raise ValueError("harvest must be nonnegative")
        if harvest >= self.n_now:
            raise ValueError(f"harvest {harvest} must be below the current population {self.n_now}")

    def outcomes(self, harvest: float) -> np.ndarray:
        """Flat array of simulated N^F next year."""
        self._check(harvest)
        s = self.sample
        _, nxt = _step(self.n_now, harvest, s.r[:, None], s.k[:, None], s.sigma_f[:, None],
                       self._z[0], self._z[1])
        return nxt.ravel()

    def male_outcomes(self, harvest: float, n_now_male: float, harvest_male: float = 0.0) -> np.ndarray:
        """Flat array of simulated N^M next year (requires ``sigma_M`` draws)."""
        self._check(harvest)
        if self.sample.sigma_m is None:
            raise ValueError("male prediction needs sigma_M draws")
        if not 0 <= harvest_male < n_now_male:
            raise ValueError("male harvest must lie in [0, n_now_male)")
        s = self.sample
        post_f, _ = _step(self.n_now, harvest, s.r[:, None], s.k[:, None], s.sigma_f[:, None],
                          self._z[0], self._z[1])
        sm = s.sigma_m[:, None]
        post_m = np.exp(math.log(n_now_male - harvest_male) + math.sqrt(HARVEST_FRACTION) * sm * self._z[2])
        rate = np.exp(s.r[:, None] - s.k[:, None] * np.log(post_f))
        loc = np.log(post_m + rate * post_f)
        return np.exp(loc + math.sqrt(BREEDING_FRACTION) * sm * self._z[3]).ravel()

    def quantiles(self, harvest: float, qs: Sequence[float] = DEFAULT_QUANTILES) -> dict[float, float]:
        vals = np.quantile(self.outcomes(harvest), qs)  # type-7 (linear) interpolation
        return {float(q): float(v) for q, v in zip(qs, vals)}

    def prob_at_least(self, harvest: float, target: float) -> float:
        return float(np.mean(self.outcomes(harvest) >= target))

    def prob_at_most(self, harvest: float, target: float) -> float:
        return float(np.mean(self.outcomes(harvest) <= target))


@dataclass(frozen=True)
class NextYearPrediction:
    harvest: float
    quantiles: dict[float, float]
    male_quantiles: dict[float, float] | None = None


def predict_next_year(posterior, n_now: float, harvest: float, n_rep: int = 100,
                      rng: np.random.Generator | None = None,
                      quantiles: Sequence[float] = DEFAULT_QUANTILES, *,
                      plug_in: bool = False, n_now_male: float | None = None,
                      harvest_male: float = 0.0) -> NextYearPrediction:
    """Quantiles of next year's female (and optionally male) population.

    Examples
    --------
    >>> draws = {"r": [math.log(0.2)], "sigma_F": [0.0]}
    >>> predict_next_year(draws, 500, 100, n_rep=5).quantiles[0.5]
    480.0...
    """
    qs = tuple(sorted(set(DEFAULT_QUANTILES) | set(quantiles)))
    pred = HarvestPredictor(posterior, n_now, n_rep, rng, plug_in)
    fq = pred.quantiles(harvest, qs)
    mq = None
    if n_now_male is not None:
        vals = np.quantile(pred.male_outcomes(harvest, n_now_male, harvest_male), qs)
        mq = {float(q): float(v) for q, v in zip(qs, vals)}
    return NextYearPrediction(float(harvest), fq, mq)


def _bisect(ok, lo: float, hi: float, tol: float) -> tuple[float, float]:
    # ok(lo) is True, ok(hi) is False; shrink until hi - lo <= tol
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo, hi


def solve_harvest_with(pred: HarvestPredictor, strategy: StrategySpec, tol: float = BISECTION_TOL) -> float:
    """Solve a strategy on an existing predictor (shared random numbers)."""
    n = pred.n_now
    if not math.isclose(strategy.current_female_pop, n):
        raise ValueError("strategy population differs from the predictor's")
    hi = n * (1.0 - 1e-9)
    target, prob = strategy.target, strategy.prob
    if strategy.kind == "stable":
        above = lambda h: pred.quantiles(h, (0.5,))[0.5] >= target  # noqa: E731
        if not above(0.0):
            raise InfeasibleStrategy(
                f"median next year at zero harvest is {pred.quantiles(0.0, (0.5,))[0.5]:.1f}, below target {target}")
        if above(hi):
            raise InfeasibleStrategy(f"median stays above target {target} for every harvest below {n}")
        lo, up = _bisect(above, 0.0, hi, tol)
        return 0.5 * (lo + up)
    if strategy.kind == "hunter_biased":
        ok = lambda h: pred.prob_at_least(h, target) >= prob  # noqa: E731
        if not ok(0.0):
            raise InfeasibleStrategy(
                f"P(N >= {target}) = {pred.prob_at_least(0.0, target):.3f} < {prob} even with no harvest")
        if ok(hi):
            return hi
        return _bisect(ok, 0.0, hi, tol)[0]
    fails = lambda h: pred.prob_at_most(h, target) < prob  # noqa: E731
    if not fails(0.0):
        return 0.0
    if fails(hi):
        raise InfeasibleStrategy(
            f"P(N <= {target}) stays below {prob} for every harvest below {n}")
    return _bisect(fails, 0.0, hi, tol)[1]


def solve_harvest(posterior, strategy: StrategySpec, n_rep: int = 100,
                  rng: np.random.Generator | None = None, *, plug_in: bool = False,
                  tol: float = BISECTION_TOL) -> float:
    """Harvest meeting ``strategy``, found by bisection to within ``tol`` animals.

    Raises
    ------
    InfeasibleStrategy
        If no harvest in [0, n_now) satisfies the strategy.
    """
    pred = HarvestPredictor(posterior, strategy.current_female_pop, n_rep, rng, plug_in)
    return solve_harvest_with(pred, strategy, tol)


def harvest_sweep(posterior, n_now: float, harvests: Sequence[float], n_rep: int = 100,
                  rng: np.random.Generator | None = None, *, plug_in: bool = False,
                  quantiles: Sequence[float] = DEFAULT_QUANTILES) -> list[dict[str, float]]:
    """Rows of (H, q10, q50, q90) for a grid of harvests, common random numbers throughout."""
    pred = HarvestPredictor(posterior, n_now, n_rep, rng, plug_in)
    rows = []
    for h in harvests:
        q = pred.quantiles(float(h), quantiles)
        row = {"H": float(h)}
        row.update({f"q{round(p * 100):d}": v for p, v in q.items()})
        rows.append(row)
    return rows
