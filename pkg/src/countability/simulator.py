"""Forward simulation of the model and checks of the effort-homogeneity results."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from .model import (
    BREEDING_FRACTION,
    HARVEST_FRACTION,
    Dataset,
    ModelParameters,
    PopulationTrajectory,
    SurveyRecord,
)

MAX_REJECTIONS = 1_000_000


class InfeasibleHarvest(RuntimeError):
    """The breeding step cannot produce a population above the scheduled harvest."""


@dataclass(frozen=True)
class SimulationSpec:
    """Everything needed to generate a synthetic dataset.

    ``harvest`` is either a ``(T, 2)`` schedule of (female, male) kills or,
    with ``harvest_fraction`` set, ignored in favour of killing a fixed
    fraction (rounded to whole animals) of each sex's pre-hunt population.
    ``survey_sd`` maps year labels to the log-scale survey uncertainty.
    """

    n_years: int
    true_params: ModelParameters
    initial: tuple[float, float]
    effort: Sequence[float]
    harvest: Sequence[Sequence[float]] | None = None
    harvest_fraction: tuple[float, float] | None = None
    survey_sd: Mapping[int, float] = field(default_factory=dict)
    first_year: int = 1
    seed: int = 0

    def __post_init__(self):
        T = self.n_years
        if T < 1:
            raise ValueError("need at least one year")
        if len(self.effort) != T:
            raise ValueError("effort must have one entry per year")
        if (self.harvest is None) == (self.harvest_fraction is None):
            raise ValueError("give exactly one of harvest (schedule) or harvest_fraction")
        if self.harvest is not None and np.shape(self.harvest) != (T, 2):
            raise ValueError("harvest schedule must have shape (T, 2)")
        if self.harvest_fraction is not None and not all(0 <= f < 1 for f in self.harvest_fraction):
            raise ValueError("harvest fractions must lie in [0, 1)")
        if min(self.initial) <= 0:
            raise ValueError("initial abundances must be positive")
        years = set(range(self.first_year, self.first_year + T))
        for y, sd in self.survey_sd.items():
            if y not in years:
                raise ValueError(f"survey year {y} outside the simulated range")
            if sd <= 0:
                raise ValueError("survey sd must be positive")

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.first_year, self.first_year + self.n_years)

    def harvest_at(self, t: int, n_f: float, n_m: float) -> tuple[float, float]:
        if self.harvest is not None:
            return float(self.harvest[t][0]), float(self.harvest[t][1])
        ff, fm = self.harvest_fraction
        return float(round(ff * n_f)), float(round(fm * n_m))

    def harvests(self, traj: PopulationTrajectory) -> np.ndarray:
        return np.array([self.harvest_at(t, traj.pre_f[t], traj.pre_m[t]) for t in range(self.n_years)])


def _truncated_lognormal(rng: np.random.Generator, loc: float, sd: float, lower: float) -> float:
    # rejection sampling from LN(loc, sd^2) restricted to values above ``lower``
    if lower <= 0:
        return float(math.exp(loc + sd * rng.standard_normal()))
    if sd == 0:
        if math.exp(loc) > lower:
            return math.exp(loc)
        raise InfeasibleHarvest(f"deterministic breeding outcome {math.exp(loc):.3f} <= harvest {lower}")
    tried = 0
    batch = 1
    while tried < MAX_REJECTIONS:
        draws = np.exp(loc + sd * rng.standard_normal(batch))
        ok = np.flatnonzero(draws > lower)
        if ok.size:
            return float(draws[ok[0]])
        tried += batch
        batch = min(batch * 4, 65536)
    raise InfeasibleHarvest(f"more than {MAX_REJECTIONS} rejections drawing a population above harvest {lower}")


def simulate_trajectory(spec: SimulationSpec, rng: np.random.Generator | None = None) -> PopulationTrajectory:
    """Draw the latent pre- and post-hunt abundances year by year.

    Breeding draws are rejection-sampled until they exceed the harvest of
    the year they lead into.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    p = spec.true_params
    sf, sm, _ = p.sigmas
    T = spec.n_years
    pre_f, pre_m = np.empty(T), np.empty(T)
    post_f, post_m = np.empty(T), np.empty(T)
    pre_f[0], pre_m[0] = spec.initial
    for t in range(T):
        hf, hm = spec.harvest_at(t, pre_f[t], pre_m[t])
        if pre_f[t] <= hf or pre_m[t] <= hm:
            raise InfeasibleHarvest(f"year index {t}: harvest exceeds the initial population")
        post_f[t] = math.exp(math.log(pre_f[t] - hf) + math.sqrt(HARVEST_FRACTION) * sf * rng.standard_normal())
        post_m[t] = math.exp(math.log(pre_m[t] - hm) + math.sqrt(HARVEST_FRACTION) * sm * rng.standard_normal())
        if t + 1 == T:
            break
        log_rt = p.r - p.k * math.log(post_f[t])
        loc_f = math.log1p(math.exp(log_rt)) + math.log(post_f[t])
        loc_m = float(np.logaddexp(math.log(post_m[t]), log_rt + math.log(post_f[t])))
        if spec.harvest is not None:
            nhf, nhm = float(spec.harvest[t + 1][0]), float(spec.harvest[t + 1][1])
        else:
            nhf = nhm = 0.0  # a fractional harvest never exceeds the population
        sdb = math.sqrt(BREEDING_FRACTION)
        pre_f[t + 1] = _truncated_lognormal(rng, loc_f, sdb * sf, nhf)
        pre_m[t + 1] = _truncated_lognormal(rng, loc_m, sdb * sm, nhm)
    return PopulationTrajectory.from_states(pre_f, pre_m, post_f, post_m)


def draw_countability(params: ModelParameters, n_years: int, rng: np.random.Generator) -> np.ndarray:
    """a_t ~ LN(log a_bar, sigma_a^2), independently per year."""
    sigma_a = params.sigma_a
    if sigma_a == 0:
        return np.full(n_years, params.a_bar)
    return np.exp(math.log(params.a_bar) + sigma_a * rng.standard_normal(n_years))


def simulate_observations(
    traj: PopulationTrajectory,
    spec: SimulationSpec,
    rng: np.random.Generator | None = None,
    a_t: np.ndarray | None = None,
) -> Dataset:
    """Draw index counts and survey estimates for a trajectory.

    Countabilities are drawn from their hierarchy unless ``a_t`` is given.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    T = spec.n_years
    if a_t is None:
        a_t = draw_countability(spec.true_params, T, rng)
    effort = np.asarray(spec.effort, float)
    count_f = rng.poisson(a_t * effort * traj.pre_f)
    count_m = rng.poisson(a_t * effort * traj.pre_m)
    h = spec.harvests(traj)
    surveys = []
    years = spec.years
    for t, y in enumerate(years):
        sd = spec.survey_sd.get(int(y))
        if sd is None:
            continue
        est_f = math.exp(math.log(traj.post_f[t]) + sd * rng.standard_normal())
        est_m = math.exp(math.log(traj.post_m[t]) + sd * rng.standard_normal())
        surveys.append(SurveyRecord(int(y), est_f, est_m, float(sd)))
    return Dataset(
        years=years,
        count_f=count_f.astype(float),
        count_m=count_m.astype(float),
        effort=effort,
        harvest_f=h[:, 0],
        harvest_m=h[:, 1],
        surveys=tuple(surveys),
    )


@dataclass(frozen=True)
class SimulationResult:
    dataset: Dataset
    trajectory: PopulationTrajectory
    a_t: np.ndarray


def simulate_dataset(spec: SimulationSpec) -> SimulationResult:
    """Trajectory, countabilities and observations from one seeded stream."""
    rng = np.random.default_rng(spec.seed)
    traj = simulate_trajectory(spec, rng)
    a_t = draw_countability(spec.true_params, spec.n_years, rng)
    data = simulate_observations(traj, spec, rng, a_t=a_t)
    return SimulationResult(data, traj, a_t)


# -- effort homogeneity -------------------------------------------------------

def effort_homogeneity_check(
    effort: float,
    split: tuple[float, float],
    rate: float = 1.0,
    mean_fn: Callable[[float], float] | None = None,
    tail: float = 1e-12,
) -> float:
    """Largest pmf difference between Y at full effort and the sum of two split-effort draws.

    ``Y ~ Poisson(mean_fn(E))`` with ``mean_fn(E) = rate * E`` by default.
    The sum's pmf is the exact convolution of the two summand pmfs; the
    support is cut where all three laws have less than ``tail`` mass left.
    Returns 0 up to rounding for an effort-homogeneous law.
    """
    a1, a2 = split
    if a1 < 0 or a2 < 0:
        raise ValueError("split fractions must be nonnegative")
    if not math.isclose(a1 + a2, 1.0, rel_tol=0, abs_tol=1e-12):
        raise ValueError("split fractions must sum to 1")
    mean_fn = (lambda e: rate * e) if mean_fn is None else mean_fn
    lam0, lam1, lam2 = mean_fn(effort), mean_fn(a1 * effort), mean_fn(a2 * effort)
    upper = int(max(stats.poisson.isf(tail, lam) for lam in (lam0, lam1 + lam2, 1.0))) + 1
    k = np.arange(upper + 1)
    p0 = stats.poisson.pmf(k, lam0)
    p1 = stats.poisson.pmf(k, lam1)
    p2 = stats.poisson.pmf(k, lam2)
    conv = np.convolve(p1, p2)[: upper + 1]
    return float(np.max(np.abs(p0 - conv)))


def poisson_index_moments(n: float, a: float, efforts) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of the index count given N for each effort (both equal a*e*N)."""
    e = np.asarray(efforts, float)
    lam = a * e * n
    return lam, lam.copy()


@dataclass(frozen=True)
class VarianceRow:
    effort: float
    var_y_over_e: float
    limit: float
    residual: float


def variance_decomposition(pop_dist, a: float, efforts) -> list[VarianceRow]:
    """Var(Y/e) split into the effort-free part Var(aN) and the residual E[aN]/e.

    ``pop_dist`` is anything exposing ``mean()`` and ``var()`` (for instance
    a frozen scipy distribution).  For Poisson counts the identity
    ``Var(Y/e) = Var(aN) + E[aN]/e`` is exact, so the residual vanishes as
    the effort grows.
    """
    mean_n, var_n = float(pop_dist.mean()), float(pop_dist.var())
    limit = a * a * var_n
    rows = []
    for e in np.asarray(efforts, float):
        residual = a * mean_n / e
        rows.append(VarianceRow(float(e), limit + residual, limit, residual))
    return rows


def variance_of_scaled_count_mc(pop_dist, a: float, effort: float, n: int,
                                rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo estimate of Var(Y/e) and its standard error."""
    pops = np.asarray(pop_dist.rvs(size=n, random_state=rng), float)
    y = rng.poisson(a * effort * pops) / effort
    v = float(np.var(y, ddof=1))
    m4 = float(np.mean((y - y.mean()) ** 4))
    se = math.sqrt(max(m4 - v * v, 0.0) / n)
    return v, se
