"""Domain types, variance reparameterization and dataset validation."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

# Fractions of the yearly variance carried by the breeding interval
# [t-1/2, t] (about nine months) and the hunting interval [t, t+1/2].
BREEDING_FRACTION = 0.75
HARVEST_FRACTION = 0.25


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def derive_variances(tau: float, omega: float, nu: float) -> tuple[float, float, float]:
    """Map (tau, omega, nu) to the standard deviations (sigma_F, sigma_M, sigma_a).

    ``tau`` scales the total variability, ``omega`` splits it between the
    population process (omega -> 1) and countability (omega -> 0), and
    ``nu`` is the male/female ratio of process variability.
    """
    if not (tau >= 0 and math.isfinite(tau)):
        raise ValueError(f"tau must be a finite nonnegative number, got {tau!r}")
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must lie in [0, 1], got {omega!r}")
    if not (nu >= 0 and math.isfinite(nu)):
        raise ValueError(f"nu must be a finite nonnegative number, got {nu!r}")
    return omega * tau, omega * tau * nu, (1.0 - omega) * tau


def recruitment_rate(r: float, k: float, n_female: float) -> float:
    """Per-female recruitment ``exp(r - k*log(n_female))``.

    With ``k = 0`` the rate is the constant ``exp(r)``.
    """
    if n_female <= 0:
        raise ValueError("n_female must be positive")
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k == 0:
        return math.exp(r)
    return math.exp(r - k * math.log(n_female))


@dataclass(frozen=True)
class ModelParameters:
    """Parameters of the state-space model.

    ``a_t`` holds one countability per modeled year.  The fixed-countability
    variant uses ``omega = 1`` and ``a_t`` filled with ``a_bar``.
    """

    r: float
    k: float
    tau: float
    omega: float
    nu: float
    a_bar: float
    a_t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a_t", _frozen_array(self.a_t))
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        if self.a_bar <= 0:
            raise ValueError("a_bar must be positive")
        if np.any(self.a_t <= 0):
            raise ValueError("every a_t must be positive")
        derive_variances(self.tau, self.omega, self.nu)

    @property
    def sigmas(self) -> tuple[float, float, float]:
        return derive_variances(self.tau, self.omega, self.nu)

    @property
    def sigma_f(self) -> float:
        return self.sigmas[0]

    @property
    def sigma_m(self) -> float:
        return self.sigmas[1]

    @property
    def sigma_a(self) -> float:
        return self.sigmas[2]

    def replace(self, **changes) -> "ModelParameters":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "k": self.k,
            "tau": self.tau,
            "omega": self.omega,
            "nu": self.nu,
            "a_bar": self.a_bar,
            "a_t": [float(a) for a in self.a_t],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModelParameters":
        return cls(
            r=float(d["r"]),
            k=float(d.get("k", 0.0)),
            tau=float(d["tau"]),
            omega=float(d["omega"]),
            nu=float(d["nu"]),
            a_bar=float(d["a_bar"]),
            a_t=np.asarray(d["a_t"], dtype=float),
        )


@dataclass(frozen=True)
class PopulationTrajectory:
    """Latent abundances on the half-year grid 1, 1.5, ..., T + 0.5.

    Even positions are pre-hunt states ``N_t``, odd positions post-hunt
    states ``N_{t+1/2}``.
    """

    n_female: np.ndarray
    n_male: np.ndarray

    def __post_init__(self):
        nf = _frozen_array(self.n_female)
        nm = _frozen_array(self.n_male)
        if nf.shape != nm.shape or nf.ndim != 1 or nf.size % 2:
            raise ValueError("trajectory needs two equal-length arrays with 2T entries")
        if np.any(nf <= 0) or np.any(nm <= 0):
            raise ValueError("abundances must be strictly positive")
        object.__setattr__(self, "n_female", nf)
        object.__setattr__(self, "n_male", nm)

    @classmethod
    def from_states(cls, pre_f, pre_m, post_f, post_m) -> "PopulationTrajectory":
        pre_f, pre_m = np.asarray(pre_f, float), np.asarray(pre_m, float)
        nf = np.empty(2 * pre_f.size)
        nm = np.empty(2 * pre_f.size)
        nf[0::2], nf[1::2] = pre_f, post_f
        nm[0::2], nm[1::2] = pre_m, post_m
        return cls(nf, nm)

    @property
    def n_years(self) -> int:
        return self.n_female.size // 2

    @property
    def grid(self) -> np.ndarray:
        return 1.0 + 0.5 * np.arange(self.n_female.size)

    @property
    def pre_f(self) -> np.ndarray:
        return self.n_female[0::2]

    @property
    def pre_m(self) -> np.ndarray:
        return self.n_male[0::2]

    @property
    def post_f(self) -> np.ndarray:
        return self.n_female[1::2]

    @property
    def post_m(self) -> np.ndarray:
        return self.n_male[1::2]


@dataclass(frozen=True)
class SurveyRecord:
    """Unbiased post-hunt abundance estimate for one year."""

    year: int
    est_female: float
    est_male: float
    sd_log: float


class DatasetError(ValueError):
    """Raised when a dataset fails validation; ``violations`` lists every problem."""

    def __init__(self, violations: Sequence[tuple[Any, str, str]]):
        self.violations = list(violations)
        lines = [f"year {y}: {fld}: {msg}" if y is not None else f"{fld}: {msg}"
                 for y, fld, msg in self.violations]
        super().__init__("invalid dataset:\n  " + "\n  ".join(lines))


@dataclass(frozen=True)
class Dataset:
    """Index counts, effort and harvest per year plus sparse surveys."""

    years: np.ndarray
    count_f: np.ndarray
    count_m: np.ndarray
    effort: np.ndarray
    harvest_f: np.ndarray
    harvest_m: np.ndarray
    surveys: tuple[SurveyRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "years", _frozen_array(self.years, int))
        for name in ("count_f", "count_m", "effort", "harvest_f", "harvest_m"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        object.__setattr__(self, "surveys", tuple(sorted(self.surveys, key=lambda s: s.year)))

    @property
    def n_years(self) -> int:
        return int(self.years.size)

    def survey_positions(self) -> np.ndarray:
        """Zero-based year positions of the survey records."""
        first = int(self.years[0])
        return np.array([s.year - first for s in self.surveys], dtype=int)

    def survey_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        pos = self.survey_positions()
        est_f = np.array([s.est_female for s in self.surveys], dtype=float)
        est_m = np.array([s.est_male for s in self.surveys], dtype=float)
        sd = np.array([s.sd_log for s in self.surveys], dtype=float)
        return pos, est_f, est_m, sd

    def survey_for(self, year: int) -> SurveyRecord | None:
        for s in self.surveys:
            if s.year == year:
                return s
        return None


def _is_count(x) -> bool:
    return math.isfinite(x) and x >= 0 and float(x).is_integer()


def validate_dataset(raw: Dataset | Iterable[Mapping[str, Any]]) -> Dataset:
    """Check a dataset and return it as a :class:`Dataset`.

    ``raw`` is either a :class:`Dataset` or an iterable of per-year rows
    with keys ``year, count_f, count_m, effort, harvest_f, harvest_m`` and
    optional ``survey_f, survey_m, survey_sd_log`` (``None`` when absent).
    Every violation is collected and reported at once through
    :class:`DatasetError`.
    """
    if isinstance(raw, Dataset):
        rows = _rows_from_dataset(raw)
        extra_surveys = []
    else:
        rows = [dict(r) for r in raw]
        extra_surveys = []

    problems: list[tuple[Any, str, str]] = []
    if not rows:
        raise DatasetError([(None, "years", "dataset has no rows")])

    required = ("year", "count_f", "count_m", "effort", "harvest_f", "harvest_m")
    clean = []
    for i, row in enumerate(rows):
        year = row.get("year")
        for key in required:
            if row.get(key) is None:
                problems.append((year, key, "missing value"))
        if any(row.get(k) is None for k in required):
            continue
        year = int(year)
        cf, cm = float(row["count_f"]), float(row["count_m"])
        eff = float(row["effort"])
        hf, hm = float(row["harvest_f"]), float(row["harvest_m"])
        if not _is_count(cf):
            problems.append((year, "count_f", f"must be a nonnegative integer, got {row['count_f']}"))
        if not _is_count(cm):
            problems.append((year, "count_m", f"must be a nonnegative integer, got {row['count_m']}"))
        if not (math.isfinite(eff) and eff > 0):
            problems.append((year, "effort", f"must be positive, got {row['effort']}"))
        if not (math.isfinite(hf) and hf >= 0):
            problems.append((year, "harvest_f", f"must be nonnegative, got {row['harvest_f']}"))
        if not (math.isfinite(hm) and hm >= 0):
            problems.append((year, "harvest_m", f"must be nonnegative, got {row['harvest_m']}"))
        survey = [row.get(k) for k in ("survey_f", "survey_m", "survey_sd_log")]
        if any(v is not None for v in survey):
            if any(v is None for v in survey):
                problems.append((year, "survey", "survey_f, survey_m and survey_sd_log must be given together"))
            else:
                sf, sm, sd = (float(v) for v in survey)
                for name, v in (("survey_f", sf), ("survey_m", sm), ("survey_sd_log", sd)):
                    if not (math.isfinite(v) and v > 0):
                        problems.append((year, name, f"must be positive, got {v}"))
                extra_surveys.append(SurveyRecord(year, sf, sm, sd))
        clean.append((year, cf, cm, eff, hf, hm))

    years = [c[0] for c in clean]
    seen = set()
    for y in years:
        if y in seen:
            problems.append((y, "year", "duplicate year"))
        seen.add(y)
    if years:
        ordered = sorted(seen)
        expected = set(range(ordered[0], ordered[-1] + 1))
        for y in sorted(expected - seen):
            problems.append((y, "year", "missing year (index and harvest records required every year)"))
        if years != sorted(years):
            problems.append((None, "year", "rows must be in increasing year order"))

    if not isinstance(raw, Dataset):
        surveys = extra_surveys
    else:
        surveys = list(raw.surveys)
    for s in surveys:
        if s.year not in seen:
            problems.append((s.year, "survey", "survey refers to a year with no index record"))
    if isinstance(raw, Dataset):
        for s in raw.surveys:
            for name, v in (("survey_f", s.est_female), ("survey_m", s.est_male), ("survey_sd_log", s.sd_log)):
                if not (math.isfinite(v) and v > 0):
                    problems.append((s.year, name, f"must be positive, got {v}"))
        if len({s.year for s in raw.surveys}) != len(raw.surveys):
            problems.append((None, "survey", "more than one survey for a year"))

    if problems:
        raise DatasetError(problems)

    arr = np.array(clean, dtype=float)
    return Dataset(
        years=arr[:, 0].astype(int),
        count_f=arr[:, 1],
        count_m=arr[:, 2],
        effort=arr[:, 3],
        harvest_f=arr[:, 4],
        harvest_m=arr[:, 5],
        surveys=tuple(surveys),
    )


def _rows_from_dataset(ds: Dataset) -> list[dict]:
    n = ds.years.size
    arrays = [ds.count_f, ds.count_m, ds.effort, ds.harvest_f, ds.harvest_m]
    if any(a.size != n for a in arrays):
        raise DatasetError([(None, "years", "per-year arrays have different lengths")])
    return [
        {
            "year": int(ds.years[i]),
            "count_f": ds.count_f[i],
            "count_m": ds.count_m[i],
            "effort": ds.effort[i],
            "harvest_f": ds.harvest_f[i],
            "harvest_m": ds.harvest_m[i],
        }
        for i in range(n)
    ]


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the prior.

    ``mu_n0 = None`` centres the initial-state log-normal prior on the
    year-one abundance implied by the data (see :meth:`initial_location`).
    """

    beta_tau: float = 1.0
    alpha_b: float = 1.0
    beta_b: float = 1.0
    alpha_nu: float = 2.0
    beta_nu: float = 2.0
    mu_abar: float = 0.5
    sigma_abar: float = 1.0
    mu_r: float = -1.0
    sigma_r: float = 1.0
    beta_k: float = 10.0
    mu_n0: float | None = None
    sigma_n0: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("mu_abar", "mu_r", "mu_n0"):
                if v is not None and not math.isfinite(v):
                    raise ValueError(f"{f.name} must be finite")
                continue
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{f.name} must be strictly positive, got {v!r}")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PriorConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown prior keys: {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def initial_location(self, data: Dataset) -> tuple[float, float]:
        """Log-scale centre of the initial-state prior for (female, male)."""
        if self.mu_n0 is not None:
            return self.mu_n0, self.mu_n0
        s = data.survey_for(int(data.years[0]))
        if s is not None:
            # post-hunt survey plus that year's harvest
            return (math.log(s.est_female + data.harvest_f[0]),
                    math.log(s.est_male + data.harvest_m[0]))
        scale = max(self.mu_abar, 1e-12) * data.effort[0]
        nf = max(data.count_f[0] / scale, 2.0 * data.harvest_f[0], 1.0)
        nm = max(data.count_m[0] / scale, 2.0 * data.harvest_m[0], 1.0)
        return math.log(nf), math.log(nm)
