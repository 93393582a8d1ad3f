"""Synthetic simulate-and-fit experiments shared by the acceptance suite."""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from countability import ModelParameters, PriorConfig, SamplerConfig, SimulationSpec, run_chain, simulate_dataset

T = 14
FIRST_YEAR = 1990
SURVEY_YEARS = (1993, 1997, 2001)


def moose_spec(seed: int, omega: float = 0.5, tau: float = 0.4) -> SimulationSpec:
    """Moose-like regime: ~1000 animals, a third of females and 40% of males shot yearly."""
    truth = ModelParameters(r=math.log(0.5), k=0.0, tau=tau, omega=omega, nu=1.2, a_bar=0.3,
                            a_t=np.full(T, 0.3))
    return SimulationSpec(
        n_years=T, true_params=truth, initial=(600.0, 450.0), effort=[1.5] * T,
        harvest_fraction=(1 / 3, 0.4), survey_sd={y: 0.15 for y in SURVEY_YEARS},
        first_year=FIRST_YEAR, seed=seed,
    )


def fit_replicate(args) -> dict:
    seed, omega, variant = args
    spec = moose_spec(seed, omega)
    data = simulate_dataset(spec).dataset
    out = run_chain(data, PriorConfig(), SamplerConfig(seed=seed), variant=variant)
    d = out.decoded()
    qs = lambda v: tuple(float(x) for x in np.quantile(v, (0.05, 0.5, 0.95)))  # noqa: E731
    return {
        "seed": seed, "variant": variant, "acceptance": out.acceptance_rate,
        "r": qs(d["r"]), "a_bar": qs(d["a_bar"]), "omega": qs(d["omega"]),
        "sigma_F": qs(d["sigma_F"]),
        "truth": {"r": spec.true_params.r, "a_bar": spec.true_params.a_bar,
                  "omega": spec.true_params.omega},
    }


def run_many(jobs, n_workers: int | None = None) -> list[dict]:
    n_workers = n_workers or min(len(jobs), os.cpu_count() or 1)
    if n_workers <= 1:
        return [fit_replicate(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fit_replicate, jobs))
