"""Population size from biased index counts with time-varying countability.

Bayesian state-space model for a two-sex harvested population observed
through Poisson index counts (with annual countability ``a_t``) and sparse
unbiased surveys, plus an adaptive MALA sampler, a forward simulator and a
harvest decision analyzer.
"""
from .model import (
    Dataset,
    DatasetError,
    ModelParameters,
    PopulationTrajectory,
    PriorConfig,
    SurveyRecord,
    derive_variances,
    recruitment_rate,
    validate_dataset,
)
from .likelihood import LogPosteriorBreakdown, Posterior, log_posterior, grad_log_posterior
from .sampler import ChainOutput, SamplerConfig, run_chain, run_chains
from .simulator import SimulationSpec, simulate_dataset, simulate_observations, simulate_trajectory
from .management import StrategySpec, predict_next_year, solve_harvest

__version__ = "0.1.0"

__all__ = [
    "ChainOutput",
    "Dataset",
    "DatasetError",
    "LogPosteriorBreakdown",
    "ModelParameters",
    "PopulationTrajectory",
    "Posterior",
    "PriorConfig",
    "SamplerConfig",
    "SimulationSpec",
    "StrategySpec",
    "SurveyRecord",
    "derive_variances",
    "grad_log_posterior",
    "log_posterior",
    "predict_next_year",
    "recruitment_rate",
    "run_chain",
    "run_chains",
    "simulate_dataset",
    "simulate_observations",
    "simulate_trajectory",
    "solve_harvest",
    "validate_dataset",
]
