"""Adaptive Metropolis-adjusted Langevin sampler."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .likelihood import Posterior
from .model import Dataset, PriorConfig

logger = logging.getLogger(__name__)

ADAPTATION_MODES = ("step_only", "step_and_covariance")


class InitializationError(RuntimeError):
    """No finite starting point was found."""

    def __init__(self, message: str, dump: dict | None = None):
        super().__init__(message)
        self.dump = dump or {}


@dataclass(frozen=True)
class SamplerConfig:
    n_burnin: int = 20_000
    n_iterations: int = 100_000
    thin: int = 20
    seed: int = 0
    initial_step: float = 0.1
    target_acceptance: float = 0.574
    adapt_window: int = 100
    adaptation: str = "step_and_covariance"
    n_chains: int = 1

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.n_iterations < self.thin:
            raise ValueError("n_iterations must be at least thin")
        if self.n_burnin < 0:
            raise ValueError("n_burnin must be nonnegative")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be positive")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target_acceptance must lie in (0, 1)")
        if self.adapt_window < 1:
            raise ValueError("adapt_window must be at least 1")
        if self.adaptation not in ADAPTATION_MODES:
            raise ValueError(f"adaptation must be one of {ADAPTATION_MODES}")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")

    @classmethod
    def from_dict(cls, d) -> "SamplerConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown sampler keys: {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class MalaState:
    """Current point with its cached log-density and gradient."""

    theta: np.ndarray
    logp: float
    grad: np.ndarray


def mala_step(
    target: Callable[[np.ndarray], tuple[float, np.ndarray | None]],
    current: MalaState,
    step_size: float,
    chol: np.ndarray | None,
    rng: np.random.Generator,
) -> tuple[MalaState, bool, float]:
    """One Langevin proposal with Metropolis-Hastings correction.

    The proposal is ``theta + h^2/2 M grad + h L xi`` where ``M = L L^T``
    (``chol=None`` means identity).  Returns the next state, whether the
    proposal was accepted, and its acceptance probability.  Proposals with
    a non-finite density are rejected.
    """
    h = step_size
    x, gx = current.theta, current.grad
    xi = rng.standard_normal(x.size)
    u = rng.random()
    if chol is None:
        lt_gx = gx
        y = x + 0.5 * h * h * gx + h * xi
    else:
        lt_gx = chol.T @ gx
        y = x + chol @ (0.5 * h * h * lt_gx + h * xi)
    lp_y, gy = target(y)
    if gy is None or not math.isfinite(lp_y):
        return current, False, 0.0
    lt_gy = gy if chol is None else chol.T @ gy
    # L^{-1}(x - y - h^2/2 M gy), written without a triangular solve
    rev = -h * xi - 0.5 * h * h * (lt_gx + lt_gy)
    log_q_rev = -float(rev @ rev) / (2.0 * h * h)
    log_q_fwd = -0.5 * float(xi @ xi)
    log_alpha = lp_y - current.logp + log_q_rev - log_q_fwd
    prob = 1.0 if log_alpha >= 0 else math.exp(log_alpha)
    if u < prob:
        return MalaState(y, lp_y, gy), True, prob
    return current, False, prob


def adapt_step_size(step_size: float, accepted, target_acceptance: float, round_index: int) -> float:
    """Robbins-Monro update of log step size toward the target acceptance rate.

    ``accepted`` holds the acceptance flags of the latest window; the gain
    decays as ``round_index ** -0.6``.
    """
    rate = float(np.mean(accepted))
    gain = max(round_index, 1) ** -0.6
    return step_size * math.exp(gain * (rate - target_acceptance))


def adapt_preconditioner(draws: np.ndarray) -> np.ndarray:
    """Cholesky factor of the ridge-regularized empirical covariance of ``draws``.

    Falls back to the diagonal of variances when the covariance is not
    positive definite.
    """
    draws = np.asarray(draws, float)
    return _cholesky_regularized(np.atleast_2d(np.cov(draws, rowvar=False)))


def _cholesky_regularized(cov: np.ndarray) -> np.ndarray:
    eps = 1e-6 * max(float(np.mean(np.diag(cov))), 1e-300)
    cov = cov + eps * np.eye(cov.shape[0])
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        var = np.maximum(np.diag(cov), eps)
        return np.diag(np.sqrt(var))


def _hessian_diag_preconditioner(target, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
    # diag of the inverse negative Hessian by forward differences of the gradient
    d = theta.size
    diag = np.ones(d)
    for i in range(d):
        h = 1e-5 * max(1.0, abs(theta[i]))
        tp = theta.copy()
        tp[i] += h
        _, gp = target(tp)
        if gp is None:
            continue
        curv = -(gp[i] - grad[i]) / h
        if np.isfinite(curv) and curv > 0:
            diag[i] = 1.0 / curv
    diag = np.clip(diag, 1e-8, 1e2)
    return np.diag(np.sqrt(diag))


@dataclass
class ChainOutput:
    """Stored draws and run telemetry of a single chain."""

    draws: np.ndarray
    names: list[str]
    acceptance_rate: float
    accepted: np.ndarray
    step_size_trace: np.ndarray
    log_posterior_trace: np.ndarray
    seed: int
    n_burnin: int
    posterior: Posterior | None = field(default=None, repr=False)

    @property
    def burnin_acceptance_rate(self) -> float:
        flags = self.accepted[: self.n_burnin]
        return float(np.mean(flags)) if flags.size else float("nan")

    def decoded(self) -> dict[str, np.ndarray]:
        """Natural-scale draws keyed by parameter name (needs the posterior)."""
        if self.posterior is None:
            raise ValueError("no posterior attached to decode draws")
        rows = [self.posterior.decoded_row(th) for th in self.draws]
        if not rows:
            return {}
        return {k: np.array([row[k] for row in rows]) for k in rows[0]}


def sample(
    target: Callable[[np.ndarray], tuple[float, np.ndarray | None]],
    theta0: np.ndarray,
    config: SamplerConfig,
    rng: np.random.Generator | None = None,
    names: list[str] | None = None,
    chol0: np.ndarray | None = None,
    to_output: Callable[[np.ndarray], np.ndarray] | None = None,
) -> ChainOutput:
    """Run adaptive MALA on an arbitrary differentiable log-density.

    Step size (and optionally the preconditioner) adapt during the burn-in
    only; the kernel is frozen afterwards.  ``to_output`` maps the
    sampled coordinates to the stored ones (identity by default).
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    theta0 = np.asarray(theta0, float)
    d = theta0.size
    lp, g = target(theta0)
    if g is None:
        raise InitializationError("log-density is not finite at the starting point")
    state = MalaState(theta0.copy(), lp, g)

    n_total = config.n_burnin + config.n_iterations
    n_store = config.n_iterations // config.thin
    draws = np.empty((n_store, d))
    accepted = np.zeros(n_total, dtype=bool)
    steps = np.empty(n_total)
    lp_trace = np.empty(n_total)

    step = config.initial_step
    chol = chol0
    window = config.adapt_window
    round_index = 1
    adapt_cov = config.adaptation == "step_and_covariance"
    # running moments of burn-in draws after a short transient
    cov_start = min(1000, config.n_burnin // 10)
    cov_every = max(1000, 10 * window)
    n_acc = 0
    mean = np.zeros(d)
    scatter = np.zeros((d, d))
    installed = False
    stored = 0

    for it in range(n_total):
        steps[it] = step
        state, acc, _ = mala_step(target, state, step, chol, rng)
        accepted[it] = acc
        lp_trace[it] = state.logp
        if it < config.n_burnin:
            if (it + 1) % window == 0:
                step = adapt_step_size(step, accepted[it + 1 - window: it + 1],
                                       config.target_acceptance, round_index)
                round_index += 1
            if adapt_cov and it >= cov_start:
                n_acc += 1
                delta = state.theta - mean
                mean += delta / n_acc
                scatter += np.outer(delta, state.theta - mean)
                if n_acc % cov_every == 0 and it + 1 < config.n_burnin:
                    chol = _cholesky_regularized(scatter / (n_acc - 1))
                    if not installed:
                        # restart the step search at the classical MALA scale for the new metric
                        step = 1.2 * d ** (-1.0 / 6.0)
                        round_index = 1
                        installed = True
        else:
            j = it - config.n_burnin
            if (j + 1) % config.thin == 0:
                draws[stored] = state.theta if to_output is None else to_output(state.theta)
                stored += 1

    sampling_flags = accepted[config.n_burnin:]
    return ChainOutput(
        draws=draws,
        names=list(names) if names is not None else [f"x{i}" for i in range(d)],
        acceptance_rate=float(np.mean(sampling_flags)),
        accepted=accepted,
        step_size_trace=steps,
        log_posterior_trace=lp_trace,
        seed=config.seed,
        n_burnin=config.n_burnin,
    )


def find_initial_state(posterior: Posterior, init: np.ndarray | None,
                       rng: np.random.Generator, retries: int = 100) -> np.ndarray:
    """Starting point with a finite log-posterior and gradient."""
    candidates = []
    theta = posterior.initial_state() if init is None else np.asarray(init, float)
    for attempt in range(retries + 1):
        lp, g = posterior.logp_and_grad(theta)
        if g is not None:
            return theta
        candidates.append(theta)
        theta = posterior.initial_state(rng, jitter=0.1 * (1 + attempt / 10))
    bd = posterior.breakdown(candidates[0])
    dump = {
        "names": posterior.names,
        "state": candidates[0].tolist(),
        "breakdown": bd.__dict__,
    }
    raise InitializationError(f"no finite log-posterior after {retries} retries", dump)


def conditional_mode(posterior: Posterior, theta: np.ndarray) -> np.ndarray:
    """Maximize the log-posterior over everything except tau, omega and nu.

    With the variance parameters held fixed the mode exists (the joint
    density is unbounded as the variances shrink), and starting there
    removes most of the burn-in transient.  Returns ``theta`` unchanged if
    the optimizer fails.
    """
    held = [posterior.i_ltau, posterior.i_lnu]
    if posterior.i_lomega is not None:
        held.append(posterior.i_lomega)
    free = np.setdiff1d(np.arange(posterior.dim), held)
    base = np.array(theta, float)

    def objective(z):
        x = base.copy()
        x[free] = z
        lp, g = posterior.logp_and_grad(x)
        if g is None:
            return 1e300, np.zeros_like(z)
        return -lp, -g[free]

    res = optimize.minimize(objective, base[free], jac=True, method="L-BFGS-B")
    out = base.copy()
    out[free] = res.x
    if posterior.logp(out) >= posterior.logp(base):
        return out
    return base


def run_chain(
    data: Dataset,
    priors: PriorConfig,
    config: SamplerConfig,
    variant: str = "variable",
    init: np.ndarray | None = None,
    use_k: bool = False,
) -> ChainOutput:
    """Sample the posterior of the state-space model with adaptive MALA.

    Deterministic for a given seed.  Without ``init`` the chain starts at
    the conditional mode around :meth:`Posterior.initial_state` (see
    :func:`conditional_mode`); the first metric is the diagonal of the
    inverse curvature there.
    """
    posterior = Posterior(data, priors, variant, use_k)
    rng = np.random.default_rng(config.seed)
    theta0 = find_initial_state(posterior, init, rng)
    if init is None:
        theta0 = conditional_mode(posterior, theta0)
    target = posterior.logp_and_grad
    lp0, g0 = target(theta0)
    chol0 = _hessian_diag_preconditioner(target, theta0, g0)
    out = sample(target, theta0, config, rng, names=posterior.names, chol0=chol0)
    out.posterior = posterior
    logger.info("chain seed=%d: acceptance %.3f, final step %.4g", config.seed,
                out.acceptance_rate, out.step_size_trace[-1])
    return out


def chain_seeds(seed: int, n_chains: int) -> list[int]:
    """Independent per-chain seeds split off a master seed."""
    if n_chains == 1:
        return [seed]
    children = np.random.SeedSequence(seed).spawn(n_chains)
    return [int(c.generate_state(1, dtype=np.uint64)[0] & 0x7FFF_FFFF_FFFF_FFFF) for c in children]


def _run_one(args):
    data, priors, config, variant, init, use_k = args
    return run_chain(data, priors, config, variant, init, use_k)


def run_chains(
    data: Dataset,
    priors: PriorConfig,
    config: SamplerConfig,
    variant: str = "variable",
    use_k: bool = False,
    n_jobs: int = 1,
) -> list[ChainOutput]:
    """Run ``config.n_chains`` independent chains, optionally in worker processes."""
    seeds = chain_seeds(config.seed, config.n_chains)
    jobs = [(data, priors, _with_seed(config, s), variant, None, use_k) for s in seeds]
    if n_jobs <= 1 or len(jobs) == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_run_one, jobs))


def _with_seed(config: SamplerConfig, seed: int) -> SamplerConfig:
    d = config.to_dict()
    d["seed"] = seed
    return SamplerConfig(**d)
