"""Random model instances and an independent textbook-density oracle."""
from __future__ import annotations

import math

import numpy as np
from scipy import stats
from scipy.special import expit

from countability import Dataset, ModelParameters, PopulationTrajectory, Posterior, PriorConfig, SurveyRecord


def random_priors(rng: np.random.Generator, with_mu_n0: bool = True) -> PriorConfig:
    return PriorConfig(
        beta_tau=rng.uniform(0.5, 3), alpha_b=rng.uniform(0.8, 3), beta_b=rng.uniform(0.8, 3),
        alpha_nu=rng.uniform(1, 4), beta_nu=rng.uniform(0.5, 3), mu_abar=rng.uniform(0.1, 1),
        sigma_abar=rng.uniform(0.2, 2), mu_r=rng.uniform(-2, 0), sigma_r=rng.uniform(0.3, 2),
        beta_k=rng.uniform(1, 20), mu_n0=float(rng.uniform(4, 7)) if with_mu_n0 else None,
        sigma_n0=rng.uniform(0.3, 2),
    )


def random_instance(rng: np.random.Generator, T: int, variant: str = "variable", use_k: bool = False,
                    margin: float = 1.3):
    """A dataset, prior and a valid unconstrained state.

    Pre-hunt abundances exceed ``margin`` times the harvest so that finite
    differences stay inside the support.
    """
    pre_f = rng.uniform(100, 900, T)
    pre_m = rng.uniform(100, 900, T)
    hf = np.where(rng.random(T) < 0.8, np.floor(pre_f / margin * rng.uniform(0, 1, T)), 0.0)
    hm = np.where(rng.random(T) < 0.8, np.floor(pre_m / margin * rng.uniform(0, 1, T)), 0.0)
    post_f = (pre_f - hf) * np.exp(0.2 * rng.standard_normal(T))
    post_m = (pre_m - hm) * np.exp(0.2 * rng.standard_normal(T))
    effort = rng.uniform(0.5, 3, T)
    a_bar = rng.uniform(0.05, 1)
    a_t = a_bar * np.exp(0.3 * rng.standard_normal(T))
    count_f = rng.poisson(a_t * effort * pre_f).astype(float)
    count_m = rng.poisson(a_t * effort * pre_m).astype(float)
    years = np.arange(2000, 2000 + T)
    surveys = tuple(
        SurveyRecord(int(y), float(post_f[i] * math.exp(0.1 * rng.standard_normal())),
                     float(post_m[i] * math.exp(0.1 * rng.standard_normal())), float(rng.uniform(0.05, 0.4)))
        for i, y in enumerate(years) if rng.random() < 0.4
    )
    data = Dataset(years, count_f, count_m, effort, hf, hm, surveys)
    priors = random_priors(rng, with_mu_n0=bool(rng.random() < 0.7))
    omega = 1.0 if variant == "fixed" else float(rng.uniform(0.1, 0.9))
    params = ModelParameters(
        r=float(rng.uniform(-2, 0.5)), k=float(rng.uniform(0.001, 0.2)) if use_k else 0.0,
        tau=float(rng.uniform(0.1, 1.5)), omega=omega, nu=float(rng.uniform(0.3, 2)),
        a_bar=float(a_bar), a_t=a_t if variant == "variable" else np.full(T, a_bar),
    )
    traj = PopulationTrajectory.from_states(pre_f, pre_m, post_f, post_m)
    posterior = Posterior(data, priors, variant, use_k)
    return posterior, posterior.encode(traj, params)


def _lognorm(x, loc, sd):
    return stats.lognorm.logpdf(x, s=sd, scale=math.exp(loc))


def oracle_log_posterior(theta, data: Dataset, priors: PriorConfig, variant: str, use_k: bool) -> float:
    """Log-posterior on the unconstrained vector assembled from scipy densities.

    Layout: log pre_F, log pre_M, log post_F, log post_M (T each), then
    log a_t (T, variable only), log a_bar, log tau, logit omega (variable
    only), log nu, r and log K (if enabled).
    """
    T = data.years.size
    th = np.asarray(theta, float)
    pre_f, pre_m, post_f, post_m = (np.exp(th[i * T:(i + 1) * T]) for i in range(4))
    i = 4 * T
    if variant == "variable":
        a_t = np.exp(th[i:i + T])
        i += T
    a_bar = math.exp(th[i])
    tau = math.exp(th[i + 1])
    i += 2
    if variant == "variable":
        omega = float(expit(th[i]))
        i += 1
    else:
        omega = 1.0
        a_t = np.full(T, a_bar)
    nu = math.exp(th[i])
    r = th[i + 1]
    k = math.exp(th[i + 2]) if use_k else 0.0

    sf = omega * tau
    sm = sf * nu
    sa = (1 - omega) * tau
    hf, hm = data.harvest_f, data.harvest_m
    if np.any(pre_f <= hf) or np.any(pre_m <= hm):
        return -math.inf
    total = 0.0
    sb, sh = math.sqrt(0.75), math.sqrt(0.25)
    for t in range(1, T):
        rt = math.exp(r - k * math.log(post_f[t - 1]))
        loc_f = math.log((rt + 1) * post_f[t - 1])
        loc_m = math.log(post_m[t - 1] + rt * post_f[t - 1])
        total += _lognorm(pre_f[t], loc_f, sb * sf) + _lognorm(pre_m[t], loc_m, sb * sm)
        if hf[t] > 0:
            total -= stats.lognorm.logsf(hf[t], s=sb * sf, scale=math.exp(loc_f))
        if hm[t] > 0:
            total -= stats.lognorm.logsf(hm[t], s=sb * sm, scale=math.exp(loc_m))
    for t in range(T):
        total += _lognorm(post_f[t], math.log(pre_f[t] - hf[t]), sh * sf)
        total += _lognorm(post_m[t], math.log(pre_m[t] - hm[t]), sh * sm)
        lam = a_t[t] * data.effort[t]
        total += stats.poisson.logpmf(data.count_f[t], lam * pre_f[t])
        total += stats.poisson.logpmf(data.count_m[t], lam * pre_m[t])
    first = int(data.years[0])
    for s in data.surveys:
        j = s.year - first
        total += stats.norm.logpdf(math.log(s.est_female), math.log(post_f[j]), s.sd_log)
        total += stats.norm.logpdf(math.log(s.est_male), math.log(post_m[j]), s.sd_log)
    # priors
    if variant == "variable":
        total += float(np.sum(_lognorm(a_t, math.log(a_bar), sa)))
        total += stats.beta.logpdf(omega, priors.alpha_b, priors.beta_b)
    total += stats.expon.logpdf(tau, scale=1 / priors.beta_tau)
    total += stats.gamma.logpdf(nu, priors.alpha_nu, scale=1 / priors.beta_nu)
    total += stats.norm.logpdf(a_bar, priors.mu_abar, priors.sigma_abar)
    total += stats.norm.logpdf(r, priors.mu_r, priors.sigma_r)
    if use_k:
        total += stats.expon.logpdf(k, scale=1 / priors.beta_k)
    loc_f0, loc_m0 = oracle_initial_location(data, priors)
    total += _lognorm(pre_f[0], loc_f0, priors.sigma_n0) + _lognorm(pre_m[0], loc_m0, priors.sigma_n0)
    # Jacobian of the unconstrained transform
    jac = float(np.sum(np.log(pre_f) + np.log(pre_m) + np.log(post_f) + np.log(post_m)))
    jac += math.log(a_bar) + math.log(tau) + math.log(nu)
    if variant == "variable":
        jac += float(np.sum(np.log(a_t))) + math.log(omega) + math.log1p(-omega)
    if use_k:
        jac += math.log(k)
    return float(total + jac)


def oracle_initial_location(data: Dataset, priors: PriorConfig) -> tuple[float, float]:
    if priors.mu_n0 is not None:
        return priors.mu_n0, priors.mu_n0
    first = int(data.years[0])
    for s in data.surveys:
        if s.year == first:
            return math.log(s.est_female + data.harvest_f[0]), math.log(s.est_male + data.harvest_m[0])
    scale = priors.mu_abar * data.effort[0]
    return (math.log(max(data.count_f[0] / scale, 2 * data.harvest_f[0], 1.0)),
            math.log(max(data.count_m[0] / scale, 2 * data.harvest_m[0], 1.0)))


def central_differences(f, x: np.ndarray, rel: float = 1e-5) -> np.ndarray:
    g = np.empty_like(x)
    for j in range(x.size):
        h = rel * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        g[j] = (f(xp) - f(xm)) / (2 * h)
    return g


def gradient_relative_error(posterior: Posterior, theta: np.ndarray) -> float:
    g = posterior.grad(theta)
    fd = central_differences(posterior.logp, theta)
    return float(np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd))))
