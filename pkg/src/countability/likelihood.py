"""Log-posterior of the state-space model and its exact gradient.

The domain-level functions (``log_breeding_transition`` and friends) work on
natural-scale quantities and are the reference building blocks.  The
:class:`Posterior` class evaluates the same density on the flat
unconstrained vector used by the sampler, together with its gradient.

Unconstrained layout for ``T`` years (``variant="variable"``)::

    log N^F_t (T) | log N^M_t (T) | log N^F_{t+1/2} (T) | log N^M_{t+1/2} (T)
    | log a_t (T) | log a_bar | log tau | logit omega | log nu | r | [log K]

``variant="fixed"`` replaces ``log a_t`` and ``log a_bar`` by a single
``log a`` and drops ``logit omega`` (omega is pinned at 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, log_ndtr, betaln

from . import _kernel

from .model import (
    BREEDING_FRACTION,
    HARVEST_FRACTION,
    Dataset,
    ModelParameters,
    PopulationTrajectory,
    PriorConfig,
)

LOG_2PI = math.log(2.0 * math.pi)
VARIANTS = ("variable", "fixed")


class NonFiniteLogPosterior(ValueError):
    """The log-posterior is not finite at the requested state."""


def _lognormal_logpdf(x: float, loc: float, var: float) -> float:
    # log-normal density at x > 0 with log-location ``loc`` and log-variance ``var``
    if var == 0.0:
        return 0.0 if math.isclose(math.log(x), loc, rel_tol=0, abs_tol=1e-12) else -math.inf
    z = math.log(x) - loc
    return -math.log(x) - 0.5 * math.log(2.0 * math.pi * var) - z * z / (2.0 * var)


def _breeding_locations(n_prev_f: float, n_prev_m: float, r: float, k: float) -> tuple[float, float]:
    # r_t = exp(r - k log N^F); female (r_t + 1) N^F, male N^M + r_t N^F
    log_rt = r - k * math.log(n_prev_f)
    loc_f = math.log1p(math.exp(log_rt)) + math.log(n_prev_f)
    loc_m = float(np.logaddexp(math.log(n_prev_m), log_rt + math.log(n_prev_f)))
    return loc_f, loc_m


def log_breeding_transition(n_prev, n_next, params: ModelParameters) -> float:
    """Log-density of the pre-hunt state given the previous post-hunt state.

    ``n_prev`` and ``n_next`` are (female, male) pairs.  Each sex is
    log-normal with 3/4 of the yearly variance; a zero variance gives a point
    mass, reported as 0 on the deterministic path and ``-inf`` off it.
    """
    (pf, pm), (nf, nm) = n_prev, n_next
    if min(pf, pm, nf, nm) <= 0:
        return -math.inf
    loc_f, loc_m = _breeding_locations(pf, pm, params.r, params.k)
    sf, sm, _ = params.sigmas
    return (_lognormal_logpdf(nf, loc_f, BREEDING_FRACTION * sf * sf)
            + _lognormal_logpdf(nm, loc_m, BREEDING_FRACTION * sm * sm))


def log_truncation(n_prev, harvest, params: ModelParameters) -> float:
    """Normalizer making the breeding step a distribution on ``N_t > H_t``.

    Returns ``-sum log P(N_t > H_t | N_{t-1/2})`` over both sexes; zero
    harvest contributes exactly 0.
    """
    pf, pm = n_prev
    loc_f, loc_m = _breeding_locations(pf, pm, params.r, params.k)
    sf, sm, _ = params.sigmas
    total = 0.0
    for loc, sigma, h in ((loc_f, sf, harvest[0]), (loc_m, sm, harvest[1])):
        if h <= 0:
            continue
        if sigma == 0:
            total += 0.0 if loc > math.log(h) else math.inf
            continue
        u = (loc - math.log(h)) / (math.sqrt(BREEDING_FRACTION) * sigma)
        total -= float(log_ndtr(u))
    return total


def log_harvest_transition(n_pre, n_post, harvest, params: ModelParameters, n_prev=None) -> float:
    """Log-density of the post-hunt state given the pre-hunt state and harvest.

    Each sex is log-normal around ``log(N_t - H_t)`` with 1/4 of the yearly
    variance.  When ``n_prev`` (the post-hunt state one year earlier) is
    given, the truncation normalizer of the breeding step that produced
    ``n_pre`` is included.
    """
    (af, am), (bf, bm), (hf, hm) = n_pre, n_post, harvest
    if af <= hf or am <= hm or bf <= 0 or bm <= 0:
        return -math.inf
    sf, sm, _ = params.sigmas
    out = (_lognormal_logpdf(bf, math.log(af - hf), HARVEST_FRACTION * sf * sf)
           + _lognormal_logpdf(bm, math.log(am - hm), HARVEST_FRACTION * sm * sm))
    if n_prev is not None:
        out += log_truncation(n_prev, harvest, params)
    return out


def log_observation(traj: PopulationTrajectory, params: ModelParameters, data: Dataset) -> float:
    """Poisson index counts on the pre-hunt states plus survey terms on the post-hunt states."""
    lam_f = params.a_t * data.effort * traj.pre_f
    lam_m = params.a_t * data.effort * traj.pre_m
    out = 0.0
    for y, lam in ((data.count_f, lam_f), (data.count_m, lam_m)):
        out += float(np.sum(y * np.log(lam) - lam - gammaln(y + 1.0)))
    first = int(data.years[0])
    for s in data.surveys:
        i = s.year - first
        for est, n in ((s.est_female, traj.post_f[i]), (s.est_male, traj.post_m[i])):
            z = math.log(est) - math.log(n)
            out += -math.log(s.sd_log) - 0.5 * LOG_2PI - z * z / (2.0 * s.sd_log ** 2)
    return out


def log_prior(
    params: ModelParameters,
    traj_initial,
    priors: PriorConfig,
    *,
    initial_location: tuple[float, float],
    variant: str = "variable",
    use_k: bool = False,
) -> float:
    """Log prior density of the parameters and the year-one pre-hunt state.

    ``variant="fixed"`` drops the countability hierarchy and the omega
    prior and places the ``a_bar`` prior on the single countability.
    ``use_k`` adds the exponential prior on K.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    out = 0.0
    if variant == "variable":
        sigma_a = params.sigma_a
        la = np.log(params.a_t)
        if sigma_a == 0:
            if np.any(params.a_t != params.a_bar):
                return -math.inf
        else:
            z = la - math.log(params.a_bar)
            out += float(np.sum(-la - math.log(sigma_a) - 0.5 * LOG_2PI - z * z / (2 * sigma_a ** 2)))
        w = params.omega
        if 0.0 < w < 1.0:
            out += ((priors.alpha_b - 1) * math.log(w) + (priors.beta_b - 1) * math.log1p(-w)
                    - betaln(priors.alpha_b, priors.beta_b))
        elif priors.alpha_b == 1 and priors.beta_b == 1:
            out += -betaln(1.0, 1.0)
        else:
            return -math.inf
    # tau ~ Exp(beta_tau)
    out += math.log(priors.beta_tau) - priors.beta_tau * params.tau
    # nu ~ Gamma(shape, rate)
    if params.nu <= 0:
        return -math.inf
    out += (priors.alpha_nu * math.log(priors.beta_nu) - math.lgamma(priors.alpha_nu)
            + (priors.alpha_nu - 1) * math.log(params.nu) - priors.beta_nu * params.nu)
    za = (params.a_bar - priors.mu_abar) / priors.sigma_abar
    out += -0.5 * za * za - math.log(priors.sigma_abar) - 0.5 * LOG_2PI
    zr = (params.r - priors.mu_r) / priors.sigma_r
    out += -0.5 * zr * zr - math.log(priors.sigma_r) - 0.5 * LOG_2PI
    if use_k:
        out += math.log(priors.beta_k) - priors.beta_k * params.k
    for n, loc in zip(traj_initial, initial_location):
        out += _lognormal_logpdf(n, loc, priors.sigma_n0 ** 2)
    return out


@dataclass(frozen=True)
class LogPosteriorBreakdown:
    """Log-posterior split into its parts; ``total`` is their plain sum."""

    l1: float  # breeding transitions
    l2: float  # harvest transitions
    l3: float  # truncation normalizers
    l4: float  # index counts and surveys
    l5: float  # priors
    jacobian: float
    total: float

    @classmethod
    def from_terms(cls, l1, l2, l3, l4, l5, jacobian) -> "LogPosteriorBreakdown":
        vals = [float(v) for v in (l1, l2, l3, l4, l5, jacobian)]
        total = vals[0] + vals[1] + vals[2] + vals[3] + vals[4] + vals[5]
        if math.isnan(total):
            total = -math.inf
        return cls(*vals, total=total)


def log_posterior_terms(
    traj: PopulationTrajectory,
    params: ModelParameters,
    data: Dataset,
    priors: PriorConfig,
    variant: str = "variable",
    use_k: bool = False,
) -> LogPosteriorBreakdown:
    """Breakdown of the log-posterior on natural-scale inputs (no Jacobian)."""
    T = data.n_years
    h = np.column_stack([data.harvest_f, data.harvest_m])
    pre = np.column_stack([traj.pre_f, traj.pre_m])
    post = np.column_stack([traj.post_f, traj.post_m])
    l1 = sum(log_breeding_transition(post[t - 1], pre[t], params) for t in range(1, T))
    l2 = sum(log_harvest_transition(pre[t], post[t], h[t], params) for t in range(T))
    l3 = sum(log_truncation(post[t - 1], h[t], params) for t in range(1, T))
    l4 = log_observation(traj, params, data)
    l5 = log_prior(params, pre[0], priors, initial_location=priors.initial_location(data),
                   variant=variant, use_k=use_k)
    return LogPosteriorBreakdown.from_terms(l1, l2, l3, l4, l5, 0.0)


class Posterior:
    """Log-posterior and gradient on the unconstrained coordinates.

    Parameters
    ----------
    data : Dataset
    priors : PriorConfig
    variant : {"variable", "fixed"}
        Time-varying countability with its log-normal hierarchy, or a single
        countability shared by all years.
    use_k : bool
        Enable the density-dependent recruitment coefficient K.
    """

    def __init__(self, data: Dataset, priors: PriorConfig, variant: str = "variable", use_k: bool = False):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        self.data = data
        self.priors = priors
        self.variant = variant
        self.use_k = use_k
        T = self.n_years = data.n_years

        self._hf = np.asarray(data.harvest_f, float)
        self._hm = np.asarray(data.harvest_m, float)
        self._yf = np.asarray(data.count_f, float)
        self._ym = np.asarray(data.count_m, float)
        self._log_effort = np.log(np.asarray(data.effort, float))
        self._count_const = float(np.sum(gammaln(self._yf + 1.0) + gammaln(self._ym + 1.0)))
        pos, est_f, est_m, sd = data.survey_arrays()
        self._spos, self._slf, self._slm, self._sprec = pos, np.log(est_f), np.log(est_m), 1.0 / sd ** 2
        self._survey_const = float(np.sum(-np.log(sd) - 0.5 * LOG_2PI)) * 2.0
        self._spos = np.ascontiguousarray(pos, dtype=np.int64)
        self._n0_loc = np.array(priors.initial_location(data))
        self._hyper = np.array([
            priors.beta_tau, priors.alpha_b, priors.beta_b, priors.alpha_nu, priors.beta_nu,
            priors.mu_abar, priors.sigma_abar, priors.mu_r, priors.sigma_r, priors.beta_k,
            priors.sigma_n0, betaln(priors.alpha_b, priors.beta_b), math.lgamma(priors.alpha_nu),
        ])

        # coordinate layout
        self.sl_pre_f = slice(0, T)
        self.sl_pre_m = slice(T, 2 * T)
        self.sl_post_f = slice(2 * T, 3 * T)
        self.sl_post_m = slice(3 * T, 4 * T)
        i = 4 * T
        if variant == "variable":
            self.sl_la = slice(i, i + T)
            i += T
            self.i_labar = i
            i += 1
        else:
            self.sl_la = slice(i, i + 1)
            self.i_labar = i
            i += 1
        self.i_ltau = i
        i += 1
        if variant == "variable":
            self.i_lomega = i
            i += 1
        else:
            self.i_lomega = None
        self.i_lnu = i
        self.i_r = i + 1
        i += 2
        if use_k:
            self.i_lk = i
            i += 1
        else:
            self.i_lk = None
        self.dim = i

    # -- layout ------------------------------------------------------------

    @property
    def names(self) -> list[str]:
        """Names of the unconstrained coordinates."""
        yrs = [int(y) for y in self.data.years]
        out = [f"log_NF_{y}" for y in yrs] + [f"log_NM_{y}" for y in yrs]
        out += [f"log_NF_{y}.5" for y in yrs] + [f"log_NM_{y}.5" for y in yrs]
        if self.variant == "variable":
            out += [f"log_a_{y}" for y in yrs] + ["log_a_bar"]
        else:
            out += ["log_a"]
        out += ["log_tau"]
        if self.variant == "variable":
            out += ["logit_omega"]
        out += ["log_nu", "r"]
        if self.use_k:
            out += ["log_K"]
        return out

    def decode(self, theta: np.ndarray) -> tuple[PopulationTrajectory, ModelParameters]:
        theta = np.asarray(theta, float)
        traj = PopulationTrajectory.from_states(
            np.exp(theta[self.sl_pre_f]), np.exp(theta[self.sl_pre_m]),
            np.exp(theta[self.sl_post_f]), np.exp(theta[self.sl_post_m]))
        if self.variant == "variable":
            a_t = np.exp(theta[self.sl_la])
            a_bar = math.exp(theta[self.i_labar])
            omega = float(1.0 / (1.0 + np.exp(-theta[self.i_lomega])))
        else:
            a_bar = math.exp(theta[self.i_labar])
            a_t = np.full(self.n_years, a_bar)
            omega = 1.0
        params = ModelParameters(
            r=float(theta[self.i_r]),
            k=math.exp(theta[self.i_lk]) if self.use_k else 0.0,
            tau=math.exp(theta[self.i_ltau]),
            omega=omega,
            nu=math.exp(theta[self.i_lnu]),
            a_bar=a_bar,
            a_t=a_t,
        )
        return traj, params

    def encode(self, traj: PopulationTrajectory, params: ModelParameters) -> np.ndarray:
        theta = np.empty(self.dim)
        theta[self.sl_pre_f] = np.log(traj.pre_f)
        theta[self.sl_pre_m] = np.log(traj.pre_m)
        theta[self.sl_post_f] = np.log(traj.post_f)
        theta[self.sl_post_m] = np.log(traj.post_m)
        if self.variant == "variable":
            theta[self.sl_la] = np.log(params.a_t)
            theta[self.i_labar] = math.log(params.a_bar)
            if not 0.0 < params.omega < 1.0:
                raise ValueError("omega must lie strictly inside (0, 1) for the variable variant")
            theta[self.i_lomega] = math.log(params.omega) - math.log1p(-params.omega)
        else:
            if params.omega != 1.0:
                raise ValueError("the fixed variant requires omega = 1")
            theta[self.i_labar] = math.log(params.a_bar)
        theta[self.i_ltau] = math.log(params.tau)
        theta[self.i_lnu] = math.log(params.nu)
        theta[self.i_r] = params.r
        if self.use_k:
            theta[self.i_lk] = math.log(params.k)
        elif params.k != 0.0:
            raise ValueError("k must be 0 when the K-extension is disabled")
        return theta

    def decoded_row(self, theta: np.ndarray) -> dict[str, float]:
        """Natural-scale view of a state, keyed by readable names."""
        traj, p = self.decode(theta)
        yrs = [int(y) for y in self.data.years]
        row: dict[str, float] = {}
        for name, val in (("r", p.r), ("K", p.k), ("tau", p.tau), ("omega", p.omega),
                          ("nu", p.nu), ("a_bar", p.a_bar), ("sigma_F", p.sigma_f),
                          ("sigma_M", p.sigma_m), ("sigma_a", p.sigma_a)):
            row[name] = float(val)
        for y, a in zip(yrs, p.a_t):
            row[f"a_{y}"] = float(a)
        for i, y in enumerate(yrs):
            row[f"NF_{y}"] = float(traj.pre_f[i])
            row[f"NM_{y}"] = float(traj.pre_m[i])
            row[f"NF_{y}.5"] = float(traj.post_f[i])
            row[f"NM_{y}.5"] = float(traj.post_m[i])
        return row

    # -- density -------------------------------------------------------------

    def breakdown(self, theta: np.ndarray) -> LogPosteriorBreakdown:
        terms, _ = self._evaluate(np.asarray(theta, float), want_grad=False)
        if terms is None:
            return LogPosteriorBreakdown.from_terms(-math.inf, 0, 0, 0, 0, 0)
        return LogPosteriorBreakdown.from_terms(*terms)

    def logp(self, theta: np.ndarray) -> float:
        terms, _ = self._evaluate(np.asarray(theta, float), want_grad=False)
        if terms is None:
            return -math.inf
        total = sum(terms)
        return total if math.isfinite(total) else -math.inf

    def logp_and_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray | None]:
        """Log-posterior and gradient; the gradient is ``None`` where the density is not finite."""
        terms, grad = self._evaluate(np.asarray(theta, float), want_grad=True)
        if terms is None:
            return -math.inf, None
        total = sum(terms)
        if not math.isfinite(total) or not np.all(np.isfinite(grad)):
            return -math.inf, None
        return total, grad

    def grad(self, theta: np.ndarray) -> np.ndarray:
        lp, g = self.logp_and_grad(theta)
        if g is None:
            raise NonFiniteLogPosterior("log-posterior is not finite at this state; no gradient")
        return g

    def _evaluate(self, theta: np.ndarray, want_grad: bool):
        if theta.shape != (self.dim,):
            raise ValueError(f"expected a state of dimension {self.dim}, got shape {theta.shape}")
        ok, terms, grad = _kernel.evaluate(theta, *self._kernel_args(), want_grad)
        if not ok:
            return None, None
        return tuple(float(v) for v in terms), (grad if want_grad else None)

    # -- kernel ------------------------------------------------------------

    def _kernel_args(self):
        return (self.n_years, self.variant == "variable", self.use_k,
                self._hf, self._hm, self._yf, self._ym, self._log_effort, self._count_const,
                self._spos, self._slf, self._slm, self._sprec, self._survey_const,
                self._n0_loc[0], self._n0_loc[1], self._hyper,
                BREEDING_FRACTION, HARVEST_FRACTION)

    # -- initialization ----------------------------------------------------

    def initial_state(self, rng: np.random.Generator | None = None, jitter: float = 0.0) -> np.ndarray:
        """Data-driven starting point.

        Abundances come from the index counts scaled by the countability
        guess, nudged above the harvest; ``a_t`` starts at that guess, tau at
        0.5, omega at 0.5, nu at 1, r at its prior mean and K at 0.01.  When
        surveys exist the countability guess is calibrated against them,
        otherwise it is the prior mean of ``a_bar``.
        """
        d, pr = self.data, self.priors
        a0 = self._countability_guess()
        pre_f = d.count_f / (a0 * d.effort)
        pre_m = d.count_m / (a0 * d.effort)
        pre_f = np.maximum(pre_f, 1.5 * self._hf + 1.0)
        pre_m = np.maximum(pre_m, 1.5 * self._hm + 1.0)
        post_f = pre_f - self._hf
        post_m = pre_m - self._hm
        traj = PopulationTrajectory.from_states(pre_f, pre_m, post_f, post_m)
        params = ModelParameters(
            r=pr.mu_r,
            k=0.01 if self.use_k else 0.0,
            tau=0.5,
            omega=0.5 if self.variant == "variable" else 1.0,
            nu=1.0,
            a_bar=a0,
            a_t=np.full(self.n_years, a0),
        )
        theta = self.encode(traj, params)
        if jitter > 0 and rng is not None:
            theta = theta + jitter * rng.standard_normal(self.dim)
            # keep post-hunt and pre-hunt states consistent with the harvest
            nf, nm = np.exp(theta[self.sl_pre_f]), np.exp(theta[self.sl_pre_m])
            theta[self.sl_pre_f] = np.log(np.maximum(nf, 1.05 * self._hf + 1.0))
            theta[self.sl_pre_m] = np.log(np.maximum(nm, 1.05 * self._hm + 1.0))
        return theta

    def _countability_guess(self) -> float:
        d = self.data
        if d.surveys:
            ratios = []
            for s in d.surveys:
                i = s.year - int(d.years[0])
                n_pre = s.est_female + s.est_male + d.harvest_f[i] + d.harvest_m[i]
                c = d.count_f[i] + d.count_m[i]
                if c > 0:
                    ratios.append(c / (d.effort[i] * n_pre))
            if ratios:
                return float(np.median(ratios))
        return self.priors.mu_abar if self.priors.mu_abar > 0 else 1.0


def log_posterior(state, data: Dataset, priors: PriorConfig, variant: str = "variable",
                  use_k: bool = False) -> LogPosteriorBreakdown:
    """Breakdown of the log-posterior at an unconstrained state."""
    return Posterior(data, priors, variant, use_k).breakdown(np.asarray(state, float))


def grad_log_posterior(state, data: Dataset, priors: PriorConfig, variant: str = "variable",
                       use_k: bool = False) -> np.ndarray:
    """Exact gradient at an unconstrained state.

    Raises :class:`NonFiniteLogPosterior` where the density is zero.
    """
    return Posterior(data, priors, variant, use_k).grad(np.asarray(state, float))
