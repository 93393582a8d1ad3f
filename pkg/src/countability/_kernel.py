"""Compiled log-posterior and gradient kernel used by :class:`Posterior`."""
from __future__ import annotations

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)
_HALF_LOG_2PI = 0.5 * LOG_2PI


@njit(cache=True)
def _softplus(x):
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def _logaddexp(a, b):
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True)
def log_ndtr(u):
    """log of the standard normal CDF, accurate in the far left tail."""
    if u > -20.0:
        return math.log(0.5 * math.erfc(-u / math.sqrt(2.0)))
    # asymptotic expansion of the Mills ratio
    u2 = u * u
    series = 1.0 - 1.0 / u2 + 3.0 / (u2 * u2) - 15.0 / (u2 * u2 * u2) + 105.0 / (u2 * u2 * u2 * u2)
    return -0.5 * u2 - math.log(-u) - _HALF_LOG_2PI + math.log(series)


@njit(cache=True)
def evaluate(theta, T, variable, use_k,
             hf, hm, yf_obs, ym_obs, log_effort, count_const,
             spos, slf, slm, sprec, survey_const,
             n0_loc_f, n0_loc_m, hyper, bfrac, hfrac, want_grad):
    """Return (ok, terms[6], grad).

    ``hyper`` = (beta_tau, alpha_b, beta_b, alpha_nu, beta_nu, mu_abar,
    sigma_abar, mu_r, sigma_r, beta_k, sigma_n0, log_beta_ab, lgamma_alpha_nu).
    ``ok`` is False where the density is zero or not representable.
    """
    terms = np.zeros(6)
    d = theta.shape[0]
    g = np.zeros(d)
    for i in range(d):
        if not math.isfinite(theta[i]):
            return False, terms, g

    i_la = 4 * T
    if variable:
        i_labar = i_la + T
    else:
        i_labar = i_la
    i_ltau = i_labar + 1
    if variable:
        i_lw = i_ltau + 1
        i_lnu = i_lw + 1
    else:
        i_lw = -1
        i_lnu = i_ltau + 1
    i_r = i_lnu + 1
    i_lk = i_r + 1

    beta_tau, alpha_b, beta_b = hyper[0], hyper[1], hyper[2]
    alpha_nu, beta_nu = hyper[3], hyper[4]
    mu_abar, sigma_abar, mu_r, sigma_r = hyper[5], hyper[6], hyper[7], hyper[8]
    beta_k, sigma_n0, log_beta_ab, lgamma_alpha_nu = hyper[9], hyper[10], hyper[11], hyper[12]

    ltau = theta[i_ltau]
    lnu = theta[i_lnu]
    r = theta[i_r]
    tau = math.exp(ltau)
    nu = math.exp(lnu)
    if variable:
        lw = theta[i_lw]
        log_w = -_softplus(-lw)
        log_1mw = -_softplus(lw)
        w = math.exp(log_w)
    else:
        log_w = 0.0
        log_1mw = 0.0
        w = 1.0
    log_sf = log_w + ltau
    log_sm = log_sf + lnu
    sf2 = math.exp(2.0 * log_sf)
    sm2 = math.exp(2.0 * log_sm)
    if not (sf2 > 0.0 and sm2 > 0.0 and math.isfinite(sf2) and math.isfinite(sm2)):
        return False, terms, g
    if use_k:
        lk = theta[i_lk]
        k = math.exp(lk)
    else:
        lk = 0.0
        k = 0.0

    for t in range(T):
        if math.exp(theta[t]) <= hf[t] or math.exp(theta[T + t]) <= hm[t]:
            return False, terms, g

    vbf = bfrac * sf2
    vbm = bfrac * sm2
    vhf = hfrac * sf2
    vhm = hfrac * sm2
    sdbf = math.sqrt(vbf)
    sdbm = math.sqrt(vbm)

    l1 = 0.0
    l2 = 0.0
    l3 = 0.0
    l4 = 0.0
    l5 = 0.0
    jac = 0.0
    g_logsf = 0.0
    g_logsm = 0.0
    g_r = 0.0
    g_lk = 0.0

    # breeding t-1/2 -> t and its truncation to N_t > H_t
    cb_f = 0.5 * math.log(2.0 * math.pi * bfrac) + log_sf
    cb_m = 0.5 * math.log(2.0 * math.pi * bfrac) + log_sm
    for t in range(1, T):
        yfp = theta[2 * T + t - 1]
        ymp = theta[3 * T + t - 1]
        xf = theta[t]
        xm = theta[T + t]
        rho = r - k * yfp
        sp_rho = _softplus(rho)
        loc_f = sp_rho + yfp
        log_rec = rho + yfp
        loc_m = _logaddexp(ymp, log_rec)
        ef = xf - loc_f
        em = xm - loc_m
        l1 += -xf - xm - cb_f - cb_m - ef * ef / (2.0 * vbf) - em * em / (2.0 * vbm)
        d_locf = ef / vbf
        d_locm = em / vbm
        if want_grad:
            g[t] += -1.0 - ef / vbf
            g[T + t] += -1.0 - em / vbm
            g_logsf += -1.0 + ef * ef / vbf
            g_logsm += -1.0 + em * em / vbm
        if hf[t] > 0.0:
            u = (loc_f - math.log(hf[t])) / sdbf
            ln = log_ndtr(u)
            l3 -= ln
            if want_grad:
                mills = math.exp(-0.5 * u * u - _HALF_LOG_2PI - ln)
                d_locf -= mills / sdbf
                g_logsf += mills * u
        if hm[t] > 0.0:
            u = (loc_m - math.log(hm[t])) / sdbm
            ln = log_ndtr(u)
            l3 -= ln
            if want_grad:
                mills = math.exp(-0.5 * u * u - _HALF_LOG_2PI - ln)
                d_locm -= mills / sdbm
                g_logsm += mills * u
        if want_grad:
            p_f = math.exp(rho - sp_rho)
            w_m = math.exp(log_rec - loc_m)
            g[2 * T + t - 1] += d_locf * (1.0 - k * p_f) + d_locm * w_m * (1.0 - k)
            g[3 * T + t - 1] += d_locm * (1.0 - w_m)
            g_r += d_locf * p_f + d_locm * w_m
            g_lk += -k * yfp * (d_locf * p_f + d_locm * w_m)

    # harvest t -> t+1/2, observations, Jacobian of the log abundances
    ch_f = 0.5 * math.log(2.0 * math.pi * hfrac) + log_sf
    ch_m = 0.5 * math.log(2.0 * math.pi * hfrac) + log_sm
    for t in range(T):
        xf = theta[t]
        xm = theta[T + t]
        yf = theta[2 * T + t]
        ym = theta[3 * T + t]
        qf = hf[t] * math.exp(-xf)
        qm = hm[t] * math.exp(-xm)
        ef = yf - (xf + math.log1p(-qf))
        em = ym - (xm + math.log1p(-qm))
        l2 += -yf - ym - ch_f - ch_m - ef * ef / (2.0 * vhf) - em * em / (2.0 * vhm)
        if variable:
            la = theta[i_la + t]
        else:
            la = theta[i_la]
        lam_f = math.exp(la + log_effort[t] + xf)
        lam_m = math.exp(la + log_effort[t] + xm)
        l4 += yf_obs[t] * (la + log_effort[t] + xf) - lam_f + ym_obs[t] * (la + log_effort[t] + xm) - lam_m
        jac += xf + xm + yf + ym
        if want_grad:
            g[2 * T + t] += -1.0 - ef / vhf + 1.0
            g[3 * T + t] += -1.0 - em / vhm + 1.0
            g[t] += (ef / vhf) / (1.0 - qf) + (yf_obs[t] - lam_f) + 1.0
            g[T + t] += (em / vhm) / (1.0 - qm) + (ym_obs[t] - lam_m) + 1.0
            g_logsf += -1.0 + ef * ef / vhf
            g_logsm += -1.0 + em * em / vhm
            g_la_t = yf_obs[t] - lam_f + ym_obs[t] - lam_m
            if variable:
                g[i_la + t] += g_la_t
            else:
                g[i_la] += g_la_t
    l4 -= count_const

    for j in range(spos.shape[0]):
        p = spos[j]
        esf = slf[j] - theta[2 * T + p]
        esm = slm[j] - theta[3 * T + p]
        l4 += -0.5 * sprec[j] * (esf * esf + esm * esm)
        if want_grad:
            g[2 * T + p] += sprec[j] * esf
            g[3 * T + p] += sprec[j] * esm
    l4 += survey_const

    # priors
    labar = theta[i_labar]
    abar = math.exp(labar)
    g_logsa = 0.0
    if variable:
        log_sa = log_1mw + ltau
        sa2 = math.exp(2.0 * log_sa)
        if not sa2 > 0.0:
            return False, terms, g
        s_ea = 0.0
        for t in range(T):
            la = theta[i_la + t]
            ea = la - labar
            l5 += -la - log_sa - _HALF_LOG_2PI - ea * ea / (2.0 * sa2)
            jac += la
            if want_grad:
                # -1 from the density, +1 from the Jacobian
                g[i_la + t] += -ea / sa2
                s_ea += ea
                g_logsa += -1.0 + ea * ea / sa2
        l5 += (alpha_b - 1.0) * log_w + (beta_b - 1.0) * log_1mw - log_beta_ab
        jac += labar + log_w + log_1mw
        if want_grad:
            g[i_labar] += s_ea / sa2 + 1.0
    else:
        jac += labar
        if want_grad:
            g[i_labar] += 1.0
    l5 += math.log(beta_tau) - beta_tau * tau
    l5 += alpha_nu * math.log(beta_nu) - lgamma_alpha_nu + (alpha_nu - 1.0) * lnu - beta_nu * nu
    zab = (abar - mu_abar) / sigma_abar
    l5 += -0.5 * zab * zab - math.log(sigma_abar) - _HALF_LOG_2PI
    zr = (r - mu_r) / sigma_r
    l5 += -0.5 * zr * zr - math.log(sigma_r) - _HALF_LOG_2PI
    if use_k:
        l5 += math.log(beta_k) - beta_k * k
        jac += lk
    v0 = sigma_n0 * sigma_n0
    e0f = theta[0] - n0_loc_f
    e0m = theta[T] - n0_loc_m
    l5 += -theta[0] - math.log(sigma_n0) - _HALF_LOG_2PI - e0f * e0f / (2.0 * v0)
    l5 += -theta[T] - math.log(sigma_n0) - _HALF_LOG_2PI - e0m * e0m / (2.0 * v0)
    jac += ltau + lnu

    terms[0] = l1
    terms[1] = l2
    terms[2] = l3
    terms[3] = l4
    terms[4] = l5
    terms[5] = jac
    if not want_grad:
        return True, terms, g

    g[i_labar] += -zab / sigma_abar * abar
    g[i_ltau] += -beta_tau * tau + 1.0
    g[i_lnu] += (alpha_nu - 1.0) - beta_nu * nu + 1.0
    g[i_r] += g_r - zr / sigma_r
    if use_k:
        g[i_lk] += g_lk - beta_k * k + 1.0
    g[0] += -1.0 - e0f / v0
    g[T] += -1.0 - e0m / v0
    # chain rule through log sigma_F, log sigma_M, log sigma_a
    g[i_ltau] += g_logsf + g_logsm + g_logsa
    g[i_lnu] += g_logsm
    if variable:
        g[i_lw] += ((1.0 - w) * (g_logsf + g_logsm) - w * g_logsa
                    + (alpha_b - 1.0) * (1.0 - w) - (beta_b - 1.0) * w + 1.0 - 2.0 * w)
    return True, terms, g

