"""Stochastic volatility in the non-centred and centred parameterisations.

The squared shocks are log-linearised, ``log(u^2 + c) = log sigma^2 + log eps^2``,
and ``log eps^2`` is approximated by a ten-component normal mixture so that the
log-volatility path is conditionally Gaussian. Paths are drawn jointly from
their tridiagonal-precision posterior in O(T).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import linalg

from ..distributions import log_ig2_pdf, rgig, rig2, rtruncnorm

# Omori, Chib, Shephard & Nakajima (2007), Table 1: ten-component mixture
# approximation of the log chi-square(1) density.
AUX_MIXTURE_PROB = np.array(
    [0.00609, 0.04775, 0.13057, 0.20674, 0.22715, 0.18842, 0.12047, 0.05591, 0.01575, 0.00115]
)
AUX_MIXTURE_MEAN = np.array(
    [1.92677, 1.34744, 0.73504, 0.02266, -0.85173, -1.97278, -3.46788, -5.55246, -8.68384, -14.65000]
)
AUX_MIXTURE_VAR = np.array(
    [0.11265, 0.17788, 0.26768, 0.40611, 0.62699, 0.98583, 1.57469, 2.54498, 4.16591, 7.33342]
)

LOG_OFFSET = 1e-10

_LOG_W0 = np.log(AUX_MIXTURE_PROB) - 0.5 * np.log(2.0 * np.pi * AUX_MIXTURE_VAR)


def log_squared_shocks(u):
    return np.log(np.square(u) + LOG_OFFSET)


def aux_indicator_weights(residual) -> np.ndarray:
    """Posterior component probabilities for residuals ``log u^2 - log sigma^2``.

    Returns an array with a trailing axis of length 10 summing to one.
    """
    r = np.asarray(residual, dtype=float)[..., None]
    logw = _LOG_W0 - 0.5 * (r - AUX_MIXTURE_MEAN) ** 2 / AUX_MIXTURE_VAR
    logw -= logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=-1, keepdims=True)


def sample_aux_indicators(log_sq, log_sigma2, rng: np.random.Generator) -> np.ndarray:
    """Draw mixture indicators (0-based) given the log-linearised observations."""
    w = aux_indicator_weights(np.asarray(log_sq) - np.asarray(log_sigma2))
    cdf = np.cumsum(w, axis=-1)
    u = rng.random(cdf.shape[:-1])[..., None]
    idx = (cdf < u * cdf[..., -1:]).sum(axis=-1)
    return np.minimum(idx, 9).astype(np.int8)


def ar1_precision_bands(T: int, rho: float, state_var: float):
    """Lower band storage of the AR(1) prior precision with a zero initial state."""
    diag = np.full(T, (1.0 + rho * rho) / state_var)
    diag[-1] = 1.0 / state_var
    off = np.full(T, -rho / state_var)
    off[-1] = 0.0
    return diag, off


def sample_log_volatility(obs, loading, obs_var, rho, state_var, rng: np.random.Generator):
    """Joint draw of a latent AR(1) path from its conditionally Gaussian posterior.

    Model: ``obs_t = loading * h_t + e_t`` with ``e_t ~ N(0, obs_var_t)`` and
    ``h_t = rho h_{t-1} + v_t``, ``v_t ~ N(0, state_var)``, ``h_0 = 0``.
    The posterior precision is tridiagonal; its banded Cholesky factor gives
    the mean and a draw at linear cost in ``T``.
    """
    if not abs(rho) < 1.0:
        raise ValueError("autoregressive parameter must lie in (-1, 1)")
    obs = np.asarray(obs, dtype=float)
    T = obs.shape[0]
    obs_prec = loading * loading / np.asarray(obs_var, dtype=float)
    diag, off = ar1_precision_bands(T, rho, state_var)
    ab = np.empty((2, T))
    ab[0] = diag + obs_prec
    ab[1] = off
    chol = linalg.cholesky_banded(ab, lower=True)
    b = loading * obs / obs_var
    mean = linalg.cho_solve_banded((chol, True), b)
    upper = np.empty((2, T))
    upper[0, 0] = 0.0
    upper[0, 1:] = chol[1, :-1]
    upper[1] = chol[0]
    z = rng.standard_normal(T)
    return mean + linalg.solve_banded((0, 1), upper, z)


def to_centred(omega, h):
    """Map the non-centred pair (omega, h) to (h_tilde, sigma_v^2)."""
    return omega * np.asarray(h), omega * omega


def to_noncentred(h_tilde, sigma_v2, sign=1.0):
    omega = math.copysign(math.sqrt(sigma_v2), sign)
    return omega, np.asarray(h_tilde) / omega


def _ar_stats(h):
    lagged = np.concatenate([[0.0], h[:-1]])
    return float(lagged @ lagged), float(lagged @ h), lagged


def _sample_rho(h, state_var, rng):
    sxx, sxy, _ = _ar_stats(h)
    if sxx <= 0.0:
        return rng.uniform(-1.0, 1.0)
    return rtruncnorm(rng, sxy / sxx, math.sqrt(state_var / sxx), -1.0, 1.0)


def _innovation_ss(h, rho):
    lagged = np.concatenate([[0.0], h[:-1]])
    r = h - rho * lagged
    return float(r @ r)


def update_noncentred(state, spec, U, rng: np.random.Generator) -> None:
    """One sweep of the non-centred SV block, all equations, in place."""
    pr = spec.prior
    N, T = U.shape
    log_sq = log_squared_shocks(U)
    ind = sample_aux_indicators(log_sq, state.omega[:, None] * state.h, rng)
    state.sv_indicators = ind
    for n in range(N):
        m = AUX_MIXTURE_MEAN[ind[n]]
        v = AUX_MIXTURE_VAR[ind[n]]
        z = log_sq[n] - m
        h = sample_log_volatility(z, state.omega[n], v, state.rho[n], 1.0, rng)

        prec = float(h @ (h / v)) + 1.0 / state.sigma2_omega[n]
        mean = float(h @ (z / v)) / prec
        omega = mean + rng.standard_normal() / math.sqrt(prec)

        # interweave: redraw the scale in the centred parameterisation
        h_tilde = omega * h
        q = _innovation_ss(h_tilde, state.rho[n])
        if q > 0.0 and omega != 0.0:
            w2 = rgig(rng, 0.5 - 0.5 * T, q, 1.0 / state.sigma2_omega[n])
            omega = math.copysign(math.sqrt(w2), omega)
            h = h_tilde / omega

        state.rho[n] = _sample_rho(h, 1.0, rng)
        state.sigma2_omega[n] = rgig(rng, pr.a_sigma - 0.5, omega * omega, 2.0 / state.s_sigma)
        state.omega[n] = omega
        state.h[n] = h

    state.s_sigma = float(
        rig2(rng, pr.s_sv + 2.0 * state.sigma2_omega.sum(), pr.nu_sv + 2.0 * N * pr.a_sigma)
    )
    state.sigma2 = np.exp(state.omega[:, None] * state.h)


def _log_prior_omega_centred(omega, s_v, a_v):
    # density of omega = +-sqrt(sigma_v^2) under sigma_v^2 ~ IG2(s_v, a_v)
    return float(log_ig2_pdf(omega * omega, s_v, a_v)) + math.log(abs(omega))


def update_centred(state, spec, U, rng: np.random.Generator) -> None:
    """One sweep of the centred SV block, all equations, in place."""
    pr = spec.prior
    N, T = U.shape
    log_sq = log_squared_shocks(U)
    ind = sample_aux_indicators(log_sq, state.h, rng)
    state.sv_indicators = ind
    for n in range(N):
        m = AUX_MIXTURE_MEAN[ind[n]]
        v = AUX_MIXTURE_VAR[ind[n]]
        z = log_sq[n] - m
        ht = sample_log_volatility(z, 1.0, v, state.rho[n], state.sigma_v2[n], rng)
        rho = _sample_rho(ht, state.sigma_v2[n], rng)
        sv2 = float(rig2(rng, state.s_v[n] + _innovation_ss(ht, rho), pr.a_v + T))

        # interweave: Metropolis step for the scale in the non-centred form
        omega, h = to_noncentred(ht, sv2)
        lik_prec = float(h @ (h / v))
        if lik_prec > 0.0:
            lik_mean = float(h @ (z / v)) / lik_prec
            proposal = lik_mean + rng.standard_normal() / math.sqrt(lik_prec)
            if proposal != 0.0:
                log_ratio = _log_prior_omega_centred(proposal, state.s_v[n], pr.a_v) - _log_prior_omega_centred(
                    omega, state.s_v[n], pr.a_v
                )
                if math.log(rng.random()) < log_ratio:
                    sv2 = proposal * proposal
                    ht = proposal * h

        state.s_v[n] = rng.gamma(
            pr.a_sigma + 0.5 * pr.a_v, 1.0 / (1.0 / state.s_sigma + 0.5 / sv2)
        )
        state.rho[n] = rho
        state.sigma_v2[n] = sv2
        state.h[n] = ht

    state.s_sigma = float(rig2(rng, pr.s_sv + 2.0 * state.s_v.sum(), pr.nu_sv + 2.0 * N * pr.a_sigma))
    state.sigma2 = np.exp(state.h)


def sample_sv_parameters(state, spec, U, rng: np.random.Generator) -> None:
    """Full SV update (indicators, paths, parameters, hierarchy, interweaving)."""
    if spec.family.value == "sv":
        update_noncentred(state, spec, U, rng)
    else:
        update_centred(state, spec, U, rng)


def initialise(state, spec, rng: np.random.Generator) -> None:
    N, T = spec.N, spec.T
    state.h = np.zeros((N, T))
    state.rho = np.full(N, 0.5)
    state.s_sigma = 1.0
    state.sv_indicators = np.zeros((N, T), dtype=np.int8)
    if spec.family.value == "sv":
        state.omega = np.full(N, 0.1)
        state.sigma2_omega = np.ones(N)
    else:
        state.sigma_v2 = np.full(N, 0.01)
        state.s_v = np.full(N, 0.1)
    state.sigma2 = np.ones((N, T))
