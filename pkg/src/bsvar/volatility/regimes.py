"""Markov-switching and mixture heteroskedasticity.

Regime variances of equation ``n`` live on the scaled simplex
``sum_m sigma2[n, m] = M``. Their full conditional combines a Dirichlet prior
with normal likelihood terms and is not a standard law; it is sampled by an
independence Metropolis step whose proposal draws unconstrained GIG variates
and normalises them. The proposal density of the normalised vector is
available in closed form through a one-dimensional Bessel integral, so the
acceptance ratio is exact.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from numba import njit
from scipy import integrate, optimize, special

from ..distributions import (
    log_dirichlet_pdf,
    log_gig_normaliser,
    log_ig2_pdf,
    rdirichlet_log,
    rgig,
)

logger = logging.getLogger(__name__)

MAX_CONSTRAINED_CELLS = 2_000_000


class RegimeError(RuntimeError):
    """Raised when a regime constraint cannot be met."""


# ---------------------------------------------------------------------------
# Emissions and forward filtering, backward sampling
# ---------------------------------------------------------------------------


def log_emissions(U, sigma2_regime) -> np.ndarray:
    """``M x T`` log densities of the shocks under each regime's variances."""
    log_s2 = np.log(sigma2_regime)
    quad = (1.0 / sigma2_regime).T @ np.square(U)
    return -0.5 * (U.shape[0] * math.log(2.0 * math.pi) + log_s2.sum(axis=0)[:, None] + quad)


@njit(cache=True)
def _forward(emis, P, pi0):
    M, T = emis.shape
    filt = np.empty((M, T))
    loglik = 0.0
    pred = pi0.copy()
    for t in range(T):
        tot = 0.0
        for m in range(M):
            filt[m, t] = pred[m] * emis[m, t]
            tot += filt[m, t]
        if not tot > 0.0:
            return filt, -np.inf
        for m in range(M):
            filt[m, t] /= tot
        loglik += np.log(tot)
        if t + 1 < T:
            for j in range(M):
                acc = 0.0
                for i in range(M):
                    acc += filt[i, t] * P[i, j]
                pred[j] = acc
    return filt, loglik


@njit(cache=True)
def _backward_sample(filt, P, uniforms):
    M, T = filt.shape
    path = np.empty(T, dtype=np.int64)
    w = np.empty(M)
    for t in range(T - 1, -1, -1):
        tot = 0.0
        for m in range(M):
            if t == T - 1:
                w[m] = filt[m, t]
            else:
                w[m] = filt[m, t] * P[m, path[t + 1]]
            tot += w[m]
        target = uniforms[t] * tot
        acc = 0.0
        choice = M - 1
        for m in range(M):
            acc += w[m]
            if target < acc:
                choice = m
                break
        path[t] = choice
    return path


@njit(cache=True)
def _smooth(filt, P):
    M, T = filt.shape
    sm = np.empty((M, T))
    for m in range(M):
        sm[m, T - 1] = filt[m, T - 1]
    for t in range(T - 2, -1, -1):
        for j in range(M):
            pred = 0.0
            for i in range(M):
                pred += filt[i, t] * P[i, j]
            ratio = sm[j, t + 1] / pred if pred > 0.0 else 0.0
            for i in range(M):
                if j == 0:
                    sm[i, t] = 0.0
                sm[i, t] += filt[i, t] * P[i, j] * ratio
        tot = 0.0
        for i in range(M):
            tot += sm[i, t]
        for i in range(M):
            sm[i, t] /= tot
    return sm


def _scaled(emission_densities, log):
    e = np.asarray(emission_densities, dtype=float)
    if log:
        return np.exp(e - e.max(axis=0, keepdims=True))
    scale = e.max(axis=0, keepdims=True)
    if np.any(scale <= 0.0):
        raise RegimeError("all-zero emission column: every regime has zero density at some period")
    return e / scale


def filter_regimes(emission_densities, P, pi0, log=False):
    """Filtered and smoothed regime probabilities, each ``M x T``."""
    emis = _scaled(emission_densities, log)
    P = np.ascontiguousarray(P, dtype=float)
    filt, ll = _forward(emis, P, np.asarray(pi0, dtype=float))
    if not np.isfinite(ll):
        raise RegimeError("forward filter underflow: no regime can explain an observation")
    return filt, _smooth(filt, P)


def ffbs_states(emission_densities, P, pi0, rng: np.random.Generator, log=False):
    """Joint draw of a regime path by forward filtering, backward sampling.

    Returns ``(path, filtered, smoothed)`` with a 0-based path of length T.
    """
    emis = _scaled(emission_densities, log)
    P = np.ascontiguousarray(P, dtype=float)
    filt, ll = _forward(emis, P, np.asarray(pi0, dtype=float))
    if not np.isfinite(ll):
        raise RegimeError("forward filter underflow: no regime can explain an observation")
    path = _backward_sample(filt, P, rng.random(emis.shape[1]))
    return path, filt, _smooth(filt, P)


# ---------------------------------------------------------------------------
# Occupancy constraint
# ---------------------------------------------------------------------------
#
# The forward recursion runs over (regime, capped visit counts). Counts are
# encoded in base k + 1 with one digit per regime and stop growing at k, so
# the final state "every digit equals k" collects exactly the paths that
# visit each regime at least k times.


@njit(cache=True)
def _constrained_forward(emis, P, pi0, k):
    M, T = emis.shape
    base = k + 1
    ncount = base**M
    pw = np.empty(M, dtype=np.int64)
    pw[0] = 1
    for m in range(1, M):
        pw[m] = pw[m - 1] * base
    alpha = np.zeros((T, M, ncount))
    for m in range(M):
        alpha[0, m, pw[m]] = pi0[m] * emis[m, 0]
    tot = alpha[0].sum()
    if not tot > 0.0:
        return alpha, pw, False
    alpha[0] /= tot
    for t in range(1, T):
        for m in range(M):
            for c in range(ncount):
                a = alpha[t - 1, m, c]
                if a == 0.0:
                    continue
                for j in range(M):
                    nc = c + pw[j] if (c // pw[j]) % base < k else c
                    alpha[t, j, nc] += a * P[m, j] * emis[j, t]
        tot = alpha[t].sum()
        if not tot > 0.0:
            return alpha, pw, False
        alpha[t] /= tot
    return alpha, pw, True


@njit(cache=True)
def _constrained_backward(alpha, P, pw, k, uniforms):
    T, M, ncount = alpha.shape
    base = k + 1
    full = 0
    for m in range(M):
        full += k * pw[m]
    path = np.empty(T, dtype=np.int64)
    tot = 0.0
    for m in range(M):
        tot += alpha[T - 1, m, full]
    if not tot > 0.0:
        return path, False
    target = uniforms[T - 1] * tot
    acc = 0.0
    cur_m = M - 1
    for m in range(M):
        acc += alpha[T - 1, m, full]
        if target < acc:
            cur_m = m
            break
    cur_c = full
    path[T - 1] = cur_m
    w = np.empty(2 * M)
    cands = np.empty(2 * M, dtype=np.int64)
    for t in range(T - 2, -1, -1):
        j = cur_m
        digit = (cur_c // pw[j]) % base
        n = 0
        tot = 0.0
        for m in range(M):
            # predecessor count that advanced to cur_c on entering j
            prev = cur_c - pw[j]
            cands[n] = m * ncount + prev
            w[n] = alpha[t, m, prev] * P[m, j]
            tot += w[n]
            n += 1
            if digit == k:
                # the digit may already have been capped
                cands[n] = m * ncount + cur_c
                w[n] = alpha[t, m, cur_c] * P[m, j]
                tot += w[n]
                n += 1
        if not tot > 0.0:
            return path, False
        target = uniforms[t] * tot
        acc = 0.0
        pick = n - 1
        for i in range(n):
            acc += w[i]
            if target < acc:
                pick = i
                break
        cur_m = cands[pick] // ncount
        cur_c = cands[pick] % ncount
        path[t] = cur_m
    return path, True


def _constrained_feasible(M, T, k) -> bool:
    return M * (k + 1) ** M * T <= MAX_CONSTRAINED_CELLS


def ffbs_constrained(log_emissions_, P, pi0, k: int, rng: np.random.Generator):
    """Exact draw of a regime path conditional on every regime occurring ``k`` times or more."""
    emis = _scaled(log_emissions_, log=True)
    alpha, pw, ok = _constrained_forward(emis, np.ascontiguousarray(P, float), np.asarray(pi0, float), int(k))
    if not ok:
        raise RegimeError("forward filter underflow under the occupancy constraint")
    path, ok = _constrained_backward(alpha, np.ascontiguousarray(P, float), pw, int(k), rng.random(emis.shape[1]))
    if not ok:
        raise RegimeError("no regime path satisfies the occupancy constraint")
    return path


def _occupied(path, M, k) -> bool:
    if k <= 0:
        return True
    return bool(np.all(np.bincount(path, minlength=M) >= k))


# ---------------------------------------------------------------------------
# Transition probabilities and mixture weights
# ---------------------------------------------------------------------------


def transition_counts(path, M) -> np.ndarray:
    counts = np.zeros((M, M))
    np.add.at(counts, (path[:-1], path[1:]), 1.0)
    return counts


def _draw_transitions(path, M, e, e0, rng):
    counts = transition_counts(path, M)
    logP = np.vstack([rdirichlet_log(rng, e + counts[m]) for m in range(M)])
    first = np.zeros(M)
    first[path[0]] = 1.0
    logpi0 = rdirichlet_log(rng, e0 + first)
    return logP, logpi0


def sample_transition_matrix(path, M, e, e0, rng: np.random.Generator):
    """Draw ``(P, pi0)`` from their Dirichlet full conditionals.

    Rows of ``P`` get ``e`` plus transition counts and ``pi0`` gets ``e0`` plus
    the initial-state indicator. The occupancy truncation applies to the
    joint prior of ``(P, pi0, path)``, so it does not alter these laws.
    """
    logP, logpi0 = _draw_transitions(np.asarray(path), M, e, e0, rng)
    P, pi0 = np.exp(logP), np.exp(logpi0)
    return P / P.sum(axis=1, keepdims=True), pi0 / pi0.sum()


def sample_mixture_weights(path, M, e0, rng):
    counts = np.bincount(path, minlength=M).astype(float)
    pi0 = np.exp(rdirichlet_log(rng, e0 + counts))
    return pi0 / pi0.sum()


def sample_sparse_concentration(e, log_rows, s_e, nu_e, rng, step=0.3) -> float:
    """Random-walk Metropolis update of the Dirichlet concentration ``e``.

    ``log_rows`` holds log-probability vectors (rows of P, or pi0) whose
    symmetric Dirichlet prior uses ``e``; the hyper-prior is IG2(s_e, nu_e).
    """
    log_rows = np.atleast_2d(log_rows)
    M = log_rows.shape[1]

    def logpost(x):
        alpha = np.full(M, x)
        return float(log_ig2_pdf(x, s_e, nu_e)) + sum(log_dirichlet_pdf(r, alpha) for r in log_rows) + math.log(x)

    prop = e * math.exp(step * rng.standard_normal())
    if math.log(rng.random()) < logpost(prop) - logpost(e):
        return prop
    return e


# ---------------------------------------------------------------------------
# Regime variances
# ---------------------------------------------------------------------------


def _proposal_scale(M, e_sigma):
    return M / (M * e_sigma - 1.0) if M * e_sigma > 1.0 else float(M)


def regime_sufficient_stats(u_n, labels, M):
    counts = np.bincount(labels, minlength=M).astype(float)
    ss = np.bincount(labels, weights=np.square(u_n), minlength=M)
    return counts, ss


def _log_target(x, lam, ss, M):
    return float(np.sum((lam - 1.0) * np.log(x)) - np.sum(ss / (2.0 * x)) / M)


def _log_weight(x, lam, ss, M, theta):
    C = float(np.sum(ss / (2.0 * x)))
    Lam = float(lam.sum())
    return -C / M - log_gig_normaliser(Lam, 2.0 * C, 2.0 / theta)


def _propose(lam, ss, theta, rng):
    g = np.array([rgig(rng, l, s, 2.0 / theta) for l, s in zip(lam, ss)])
    return g / g.sum()


def sample_regime_variances(U, labels, M, e_sigma, rng: np.random.Generator, current=None, require_occupied=False):
    """Draw ``sigma2[n, m]`` with ``sum_m sigma2[n, m] = M`` for every equation.

    Parameters
    ----------
    U : array (N, T)
        Structural shocks.
    labels : int array (T,)
        Regime or component allocation of each period (0-based).
    current : array (N, M), optional
        Present value; enables the Metropolis correction. Without it the
        proposal is returned as is (used for initialisation only).
    """
    U = np.atleast_2d(U)
    N = U.shape[0]
    if M == 1:
        return np.ones((N, 1))
    theta = _proposal_scale(M, e_sigma)
    out = np.empty((N, M))
    for n in range(N):
        counts, ss = regime_sufficient_stats(U[n], labels, M)
        if require_occupied and np.any(counts == 0):
            raise RegimeError("empty regime in a finite model: every regime needs occurrences")
        lam = e_sigma - 0.5 * counts
        x_new = _propose(lam, ss, theta, rng)
        if current is not None:
            x_old = current[n] / M
            log_acc = _log_weight(x_new, lam, ss, M, theta) - _log_weight(x_old, lam, ss, M, theta)
            if not math.log(rng.random()) < log_acc:
                x_new = x_old
        out[n] = M * x_new
    return out


def log_regime_variance_normaliser(counts, ss, M, e_sigma, rng=None, n_importance=512) -> float:
    """log normalising constant of the regime-variance full conditional on the simplex.

    The density is taken over the first ``M - 1`` coordinates of
    ``x = sigma2 / M``. Two regimes are integrated by quadrature; larger
    ``M`` uses importance sampling with the normalised-GIG proposal.
    """
    lam = e_sigma - 0.5 * np.asarray(counts, dtype=float)
    ss = np.asarray(ss, dtype=float)
    if M == 2:

        def f(z):
            x1 = special.expit(z)
            x = np.array([x1, 1.0 - x1])
            if x[1] <= 0.0 or x[0] <= 0.0:
                return -np.inf
            return _log_target(x, lam, ss, M) + math.log(x1) + math.log(x[1])

        res = optimize.minimize_scalar(lambda z: -f(z), bounds=(-40.0, 40.0), method="bounded",
                                       options={"xatol": 1e-10})
        zm = float(res.x)
        fm = f(zm)
        h = 1e-4
        curv = -(f(zm + h) - 2.0 * fm + f(zm - h)) / (h * h)
        sd = 1.0 / math.sqrt(curv) if curv > 0 else 5.0
        lo, hi = max(zm - 40.0 * sd, -60.0), min(zm + 40.0 * sd, 60.0)
        val, _ = integrate.quad(lambda z: math.exp(f(z) - fm), lo, hi, points=[zm], limit=200,
                                epsabs=0.0, epsrel=1e-10)
        return fm + math.log(val)
    if rng is None:
        rng = np.random.default_rng(0)
    theta = _proposal_scale(M, e_sigma)
    log_zq = sum(log_gig_normaliser(l, s, 2.0 / theta) for l, s in zip(lam, ss))
    logw = np.array([_log_weight(_propose(lam, ss, theta, rng), lam, ss, M, theta) for _ in range(n_importance)])
    return log_zq + float(special.logsumexp(logw) - math.log(n_importance))


def log_regime_variance_ordinate(x, counts, ss, M, e_sigma, rng=None) -> float:
    """log full-conditional density of ``x = sigma2 / M`` at ``x``."""
    lam = e_sigma - 0.5 * np.asarray(counts, dtype=float)
    return _log_target(np.asarray(x, float), lam, np.asarray(ss, float), M) - log_regime_variance_normaliser(
        counts, ss, M, e_sigma, rng
    )


# ---------------------------------------------------------------------------
# Mixture allocations
# ---------------------------------------------------------------------------


def allocation_probabilities(U, pi0, sigma2_regime) -> np.ndarray:
    """``M x T`` posterior allocation probabilities of independent components."""
    le = log_emissions(U, sigma2_regime) + np.log(np.maximum(pi0, 1e-300))[:, None]
    le -= le.max(axis=0, keepdims=True)
    w = np.exp(le)
    return w / w.sum(axis=0, keepdims=True)


def sample_mixture_allocations(U, pi0, sigma2_regime, rng, min_occupancy=0, max_retries=100):
    """Independent allocations with probabilities ``pi0_m N(u_t; 0, sigma2_m)``.

    With ``min_occupancy > 0`` the allocations are drawn jointly conditional
    on every component being used that often.
    """
    M = len(pi0)
    if min_occupancy > 0 and _constrained_feasible(M, np.shape(U)[-1], min_occupancy):
        le = log_emissions(U, sigma2_regime)
        return ffbs_constrained(le, np.tile(pi0, (M, 1)), pi0, min_occupancy, rng)
    probs = allocation_probabilities(U, pi0, sigma2_regime)
    cdf = np.cumsum(probs, axis=0)
    for _ in range(max_retries):
        u = rng.random(probs.shape[1])
        path = np.minimum((cdf < u).sum(axis=0), M - 1)
        if _occupied(path, M, min_occupancy):
            return path
    raise RegimeError(f"could not occupy every component after {max_retries} attempts")


# ---------------------------------------------------------------------------
# Family updates
# ---------------------------------------------------------------------------


def sample_markov_path(U, state, spec, rng):
    emis = log_emissions(U, state.sigma2_regime)
    k = spec.min_occupancy
    if k > 0 and _constrained_feasible(spec.M, spec.T, k):
        return ffbs_constrained(emis, state.P, state.pi0, k, rng)
    for _ in range(spec.max_retries):
        path, _, _ = ffbs_states(emis, state.P, state.pi0, rng, log=True)
        if _occupied(path, spec.M, k):
            return path
    raise RegimeError(
        f"regime path violated the minimum of {k} occurrences per regime in {spec.max_retries} draws"
    )


def update_msh(state, spec, U, rng) -> None:
    pr = spec.prior
    M = spec.M
    state.regime = sample_markov_path(U, state, spec, rng)
    e = state.e if spec.family.is_sparse else pr.e
    state.P, state.pi0 = sample_transition_matrix(state.regime, M, e, pr.e0, rng)
    if spec.family.is_sparse:
        logP = np.log(np.maximum(state.P, np.finfo(float).tiny))
        state.e = sample_sparse_concentration(state.e, logP, pr.s_e, pr.nu_e, rng)
    state.sigma2_regime = sample_regime_variances(
        U, state.regime, M, pr.e_sigma, rng, current=state.sigma2_regime,
        require_occupied=not spec.family.is_sparse,
    )
    state.sigma2 = state.sigma2_regime[:, state.regime]


def update_mix(state, spec, U, rng) -> None:
    pr = spec.prior
    M = spec.M
    state.regime = sample_mixture_allocations(
        U, state.pi0, state.sigma2_regime, rng, spec.min_occupancy, spec.max_retries
    )
    e0 = state.e if spec.family.is_sparse else pr.e0
    state.pi0 = sample_mixture_weights(state.regime, M, e0, rng)
    if spec.family.is_sparse:
        logpi = np.log(np.maximum(state.pi0, np.finfo(float).tiny))
        state.e = sample_sparse_concentration(state.e, logpi, pr.s_e, pr.nu_e, rng)
    state.P = np.tile(state.pi0, (M, 1))
    state.sigma2_regime = sample_regime_variances(
        U, state.regime, M, pr.e_sigma, rng, current=state.sigma2_regime,
        require_occupied=not spec.family.is_sparse,
    )
    state.sigma2 = state.sigma2_regime[:, state.regime]


def initialise(state, spec, rng) -> None:
    """Starting values; sparse models start from a single occupied regime.

    Emptying regimes is slow for the Gibbs sampler, so overfitting models
    begin parsimonious and let the sampler open further regimes as the data
    require.
    """
    M, T, N = spec.M, spec.T, spec.N
    state.sigma2_regime = np.ones((N, M))
    if spec.family.is_sparse:
        state.regime = np.zeros(T, dtype=np.int64)
        state.pi0 = np.full(M, 0.01 / max(M - 1, 1))
        state.pi0[0] = 0.99
        state.e = spec.prior.s_e / max(spec.prior.nu_e - 2.0, 1.0)
        stay = 1.0 - 1e-3
    else:
        state.regime = (np.arange(T) * M) // T
        state.pi0 = np.full(M, 1.0 / M)
        state.e = None
        stay = 0.9
    if spec.family.is_markov:
        P = np.full((M, M), (1.0 - stay) / max(M - 1, 1))
        np.fill_diagonal(P, stay)
        state.P = P / P.sum(axis=1, keepdims=True)
    else:
        state.P = np.tile(state.pi0, (M, 1))
    state.sigma2 = np.ones((N, T))
