"""Savage-Dickey density ratios for sharp restrictions.

The log ratio is ``log p(theta = theta0 | data) - log p(theta = theta0)``;
positive values favour the restriction. Posterior ordinates average exact
conditional densities over the retained draws wherever a closed-form full
conditional exists. The Student-t ordinate at ``lam = 1 / (nu - 1) = 0``
has none under the latent-variance representation; it uses a reflected
kernel density estimate by default, or the collapsed conditional of ``lam``
given the structural shocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special, stats

from . import gibbs
from .model import Family, PosteriorDraws, SpecificationError
from .volatility import regimes, sv
from .volatility.student_t import log_t_likelihood

NSE_BATCHES = 20
MIN_KDE_DRAWS = 500
PRIOR_HYPER_DRAWS = 20000


@dataclass(frozen=True)
class SddrResult:
    """A Savage-Dickey ratio with its components.

    ``nse`` is the numerical standard error of ``log_sddr``, combining the
    batch-means errors of both ordinates by the delta method.
    """

    log_sddr: float
    nse: float
    log_posterior: float
    log_prior: float
    hypothesis: str
    degenerate: bool = False
    details: dict = field(default_factory=dict)

    @property
    def sddr(self) -> float:
        return math.exp(self.log_sddr) if self.log_sddr < 700 else math.inf

    @property
    def favours_restriction(self) -> bool:
        return self.log_sddr > 0.0


def _log_mean_exp(logv, batches=NSE_BATCHES):
    """log of the mean of ``exp(logv)`` and the batch-means standard error of that log."""
    logv = np.asarray(logv, dtype=float)
    if logv.size == 0:
        raise ValueError("no ordinates to average")
    top = np.max(logv)
    if not np.isfinite(top):
        return float(top), math.nan
    w = np.exp(logv - top)
    mean = float(w.mean())
    nb = min(batches, w.size)
    size = w.size // nb
    if nb < 2 or size < 1:
        return top + math.log(mean), math.nan
    bm = w[: nb * size].reshape(nb, size).mean(axis=1)
    se = float(bm.std(ddof=1) / math.sqrt(nb))
    return top + math.log(mean), se / mean


def _result(log_post, nse_post, log_prior, nse_prior, hypothesis, **details):
    log_sddr = log_post - log_prior
    nse = math.sqrt(nse_post**2 + nse_prior**2) if np.isfinite(nse_post) else math.nan
    return SddrResult(
        log_sddr=float(log_sddr),
        nse=float(nse),
        log_posterior=float(log_post),
        log_prior=float(log_prior),
        hypothesis=hypothesis,
        degenerate=not np.isfinite(log_sddr),
        details=details,
    )


def _prior_only(draws: PosteriorDraws) -> bool:
    return bool(draws.meta.get("prior_only", False))


def _prior_shocks(draws: PosteriorDraws, n: int, seed: int):
    """Shocks of row ``n`` simulated from the stored conditional variances.

    Averaging a conditional ordinate over prior latents and these shocks
    reproduces the prior ordinate, which calibrates the estimator.
    """
    sigma2 = draws.get("sigma2")[:, n]
    return np.sqrt(sigma2) * np.random.default_rng(seed).standard_normal(sigma2.shape)


def _subset(draws: PosteriorDraws, max_draws):
    if max_draws is None or len(draws) <= max_draws:
        return draws
    return draws.subset(np.linspace(0, len(draws) - 1, int(max_draws)).round().astype(int))


def _shocks(draws: PosteriorDraws):
    data = draws.spec.data
    return draws.get("B0") @ (data.Y[None] - draws.get("A") @ data.X)


# ---------------------------------------------------------------------------
# Autoregressive restrictions
# ---------------------------------------------------------------------------


def _parse_restriction(spec, S_matrix):
    """Return ``(rows, cols)`` of the elements of ``A`` picked by the selection matrix.

    Columns of ``S_matrix`` index ``A`` stacked row by row (equation by
    equation), i.e. ``A.ravel()``. A sequence of ``(row, column)`` pairs is
    accepted as well when given as a list of tuples.
    """
    N, K = spec.N, spec.K
    if S_matrix is None:
        return np.empty(0, int), np.empty(0, int)
    pairs = isinstance(S_matrix, (list, tuple)) and all(isinstance(e, tuple) for e in S_matrix)
    if pairs and len(S_matrix) == 0:
        return np.empty(0, int), np.empty(0, int)
    if pairs:
        arr = np.asarray(S_matrix, dtype=int).reshape(-1, 2)
        rows, cols = arr[:, 0], arr[:, 1]
    else:
        arr = np.atleast_2d(np.asarray(S_matrix, dtype=float))
        if arr.size == 0:
            return np.empty(0, int), np.empty(0, int)
        if arr.shape[1] != N * K:
            raise SpecificationError(f"restriction matrix needs {N * K} columns (A stacked by rows)")
        if not (np.all((arr == 0) | (arr == 1)) and np.all(arr.sum(axis=1) == 1)):
            raise SpecificationError("restriction matrix must select single elements (one unit entry per row)")
        pos = np.argmax(arr, axis=1)
        rows, cols = pos // K, pos % K
    if np.any((rows < 0) | (rows >= N) | (cols < 0) | (cols >= K)):
        raise SpecificationError("restriction refers to an element outside A")
    if len(set(zip(rows.tolist(), cols.tolist()))) != rows.size:
        raise SpecificationError("restriction selects an element twice")
    return rows, cols


def _restriction_layout(spec, rows, cols):
    """Involved equations, their free positions and the restricted offsets in the stacked vector."""
    idx = [gibbs.free_index(v) for v in spec.restrictions.V_A]
    involved = sorted(set(rows.tolist()))
    offsets = {}
    start = 0
    for n in involved:
        offsets[n] = start
        start += idx[n].size
    picks = []
    for n, k in zip(rows, cols):
        where = np.flatnonzero(idx[n] == k)
        if where.size == 0:
            raise SpecificationError(
                f"A[{n}, {k}] is fixed to zero by the restriction pattern; the hypothesis is vacuous"
            )
        picks.append(offsets[n] + int(where[0]))
    return involved, idx, np.asarray(picks, dtype=int), start


def _log_normal_ordinate(x, mean, cov):
    L = np.linalg.cholesky(cov)
    z = np.linalg.solve(L, x - mean)
    return -0.5 * (x.size * math.log(2.0 * math.pi) + z @ z) - float(np.sum(np.log(np.diag(L))))


def _joint_a_conditional(state, spec, ctx, involved, idx, dim, prior_only):
    """Precision and linear term of the free elements of the involved rows of ``A``."""
    Q = np.zeros((dim, dim))
    lin = np.zeros(dim)
    blocks = []
    start = 0
    for n in involved:
        blocks.append(slice(start, start + idx[n].size))
        start += idx[n].size
    for b, n in zip(blocks, involved):
        prec = 1.0 / (state.gamma_A[n] * ctx.omega_A[n])
        Q[b, b] += np.diag(prec)
        lin[b] += prec * ctx.m_A[n]
    if prior_only:
        return Q, lin
    data = spec.data
    B0 = state.B0
    A_rest = state.A.copy()
    A_rest[involved] = 0.0
    if ctx.homo:
        G = B0.T @ B0
        XZ = ctx.stats.XY @ B0.T - ctx.stats.XX @ (A_rest.T @ B0.T)  # X Z', Z = B0 (Y - A_rest X)
        for bi, n in zip(blocks, involved):
            lin[bi] += XZ[idx[n]] @ B0[:, n]
            for bj, m in zip(blocks, involved):
                Q[bi, bj] += G[n, m] * ctx.stats.XX[np.ix_(idx[n], idx[m])]
        return Q, lin
    isig = 1.0 / state.sigma2
    Z = B0 @ (data.Y - A_rest @ data.X)
    for bi, n in zip(blocks, involved):
        Xn = data.X[idx[n]]
        lin[bi] += Xn @ (B0[:, n] @ (Z * isig))
        for bj, m in zip(blocks, involved):
            w = (B0[:, n] * B0[:, m]) @ isig
            Q[bi, bj] += (Xn * w) @ data.X[idx[m]].T
    return Q, lin


def _prior_hyper_gamma_A(spec, draws, n_draws, rng):
    """Draws of the equation-specific shrinkage of ``A`` from its prior, ``(n_draws, N)``."""
    pr = spec.prior
    N = spec.N
    if not spec.sample_hyper:
        return np.broadcast_to(draws.get("gamma_A")[0], (1, N))
    s_A = pr.s_sA / rng.chisquare(pr.nu_sA, size=(n_draws, 1))
    s_An = rng.gamma(pr.a_A, s_A, size=(n_draws, N))
    return s_An / rng.chisquare(pr.nu_A, size=(n_draws, N))


def sddr_autoregression(
    draws: PosteriorDraws,
    S_matrix,
    r_vector=None,
    max_draws: Optional[int] = None,
    prior_draws: int = PRIOR_HYPER_DRAWS,
    seed: int = 0,
) -> SddrResult:
    """Savage-Dickey ratio of ``S vec(A) = r`` for a selection of elements of ``A``.

    Parameters
    ----------
    S_matrix : array (r, N K) or sequence of (row, column) pairs
        Selection of elements of ``A`` stacked equation by equation.
    r_vector : array (r,), optional
        Restricted values, zero by default.
    max_draws : int, optional
        Evenly spaced subset of draws used for the posterior ordinate.
    prior_draws : int
        Hyper-parameter draws over which the conditional prior ordinate is
        averaged.
    """
    spec = draws.spec
    rows, cols = _parse_restriction(spec, S_matrix)
    r = np.zeros(rows.size) if r_vector is None else np.atleast_1d(np.asarray(r_vector, dtype=float))
    if r.size != rows.size:
        raise SpecificationError("restriction values must match the number of restrictions")
    label = "A: " + ", ".join(f"A[{n},{k}]={v:g}" for n, k, v in zip(rows, cols, r))
    if rows.size == 0:
        return _result(0.0, 0.0, 0.0, 0.0, "empty restriction")
    involved, idx, picks, dim = _restriction_layout(spec, rows, cols)
    ctx = gibbs.SamplerContext(spec)
    prior_only = _prior_only(draws)

    sub = _subset(draws, max_draws)
    logs = np.empty(len(sub))
    for s, state in enumerate(sub):
        Q, lin = _joint_a_conditional(state, spec, ctx, involved, idx, dim, prior_only)
        C = np.linalg.cholesky(Q)
        mean = np.linalg.solve(C.T, np.linalg.solve(C, lin))
        cov = np.linalg.inv(Q)[np.ix_(picks, picks)]
        logs[s] = _log_normal_ordinate(r, mean[picks], cov)
    log_post, nse_post = _log_mean_exp(logs)

    # prior: independent normal elements given the shrinkage, averaged over its prior
    rng = np.random.default_rng(seed)
    gam = _prior_hyper_gamma_A(spec, draws, prior_draws, rng)
    om = np.concatenate([ctx.omega_A[n] for n in involved])[picks]
    mu = np.concatenate([ctx.m_A[n] for n in involved])[picks]
    var = gam[:, rows] * om[None]
    lp = -0.5 * np.sum(np.log(2.0 * math.pi * var) + np.square(r - mu) / var, axis=1)
    log_prior, nse_prior = _log_mean_exp(lp)
    if lp.size == 1:
        nse_prior = 0.0
    return _result(log_post, nse_post, log_prior, nse_prior, label, draws=len(sub))


# ---------------------------------------------------------------------------
# Identification through heteroskedasticity or non-normality
# ---------------------------------------------------------------------------


def _check_shock(spec, n):
    if int(n) != n or not 0 <= n < spec.N:
        raise SpecificationError(f"shock index must lie in 0..{spec.N - 1}")
    return int(n)


def log_prior_omega_at_zero(a_sigma: float, s_sv: float, nu_sv: float) -> float:
    """log prior density of ``omega`` at zero under the scale hierarchy.

    ``omega | s2 ~ N(0, s2)``, ``s2 ~ Gamma(a_sigma, scale s)`` and
    ``s ~ IG2(s_sv, nu_sv)`` give
    ``(2 pi)^-1/2 G(a - 1/2) / G(a) sqrt(2 / s_sv) G((nu + 1) / 2) / G(nu / 2)``.
    """
    if a_sigma <= 0.5:
        raise SpecificationError("the omega prior ordinate at zero is infinite for a_sigma <= 1/2")
    return float(
        -0.5 * math.log(2.0 * math.pi)
        + special.gammaln(a_sigma - 0.5)
        - special.gammaln(a_sigma)
        + 0.5 * math.log(2.0 / s_sv)
        + special.gammaln(0.5 * (nu_sv + 1.0))
        - special.gammaln(0.5 * nu_sv)
    )


def sddr_identification_sv(draws: PosteriorDraws, n: int, max_draws: Optional[int] = None) -> SddrResult:
    """Savage-Dickey ratio of ``omega_n = 0`` (shock ``n`` homoskedastic).

    The posterior ordinate averages the normal full conditional of
    ``omega_n`` given the log-volatility path, the mixture indicators and
    its prior variance.
    """
    spec = draws.spec
    if spec.family is Family.SV_CENTRED:
        raise SpecificationError("the omega = 0 restriction lives in the non-centred SV parameterisation")
    if spec.family is not Family.SV_NONCENTRED:
        raise SpecificationError(f"SV identification test needs the SV family, not {spec.family.value}")
    n = _check_shock(spec, n)
    sub = _subset(draws, max_draws)
    s2w = sub.get("sigma2_omega")[:, n]
    if _prior_only(draws):
        logs = -0.5 * np.log(2.0 * math.pi * s2w)
    else:
        U = _shocks(sub)[:, n]
        ind = sub.get("sv_indicators")[:, n].astype(int)
        h = sub.get("h")[:, n]
        z = sv.log_squared_shocks(U) - sv.AUX_MIXTURE_MEAN[ind]
        v = sv.AUX_MIXTURE_VAR[ind]
        prec = np.sum(h * h / v, axis=1) + 1.0 / s2w
        mean = np.sum(h * z / v, axis=1) / prec
        logs = 0.5 * np.log(prec / (2.0 * math.pi)) - 0.5 * prec * mean * mean
    log_post, nse_post = _log_mean_exp(logs)
    pr = spec.prior
    log_prior = log_prior_omega_at_zero(pr.a_sigma, pr.s_sv, pr.nu_sv)
    return _result(log_post, nse_post, log_prior, 0.0, f"omega[{n}] = 0", draws=len(sub))


def log_dirichlet_centre(M: int, e_sigma: float) -> float:
    """log symmetric Dirichlet density at the centre of the simplex (first ``M - 1`` coordinates)."""
    return float(
        special.gammaln(M * e_sigma) - M * special.gammaln(e_sigma) + M * (e_sigma - 1.0) * math.log(1.0 / M)
    )


def sddr_identification_regimes(
    draws: PosteriorDraws, n: int, max_draws: Optional[int] = None, seed: int = 0
) -> SddrResult:
    """Savage-Dickey ratio of ``sigma2[n, 0] = ... = sigma2[n, M-1] = 1``.

    Both ordinates are densities of ``sigma2[n] / M`` on the simplex. The
    posterior ordinate averages the normalised full conditional given the
    regime path and the shocks; its normalising constant is computed by
    quadrature for two regimes and by importance sampling otherwise.
    """
    spec = draws.spec
    if not spec.family.is_regime:
        raise SpecificationError(f"regime identification test needs a regime family, not {spec.family.value}")
    M = spec.M
    if M is None or M < 2:
        raise SpecificationError("the equal-variance restriction is vacuous with a single regime")
    n = _check_shock(spec, n)
    e_sigma = spec.prior.e_sigma
    centre = np.full(M, 1.0 / M)
    log_prior = log_dirichlet_centre(M, e_sigma)
    sub = _subset(draws, max_draws)
    rng = np.random.default_rng(seed)
    U = _prior_shocks(sub, n, seed + 1) if _prior_only(draws) else _shocks(sub)[:, n]
    path = sub.get("regime")
    logs = np.empty(len(sub))
    for s in range(len(sub)):
        counts, ss = regimes.regime_sufficient_stats(U[s], path[s], M)
        logs[s] = regimes.log_regime_variance_ordinate(centre, counts, ss, M, e_sigma, rng=rng)
    log_post, nse_post = _log_mean_exp(logs)
    return _result(log_post, nse_post, log_prior, 0.0, f"sigma2[{n}, :] = 1", draws=len(sub))


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.349) if iqr > 0 else sd
    return 0.9 * spread * x.size ** -0.2


def reflected_kde_at_zero(x, bandwidth=None):
    """Per-draw contributions and bandwidth of a Gaussian KDE at 0 reflected about 0.

    The mean of the returned contributions is the density estimate.
    """
    x = np.asarray(x, dtype=float)
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0.0:
        raise ValueError("degenerate draws: zero kernel bandwidth")
    return 2.0 * stats.norm.pdf(x / h) / h, h


def _log_lambda_conditional_at_zero(u) -> float:
    """log density at 0 of ``lam`` given the shocks, with the latent variances integrated out."""
    normal = float(np.sum(stats.norm.logpdf(u)))

    def loglik(lam):
        return log_t_likelihood(u, 1.0 + 1.0 / lam) if lam > 0.0 else normal

    grid = np.linspace(1e-6, 1.0 - 1e-6, 201)
    vals = np.array([loglik(g) for g in grid])
    top = max(vals.max(), normal)
    peak = float(grid[np.argmax(vals)])
    area, _ = integrate.quad(lambda l: math.exp(loglik(l) - top), 0.0, 1.0, points=[peak], limit=200)
    return normal - top - math.log(area)


def sddr_identification_t(
    draws: PosteriorDraws,
    n: int,
    method: str = "kde",
    max_draws: Optional[int] = None,
    seed: int = 0,
) -> SddrResult:
    """Savage-Dickey ratio of normal shocks, ``lam_n = 1 / (nu_n - 1) = 0``.

    The prior of ``lam`` is uniform on (0, 1), so the prior ordinate is 1.
    ``method="kde"`` estimates the posterior ordinate by a reflected Gaussian
    kernel density of the ``lam`` draws with Silverman's bandwidth;
    ``method="conditional"`` averages the exact density of ``lam`` given the
    structural shocks, obtained by one-dimensional quadrature per draw.
    """
    spec = draws.spec
    if spec.family is not Family.T:
        raise SpecificationError(f"normality test needs the Student-t family, not {spec.family.value}")
    n = _check_shock(spec, n)
    if method == "kde":
        if len(draws) < MIN_KDE_DRAWS:
            raise SpecificationError(
                f"the kernel ordinate needs at least {MIN_KDE_DRAWS} retained draws, got {len(draws)}; "
                "run more sweeps or use method='conditional'"
            )
        lam = 1.0 / (draws.get("nu")[:, n] - 1.0)
        contrib, h = reflected_kde_at_zero(lam)
        log_post, nse_post = _log_mean_exp(np.log(np.maximum(contrib, 1e-300)))
        return _result(log_post, nse_post, 0.0, 0.0, f"lambda[{n}] = 0", bandwidth=h, method=method)
    if method != "conditional":
        raise ValueError("method must be 'kde' or 'conditional'")
    sub = _subset(draws, max_draws)
    U = _prior_shocks(sub, n, seed) if _prior_only(draws) else _shocks(sub)[:, n]
    logs = np.array([_log_lambda_conditional_at_zero(u) for u in U])
    log_post, nse_post = _log_mean_exp(logs)
    return _result(log_post, nse_post, 0.0, 0.0, f"lambda[{n}] = 0", draws=len(sub), method=method)


def sddr_identification(draws: PosteriorDraws, shocks: Optional[Sequence[int]] = None, **kwargs) -> list:
    """Identification ratios for every shock (or ``shocks``) of a heteroskedastic or t model."""
    spec = draws.spec
    fam = spec.family
    if fam is Family.SV_NONCENTRED:
        fn = sddr_identification_sv
    elif fam.is_regime:
        fn = sddr_identification_regimes
    elif fam is Family.T:
        fn = sddr_identification_t
    else:
        raise SpecificationError(f"no identification test for the {fam.value} family")
    shocks = range(spec.N) if shocks is None else shocks
    return [fn(draws, n, **kwargs) for n in shocks]


def identification_verdict(results: Sequence[SddrResult]) -> str:
    """``globally identified`` when at most one shock's ratio favours the restriction."""
    favouring = sum(1 for r in results if r.favours_restriction)
    if favouring <= 1:
        return "globally identified"
    return f"not globally identified: {favouring} shocks favour homoskedastic normal behaviour"


def interpret(result: SddrResult) -> str:
    if result.degenerate:
        return "degenerate"
    return "supports restriction" if result.favours_restriction else "rejects restriction"
