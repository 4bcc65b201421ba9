"""Structural analysis and forecasting from posterior draws.

Every function works draw by draw and returns arrays with the draw index
last, so ``out[..., s]`` belongs to draw ``s``. :func:`summarise` collapses
that axis to a median and an equal-tail interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .distributions import rig2
from .model import Family, PosteriorDraws, SpecificationError, TimeSeriesData
from .volatility import regimes

REMAINDER_LABEL = "deterministic and initial conditions"


@dataclass(frozen=True)
class Summary:
    """Median, equal-tail interval and mean of draws along the last axis."""

    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    mean: np.ndarray
    level: float


def summarise(values, level: float = 0.9) -> Summary:
    """Summarise draws stored along the last axis of ``values``."""
    if not 0.0 < level < 1.0:
        raise ValueError("interval level must lie in (0, 1)")
    values = np.asarray(values, dtype=float)
    tail = 0.5 * (1.0 - level)
    lo, med, hi = np.quantile(values, [tail, 0.5, 1.0 - tail], axis=-1)
    return Summary(median=med, lower=lo, upper=hi, mean=values.mean(axis=-1), level=level)


def _data(draws: PosteriorDraws, data) -> TimeSeriesData:
    data = draws.spec.data if data is None else data
    if data.N != draws.spec.N or data.K != draws.spec.K:
        raise SpecificationError("data dimensions do not match the estimated model")
    return data


def _last(arr):
    """Move the leading draw axis to the end."""
    return np.moveaxis(arr, 0, -1)


def _reduced_errors(draws, data):
    A = draws.get("A")
    return data.Y[None] - A @ data.X


def compute_structural_shocks(draws: PosteriorDraws, data: Optional[TimeSeriesData] = None) -> np.ndarray:
    """Shocks ``u_t = B0 (y_t - A x_t)`` as an ``N x T x S`` array."""
    data = _data(draws, data)
    return _last(draws.get("B0") @ _reduced_errors(draws, data))


def compute_fitted_values(draws: PosteriorDraws, data: Optional[TimeSeriesData] = None) -> np.ndarray:
    """Fitted values ``A x_t`` as an ``N x T x S`` array."""
    data = _data(draws, data)
    return _last(draws.get("A") @ data.X)


def _companion(A, N, p):
    S = A.shape[0]
    C = np.zeros((S, N * p, N * p))
    C[:, :N] = A[:, :, : N * p]
    if p > 1:
        C[:, N:, :-N] = np.eye(N * (p - 1))
    return C


def compute_impulse_responses(draws: PosteriorDraws, H: int) -> np.ndarray:
    """Impulse responses, ``out[i, j, h, s]`` is the response of variable i to shock j.

    Horizon ``h`` equals ``J C^h J' B0^-1`` with companion matrix ``C`` and
    selector ``J`` of the first ``N`` states.
    """
    if int(H) != H or H < 0:
        raise ValueError("horizon must be a non-negative integer")
    H = int(H)
    spec = draws.spec
    N, p = spec.N, spec.data.p
    B0inv = np.linalg.inv(draws.get("B0"))
    C = _companion(draws.get("A"), N, p)
    out = np.empty((len(draws), N, N, H + 1))
    state = np.zeros((len(draws), N * p, N))
    state[:, :N] = B0inv
    out[..., 0] = B0inv
    for h in range(1, H + 1):
        state = C @ state
        out[..., h] = state[:, :N]
    return np.moveaxis(out, 0, -1)


def compute_variance_decompositions(draws: PosteriorDraws, H: int, shock_variances=None) -> np.ndarray:
    """Forecast-error variance shares ``out[i, j, h, s]``.

    Shock variances default to one, the benchmark around which every
    family's conditional variances are normalised. ``shock_variances`` of
    shape ``N x (H + 1) x S`` weights the squared responses instead, e.g.
    with variances simulated forward by :func:`forecast`.
    """
    irf = compute_impulse_responses(draws, H)
    sq = np.square(irf)
    if shock_variances is not None:
        w = np.asarray(shock_variances, dtype=float)
        if w.shape != (irf.shape[1],) + irf.shape[2:]:
            raise ValueError("shock variances must have shape N x (H + 1) x S")
        sq = sq * w[None]
    cum = np.cumsum(sq, axis=2)
    return cum / cum.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class HistoricalDecomposition:
    """``contributions[i, j, t, s]`` of shock j to variable i plus a remainder.

    The remainder ``N x T x S`` collects deterministic terms and pre-sample
    initial conditions; ``contributions.sum(axis=1) + remainder`` reproduces
    the data.
    """

    contributions: np.ndarray
    remainder: np.ndarray
    remainder_label: str = REMAINDER_LABEL

    def total(self) -> np.ndarray:
        return self.contributions.sum(axis=1) + self.remainder


def compute_historical_decompositions(
    draws: PosteriorDraws, data: Optional[TimeSeriesData] = None
) -> HistoricalDecomposition:
    """Decompose every observation into accumulated structural-shock effects.

    The contribution of shock ``j`` follows the VAR recursion driven by that
    shock alone from zero initial values; the remainder is the same
    recursion driven by deterministic terms from the observed pre-sample.
    """
    data = _data(draws, data)
    spec = draws.spec
    N, p, T, S = spec.N, data.p, data.T, len(draws)
    A = draws.get("A")
    B0inv = np.linalg.inv(draws.get("B0"))
    E = _reduced_errors(draws, data)
    U = draws.get("B0") @ E
    Alag = A[:, :, : N * p]
    drift = A[:, :, N * p :] @ data.X[N * p :]

    # impulse of shock j at t: column j of B0^-1 scaled by u_jt
    contrib = np.zeros((S, N, N, T))
    rem = np.empty((S, N, T))
    lags_c = np.zeros((S, N * p, N))  # stacked lagged contributions per shock
    lags_r = np.broadcast_to(data.X[: N * p, 0], (S, N * p)).copy()
    for t in range(T):
        cur = Alag @ lags_c + B0inv * U[:, None, :, t]
        contrib[..., t] = cur
        cur_r = np.einsum("snk,sk->sn", Alag, lags_r) + drift[:, :, t]
        rem[..., t] = cur_r
        if p > 1:
            lags_c[:, N:] = lags_c[:, :-N]
            lags_r[:, N:] = lags_r[:, :-N]
        lags_c[:, :N] = cur
        lags_r[:, :N] = cur_r
    return HistoricalDecomposition(np.moveaxis(contrib, 0, -1), np.moveaxis(rem, 0, -1))


def compute_conditional_sd(draws: PosteriorDraws) -> np.ndarray:
    """Conditional standard deviations of the structural shocks, ``N x T x S``."""
    return _last(np.sqrt(draws.get("sigma2")))


REGIME_KINDS = ("filtered", "smoothed", "realized")


def compute_regime_probabilities(
    draws: PosteriorDraws, data: Optional[TimeSeriesData] = None, kind: str = "smoothed"
) -> np.ndarray:
    """Regime probabilities ``M x T x S`` at each draw's parameters.

    ``filtered`` and ``smoothed`` run the forward and backward recursions;
    ``realized`` is the indicator of the drawn path. Mixture models use
    ``pi0`` as every row of the transition matrix.
    """
    spec = draws.spec
    if not spec.family.is_regime:
        raise SpecificationError(f"regime probabilities need a regime family, not {spec.family.value}")
    if kind not in REGIME_KINDS:
        raise ValueError(f"kind must be one of {REGIME_KINDS}")
    data = _data(draws, data)
    M, T, S = spec.M, data.T, len(draws)
    out = np.empty((M, T, S))
    if kind == "realized":
        path = draws.get("regime")
        if path.shape[1] != T:
            raise SpecificationError("realized regimes are only available for the estimation sample")
        for m in range(M):
            out[m] = (path == m).T
        return out
    U = draws.get("B0") @ _reduced_errors(draws, data)
    pi0 = draws.get("pi0")
    P = draws.get("P") if spec.family.is_markov else None
    s2 = draws.get("sigma2_regime")
    for s in range(S):
        Ps = P[s] if P is not None else np.tile(pi0[s], (M, 1))
        filt, smooth = regimes.filter_regimes(regimes.log_emissions(U[s], s2[s]), Ps, pi0[s], log=True)
        out[..., s] = filt if kind == "filtered" else smooth
    return out


# ---------------------------------------------------------------------------
# Forecasting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForecastResult:
    """Predictive draws ``N x H x S`` and the variances used to generate them.

    ``conditional`` is the ``N x H`` projection matrix with ``nan`` marking
    free entries, or ``None``. ``regime_probabilities`` (``M x H x S``)
    holds the predictive regime distribution of regime families.
    """

    draws: np.ndarray
    sigma2: np.ndarray
    conditional: Optional[np.ndarray] = None
    regime_probabilities: Optional[np.ndarray] = None

    @property
    def H(self) -> int:
        return self.draws.shape[1]


def _future_deterministic(data, H, future):
    D = data.D
    if future is None:
        if D > 1:
            raise SpecificationError("forecasting with non-constant deterministic terms needs their future values")
        return np.ones((1, H))
    future = np.atleast_2d(np.asarray(future, dtype=float))
    if future.shape != (D, H):
        raise SpecificationError(f"future deterministic terms must be {D} x {H}")
    return future


def _simulate_variances(draws: PosteriorDraws, H: int, rng):
    """Forward draws of the conditional variances, ``(S, N, H)``, plus regime probabilities."""
    spec = draws.spec
    fam = spec.family
    N, S = spec.N, len(draws)
    probs = None
    if fam is Family.HOMO:
        return np.ones((S, N, H)), None
    if fam.is_sv:
        rho = draws.get("rho")
        h = draws.get("h")[:, :, -1].copy()
        sd = np.ones((S, N)) if fam is Family.SV_NONCENTRED else np.sqrt(draws.get("sigma_v2"))
        out = np.empty((S, N, H))
        for k in range(H):
            h = rho * h + sd * rng.standard_normal((S, N))
            out[..., k] = np.exp(draws.get("omega") * h) if fam is Family.SV_NONCENTRED else np.exp(h)
        return out, None
    if fam.is_regime:
        M = spec.M
        s2 = draws.get("sigma2_regime")
        pi0 = draws.get("pi0")
        probs = np.empty((M, H, S))
        rows = np.arange(S)
        if fam.is_markov:
            P = draws.get("P")
            labels = draws.get("regime")[:, -1]
            cur = np.zeros((S, M))
            cur[rows, labels] = 1.0
        out = np.empty((S, N, H))
        for k in range(H):
            if fam.is_markov:
                cur = np.einsum("sm,smj->sj", cur, P)
                weights = P[rows, labels]
            else:
                cur = weights = pi0
            probs[:, k] = cur.T
            cdf = np.cumsum(weights, axis=1)
            labels = np.minimum((cdf < rng.random((S, 1)) * cdf[:, -1:]).sum(axis=1), M - 1)
            out[..., k] = s2[rows, :, labels]
        return out, probs
    if fam is Family.T:
        nu = draws.get("nu")[:, :, None]
        return rig2(rng, np.broadcast_to(nu - 2.0, (S, N, H)), np.broadcast_to(nu, (S, N, H))), None
    raise SpecificationError(f"unsupported family {fam}")  # pragma: no cover


def forecast(
    draws: PosteriorDraws,
    H: int,
    conditional=None,
    rng=None,
    future_deterministic=None,
) -> ForecastResult:
    """Simulate the predictive density ``H`` periods beyond the sample.

    Parameters
    ----------
    conditional : array (N, H), optional
        Future projections; ``nan`` entries are forecast, finite entries are
        imposed. At each horizon the free variables are drawn from the normal
        one-step predictive conditional on the imposed ones, sequentially
        across horizons.
    future_deterministic : array (D, H), optional
        Needed only when the model has deterministic terms beyond a constant.
    """
    if int(H) != H or H < 1:
        raise ValueError("forecast horizon must be a positive integer")
    H = int(H)
    rng = np.random.default_rng(rng)
    spec = draws.spec
    data = spec.data
    N, p, S = spec.N, data.p, len(draws)
    fixed = None
    if conditional is not None:
        conditional = np.array(conditional, dtype=float)
        if conditional.shape != (N, H):
            raise ValueError(f"conditional projections must be {N} x {H}")
        fixed = ~np.isnan(conditional)
        if np.any(np.isinf(conditional)):
            raise ValueError("conditional projections must be finite")
    det = _future_deterministic(data, H, future_deterministic)

    sigma2, probs = _simulate_variances(draws, H, rng)
    A = draws.get("A")
    B0inv = np.linalg.inv(draws.get("B0"))
    Alag, Adet = A[:, :, : N * p], A[:, :, N * p :]
    lags = np.broadcast_to(np.concatenate([data.Y[:, -1 - k] for k in range(p)]), (S, N * p)).copy()
    out = np.empty((S, N, H))
    for k in range(H):
        mean = np.einsum("snk,sk->sn", Alag, lags) + Adet @ det[:, k]
        scaled = B0inv * np.sqrt(sigma2[:, None, :, k])
        z = rng.standard_normal((S, N))
        if fixed is None or not fixed[:, k].any():
            y = mean + np.einsum("snj,sj->sn", scaled, z)
        else:
            y = _conditional_draw(mean, scaled, conditional[:, k], fixed[:, k], z)
        out[..., k] = y
        if p > 1:
            lags[:, N:] = lags[:, :-N]
        lags[:, :N] = y
    return ForecastResult(
        draws=np.moveaxis(out, 0, -1),
        sigma2=np.moveaxis(sigma2, 0, -1),
        conditional=conditional,
        regime_probabilities=probs,
    )


def _conditional_draw(mean, scaled, target, fixed, z):
    """Draw free entries of ``N(mean, scaled scaled')`` given the fixed entries."""
    y = np.empty_like(mean)
    f = np.flatnonzero(fixed)
    r = np.flatnonzero(~fixed)
    y[:, f] = target[f]
    if r.size == 0:
        return y
    cov = scaled @ np.swapaxes(scaled, 1, 2)
    Sff = cov[:, f[:, None], f]
    Srf = cov[:, r[:, None], f]
    Srr = cov[:, r[:, None], r]
    gain = np.swapaxes(np.linalg.solve(Sff, np.swapaxes(Srf, 1, 2)), 1, 2)
    cmean = mean[:, r] + np.einsum("sij,sj->si", gain, target[f][None] - mean[:, f])
    ccov = Srr - gain @ np.swapaxes(Srf, 1, 2)
    ccov = 0.5 * (ccov + np.swapaxes(ccov, 1, 2))
    L = np.linalg.cholesky(ccov)
    y[:, r] = cmean + np.einsum("sij,sj->si", L, z[:, : r.size])
    return y
