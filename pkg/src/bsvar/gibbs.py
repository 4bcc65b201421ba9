"""Gibbs sampler for structural VARs.

A sweep updates, in order, the family volatility block, the rows of the
structural matrix ``B0``, the rows of the autoregressive matrix ``A`` and the
shrinkage hierarchies. Rows are sampled one at a time from their full
conditionals, which keeps the cost of an ``A`` update at ``O(N^4)`` instead of
the ``O(N^6)`` of a joint draw.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional, Union

import numpy as np
from scipy.linalg import lapack

from .distributions import rig2
from .model import (
    Family,
    ModelSpec,
    ParameterState,
    PosteriorDraws,
    SpecificationError,
    check_state,
    stored_fields,
)
from .volatility import initialise_volatility, update_volatility

logger = logging.getLogger(__name__)

JITTER = 1e-10


class EstimationError(RuntimeError):
    """A sampler step failed; the message names the sweep and the step."""


class DegeneratePrecisionError(np.linalg.LinAlgError):
    pass


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def free_index(V) -> np.ndarray:
    """Column positions selected by the rows of a selection matrix."""
    return np.argmax(np.asarray(V), axis=1)


def _cholesky(P, what):
    C, info = lapack.dpotrf(P, lower=1, clean=1)
    if info == 0:
        return C
    logger.warning("%s: precision not positive definite, adding jitter %g", what, JITTER)
    C, info = lapack.dpotrf(P + JITTER * np.eye(P.shape[0]), lower=1, clean=1)
    if info != 0:
        raise DegeneratePrecisionError(f"{what}: conditional precision is not positive definite")
    return C


def _chol_solve(C, b):
    return lapack.dpotrs(C, b, lower=1)[0]


def _back_solve(C, z):
    """Solve ``C' x = z`` for lower-triangular ``C``."""
    return lapack.dtrtrs(C, z, lower=1, trans=1)[0]


@dataclass
class SufficientStats:
    XX: np.ndarray
    XY: np.ndarray
    YY: np.ndarray


def sufficient_stats(spec: ModelSpec) -> SufficientStats:
    Y, X = spec.data.Y, spec.data.X
    return SufficientStats(XX=X @ X.T, XY=X @ Y.T, YY=Y @ Y.T)


class SamplerContext:
    """Per-specification quantities reused by every sweep."""

    def __init__(self, spec: ModelSpec):
        pr = spec.prior
        R = spec.restrictions
        om = np.diag(pr.Omega_A)
        self.homo = spec.family is Family.HOMO
        self.idx_A = [free_index(v) for v in R.V_A]
        self.idx_B = [free_index(v) for v in R.V_B]
        self.omega_A = [om[i] for i in self.idx_A]
        self.m_A = [pr.m_A[i, n] for n, i in enumerate(self.idx_A)]
        self.omega_B_inv = [np.linalg.inv(np.asarray(o)) for o in pr.Omega_B]
        self.stats = sufficient_stats(spec)
        self.XX_blocks = [self.stats.XX[np.ix_(i, i)] for i in self.idx_A]
        self.X_rows = [np.ascontiguousarray(spec.data.X[i]) for i in self.idx_A]


def _context(spec, ctx):
    return ctx if ctx is not None else SamplerContext(spec)


def structural_shocks(A, B0, Y, X) -> np.ndarray:
    """``U = B0 (Y - A X)``, shape (N, T)."""
    return B0 @ (Y - A @ X)


def log_likelihood(state: ParameterState, spec: ModelSpec) -> float:
    """Gaussian log-likelihood of the structural form given ``state.sigma2``."""
    U = structural_shocks(state.A, state.B0, spec.data.Y, spec.data.X)
    _, logdet = np.linalg.slogdet(state.B0)
    s2 = state.sigma2
    return float(
        spec.T * logdet - 0.5 * np.sum(np.log(2.0 * math.pi * s2) + np.square(U) / s2)
    )


# ---------------------------------------------------------------------------
# Autoregressive rows
# ---------------------------------------------------------------------------


def a_row_conditional(n, state, spec, U=None, ctx=None, prior_only=False):
    """Free positions, mean and lower Cholesky factor of the precision of row ``n`` of ``A``.

    ``U`` are the current structural shocks (recomputed when omitted); with
    ``prior_only`` the likelihood contribution is dropped.
    """
    ctx = _context(spec, ctx)
    idx = ctx.idx_A[n]
    prior_prec = 1.0 / (state.gamma_A[n] * ctx.omega_A[n])
    lin = prior_prec * ctx.m_A[n]
    if prior_only:
        P = np.diag(prior_prec)
    else:
        b = state.B0[:, n]
        a_old = state.A[n, idx]
        if ctx.homo:
            # X E' = X Y' - X X' A'; columns of A outside idx are zero
            w = float(b @ b)
            XX = ctx.XX_blocks[n]
            XEb = ctx.stats.XY[idx] @ (state.B0.T @ b) - ctx.stats.XX[idx] @ (state.A.T @ (state.B0.T @ b))
            P = w * XX
            lin = lin + XEb + w * (XX @ a_old)
        else:
            if U is None:
                U = structural_shocks(state.A, state.B0, spec.data.Y, spec.data.X)
            isig = 1.0 / state.sigma2
            Xf = ctx.X_rows[n]
            w = (b * b) @ isig
            z = b @ (U * isig) + w * (a_old @ Xf)
            P = (Xf * w) @ Xf.T
            lin = lin + Xf @ z
        P[np.diag_indices_from(P)] += prior_prec
    C = _cholesky(P, f"A row {n}")
    return idx, _chol_solve(C, lin), C


def sample_A_rows(state: ParameterState, spec: ModelSpec, rng: np.random.Generator, ctx=None) -> None:
    """Update every row of ``A`` from its full conditional, in place.

    Each row conditions on the freshest values of the others; the structural
    shocks are updated incrementally after every row.
    """
    ctx = _context(spec, ctx)
    U = None if ctx.homo else structural_shocks(state.A, state.B0, spec.data.Y, spec.data.X)
    for n in range(spec.N):
        idx, mean, C = a_row_conditional(n, state, spec, U=U, ctx=ctx)
        draw = mean + _back_solve(C, rng.standard_normal(idx.size))
        if U is not None:
            delta = (draw - state.A[n, idx]) @ ctx.X_rows[n]
            U -= np.outer(state.B0[:, n], delta)
        state.A[n, idx] = draw


# ---------------------------------------------------------------------------
# Structural rows
# ---------------------------------------------------------------------------


def _null_vector(B0, n):
    # column n of B0^-1 is orthogonal to every other row of B0
    e = np.zeros(B0.shape[0])
    e[n] = 1.0
    try:
        v = np.linalg.solve(B0, e)
        if np.all(np.isfinite(v)):
            return v / np.linalg.norm(v)
    except np.linalg.LinAlgError:
        pass
    others = np.delete(B0, n, axis=0)
    return np.linalg.svd(others)[2][-1]


def b_row_scale(n, state, spec, EE=None, E=None, ctx=None, prior_only=False):
    """Free positions and posterior scale ``S_n`` of row ``n`` of ``B0``."""
    ctx = _context(spec, ctx)
    idx = ctx.idx_B[n]
    prior = ctx.omega_B_inv[n] / state.gamma_B[n]
    if prior_only:
        return idx, prior
    if EE is None:
        EE = (E / state.sigma2[n]) @ E.T
    return idx, EE[np.ix_(idx, idx)] + prior


def residual_cross_product(state, spec, ctx=None):
    """``E E'`` of the reduced-form residuals from sufficient statistics."""
    ctx = _context(spec, ctx)
    AXY = state.A @ ctx.stats.XY
    return ctx.stats.YY - AXY - AXY.T + state.A @ ctx.stats.XX @ state.A.T


def sample_B_rows(state: ParameterState, spec: ModelSpec, rng: np.random.Generator, ctx=None,
                  prior_only=False) -> None:
    """Update every row of ``B0`` with the row-rotation construction, in place.

    The kernel of row ``n`` is ``|det B0|^beta exp(-b S_n b' / 2)`` with
    ``beta = T + nu_B - N``. Writing ``b' = C'^-1 W delta`` for the Cholesky
    factor ``C`` of ``S_n`` and an orthonormal ``W`` whose first column is
    aligned with the determinant direction turns the kernel into
    ``|delta_1|^beta`` times standard normals.
    """
    ctx = _context(spec, ctx)
    N = spec.N
    T = 0 if prior_only else spec.T
    beta = T + spec.prior.nu_B - N
    EE = E = None
    if not prior_only:
        if ctx.homo:
            EE = residual_cross_product(state, spec, ctx)
        else:
            E = spec.data.Y - state.A @ spec.data.X
    for n in range(N):
        idx, S = b_row_scale(n, state, spec, EE=EE, E=E, ctx=ctx, prior_only=prior_only)
        C = _cholesky(S, f"B0 row {n}")
        w_perp = _null_vector(state.B0, n)
        w = lapack.dtrtrs(C, w_perp[idx], lower=1)[0]
        norm = math.sqrt(float(w @ w))
        if not norm > 1e-12:
            raise EstimationError(
                f"B0 row {n}: admissible space is rank deficient; restrictions allow no non-singular B0"
            )
        delta = rng.standard_normal(idx.size)
        delta[0] = math.copysign(math.sqrt(rng.chisquare(beta + 1.0)), rng.random() - 0.5)
        # Householder reflection mapping e_1 to a unit vector parallel to w
        v = w / norm
        v[0] += math.copysign(1.0, v[0])
        gamma = delta - v * (2.0 * (v @ delta) / (v @ v))
        row = np.zeros(N)
        row[idx] = _back_solve(C, gamma)
        state.B0[n] = row


# ---------------------------------------------------------------------------
# Shrinkage hierarchies
# ---------------------------------------------------------------------------


def a_row_deviation(n, state, spec, ctx=None) -> float:
    ctx = _context(spec, ctx)
    d = state.A[n, ctx.idx_A[n]] - ctx.m_A[n]
    return float(d @ (d / ctx.omega_A[n]))


def b_row_deviation(n, state, spec, ctx=None) -> float:
    ctx = _context(spec, ctx)
    b = state.B0[n, ctx.idx_B[n]]
    return float(b @ ctx.omega_B_inv[n] @ b)


def sample_hyper_shrinkage(state: ParameterState, spec: ModelSpec, rng: np.random.Generator, ctx=None) -> None:
    """Update both three-level hierarchies, bottom level first.

    Bottom level: ``gamma ~ IG2(s + q, nu + r)`` where ``q`` is the prior
    quadratic form of the row. Middle level: a gamma prior times an IG2
    likelihood in the scale is again gamma. Top level: IG2.
    """
    ctx = _context(spec, ctx)
    pr = spec.prior
    N = spec.N
    R = spec.restrictions
    r_A, r_B = R.r_A, R.r_B
    shape_A = pr.a_A + 0.5 * pr.nu_A
    shape_B = pr.a_B + 0.5 * pr.nu_b
    for n in range(N):
        q = a_row_deviation(n, state, spec, ctx)
        state.gamma_A[n] = (state.s_An[n] + q) / rng.chisquare(pr.nu_A + r_A[n])
        state.s_An[n] = rng.gamma(shape_A, 1.0 / (1.0 / state.s_A + 0.5 / state.gamma_A[n]))
        q = b_row_deviation(n, state, spec, ctx)
        state.gamma_B[n] = (state.s_Bn[n] + q) / rng.chisquare(pr.nu_b + r_B[n] + pr.nu_B - N)
        state.s_Bn[n] = rng.gamma(shape_B, 1.0 / (1.0 / state.s_B + 0.5 / state.gamma_B[n]))
    state.s_A = float(rig2(rng, pr.s_sA + 2.0 * state.s_An.sum(), pr.nu_sA + 2.0 * N * pr.a_A))
    state.s_B = float(rig2(rng, pr.s_sB + 2.0 * state.s_Bn.sum(), pr.nu_sB + 2.0 * N * pr.a_B))
    if np.any(state.gamma_A <= 0) or np.any(state.gamma_B <= 0):  # pragma: no cover
        raise AssertionError("non-positive shrinkage draw")


# ---------------------------------------------------------------------------
# Initial values
# ---------------------------------------------------------------------------


def initial_state(spec: ModelSpec, rng: np.random.Generator) -> ParameterState:
    """Least-squares starting values respecting the restriction pattern."""
    N, K = spec.N, spec.K
    stats = sufficient_stats(spec)
    R = spec.restrictions
    A = np.zeros((N, K))
    for n in range(N):
        idx = free_index(R.V_A[n])
        G = stats.XX[np.ix_(idx, idx)]
        A[n, idx] = np.linalg.solve(G + 1e-8 * np.trace(G) / idx.size * np.eye(idx.size), stats.XY[idx, n])
    E = spec.data.Y - A @ spec.data.X
    Sigma = E @ E.T / spec.T + 1e-10 * np.eye(N)
    mask = R.mask_B
    B0 = np.linalg.inv(np.linalg.cholesky(Sigma)) * mask
    if abs(np.linalg.det(B0)) < 1e-12:
        B0 = np.diag(1.0 / np.sqrt(np.diag(Sigma))) * mask
    tries = 0
    while abs(np.linalg.det(B0)) < 1e-12:
        B0 = rng.standard_normal((N, N)) * mask
        tries += 1
        if tries > 100:
            raise SpecificationError("restrictions admit no non-singular structural matrix")
    state = ParameterState(
        A=A,
        B0=B0,
        gamma_A=np.ones(N),
        s_An=np.ones(N),
        s_A=1.0,
        gamma_B=np.ones(N),
        s_Bn=np.ones(N),
        s_B=1.0,
        sigma2=np.ones((N, spec.T)),
    )
    initialise_volatility(state, spec, rng)
    return state


# ---------------------------------------------------------------------------
# Sign normalisation
# ---------------------------------------------------------------------------


def normalisation_signs(B0_draws, reference) -> np.ndarray:
    """Row signs (+1/-1) putting each draw nearest to ``reference``.

    The distance is measured in the metric of the covariance implied by the
    reference, for which a row flip helps exactly when the corresponding
    diagonal entry of ``B0 reference^-1`` is negative.
    """
    reference = np.asarray(reference, dtype=float)
    if abs(np.linalg.det(reference)) < 1e-12 * max(1.0, np.abs(reference).max()) ** reference.shape[0]:
        raise ValueError("normalisation reference must be non-singular")
    inv = np.linalg.inv(reference)
    diag = np.einsum("sij,ji->si", np.asarray(B0_draws), inv)
    return np.where(diag < 0.0, -1.0, 1.0)


def normalise_draws(draws: PosteriorDraws, reference=None, max_iter: int = 10) -> PosteriorDraws:
    """Flip the signs of ``B0`` rows to align every draw with ``reference``.

    Without a reference the retained-draw mean is used, found by iterating
    from the last draw (rows signed to a non-negative diagonal): normalise,
    average, repeat until no sign changes.
    """
    B = draws.draws["B0"]
    if reference is None:
        ref = B[-1] * np.where(np.diag(B[-1]) < 0.0, -1.0, 1.0)[:, None]
        signs = normalisation_signs(B, ref)
        for _ in range(max_iter):
            ref = np.mean(B * signs[:, :, None], axis=0)
            new = normalisation_signs(B, ref)
            if np.array_equal(new, signs):
                break
            signs = new
    else:
        ref = np.asarray(reference, dtype=float)
        signs = normalisation_signs(B, ref)
    out = dict(draws.draws)
    out["B0"] = B * signs[:, :, None]
    meta = dict(draws.meta)
    meta["normalisation_reference"] = ref.tolist()
    return PosteriorDraws(draws.spec, out, draws.last_state, meta)


# ---------------------------------------------------------------------------
# Estimation loop
# ---------------------------------------------------------------------------

SWEEP_STEPS = ("volatility", "B0", "A", "hyper")


def gibbs_sweep(state: ParameterState, spec: ModelSpec, rng: np.random.Generator, ctx=None,
                sweep_index: int = 0) -> None:
    """One full sweep in the order volatility, B0, A, hierarchies."""
    ctx = _context(spec, ctx)
    step = "volatility"
    try:
        if not ctx.homo:
            U = structural_shocks(state.A, state.B0, spec.data.Y, spec.data.X)
            update_volatility(state, spec, U, rng)
        step = "B0"
        sample_B_rows(state, spec, rng, ctx=ctx)
        step = "A"
        sample_A_rows(state, spec, rng, ctx=ctx)
        if spec.sample_hyper:
            step = "hyper"
            sample_hyper_shrinkage(state, spec, rng, ctx=ctx)
    except EstimationError as err:
        raise EstimationError(f"sweep {sweep_index}, step {step}: {err}") from err
    except (np.linalg.LinAlgError, ValueError, RuntimeError, FloatingPointError) as err:
        raise EstimationError(f"sweep {sweep_index}, step {step}: {err}") from err
    state.sweep += 1


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def estimate(
    spec_or_draws: Union[ModelSpec, PosteriorDraws],
    S: int,
    rng=None,
    thin: int = 1,
    check: bool = False,
    normalise: bool = True,
    reference=None,
    progress: Optional[Callable[[int, int], None]] = None,
    initial: Optional[ParameterState] = None,
) -> PosteriorDraws:
    """Run ``S * thin`` Gibbs sweeps and keep every ``thin``-th state.

    Parameters
    ----------
    spec_or_draws : ModelSpec or PosteriorDraws
        A specification starts a fresh chain from least-squares values;
        previous draws continue from their last state.
    rng : numpy Generator or seed
    check : bool
        Verify every parameter invariant after each sweep.
    reference : array (N, N), optional
        Sign-normalisation reference for ``B0``; defaults to the mean of the
        retained draws.
    progress : callable, optional
        Called as ``progress(done, total)`` every ten percent of sweeps.
    """
    if S < 1 or thin < 1:
        raise ValueError("number of draws and thinning must be positive")
    rng = _as_rng(rng)
    if isinstance(spec_or_draws, PosteriorDraws):
        spec = spec_or_draws.spec
        state = spec_or_draws.last_state.copy()
        meta = {"continued_from_sweep": state.sweep}
    else:
        spec = spec_or_draws
        state = initial.copy() if initial is not None else initial_state(spec, rng)
        meta = {}
    names = stored_fields(spec.family)
    store = {}
    ctx = SamplerContext(spec)
    total = S * thin
    marks = {max(1, (total * k) // 10) for k in range(1, 11)}
    started = time.perf_counter()
    for i in range(total):
        gibbs_sweep(state, spec, rng, ctx=ctx, sweep_index=state.sweep)
        if check:
            check_state(state, spec)
        if (i + 1) % thin == 0:
            j = (i + 1) // thin - 1
            for name in names:
                value = np.asarray(getattr(state, name))
                if j == 0:
                    store[name] = np.empty((S,) + value.shape, dtype=value.dtype)
                store[name][j] = value
        if progress is not None and (i + 1) in marks:
            progress(i + 1, total)
    meta.update(
        {
            "sweeps": total,
            "thin": thin,
            "seconds": time.perf_counter() - started,
            "family": spec.family.value,
        }
    )
    draws = PosteriorDraws(spec, store, state.copy(), meta)
    if normalise:
        draws = normalise_draws(draws, reference)
    return draws


def with_data(spec: ModelSpec, data) -> ModelSpec:
    """Copy of ``spec`` conditioning on other data of the same shape."""
    return replace(spec, data=data)
