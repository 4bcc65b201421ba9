"""Simulation harness: synthetic data, direct prior simulation and Geweke tests.

The joint-distribution test compares two routes to draws of
``(parameters, data)``: independent prior draws followed by data simulation
(marginal-conditional) and a chain that alternates one Gibbs sweep with a
fresh data draw (successive-conditional). A correct sampler makes both
routes target the same joint law, so the means of any test function agree up
to Monte Carlo error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import gibbs
from .distributions import rdirichlet_log, rig2
from .model import (
    Family,
    ModelSpec,
    ParameterState,
    PosteriorDraws,
    SpecificationError,
    build_design_matrices,
    specify,
    stored_fields,
)
from .volatility import regimes, student_t, sv

GEWEKE_BOUND = 2.807  # two-sided 0.5% normal quantile
MAX_GEWEKE_SIZE = 200


# ---------------------------------------------------------------------------
# Data simulation
# ---------------------------------------------------------------------------


def companion_matrix(A, N, p) -> np.ndarray:
    top = np.asarray(A)[:, : N * p]
    if p == 1:
        return top
    low = np.hstack([np.eye(N * (p - 1)), np.zeros((N * (p - 1), N))])
    return np.vstack([top, low])


def is_stationary(A, N, p) -> bool:
    return bool(np.max(np.abs(np.linalg.eigvals(companion_matrix(A, N, p)))) < 1.0)


def _recursion(A, B0, shocks, initial, det):
    """Run ``y_t = A x_t + B0^-1 u_t`` forward from ``initial`` (p x N rows)."""
    p, N = initial.shape
    T = shocks.shape[1]
    eps = np.linalg.solve(B0, shocks)
    Alag = [A[:, k * N : (k + 1) * N] for k in range(p)]
    Adet = A[:, N * p :]
    y = np.empty((p + T, N))
    y[:p] = initial
    drift = Adet @ det[:, p:]
    for t in range(T):
        acc = drift[:, t] + eps[:, t]
        for k in range(p):
            acc = acc + Alag[k] @ y[p + t - 1 - k]
        y[p + t] = acc
    return y


def _family_variances(family, N, T, params, rng, M=2):
    """Conditional variances and the latent truth of a family's variance law."""
    truth = {}
    if family is Family.HOMO:
        return np.ones((N, T)), truth
    if family.is_sv:
        omega = np.broadcast_to(np.asarray(params.get("omega", 0.5), float), (N,)).copy()
        rho = np.broadcast_to(np.asarray(params.get("rho", 0.9), float), (N,)).copy()
        h = np.zeros((N, T))
        prev = np.zeros(N)
        for t in range(T):
            prev = rho * prev + rng.standard_normal(N)
            h[:, t] = prev
        truth.update(omega=omega, rho=rho, h=h)
        return np.exp(omega[:, None] * h), truth
    if family.is_regime:
        s2 = np.asarray(params.get("sigma2_regime", np.tile(np.linspace(0.2, 1.8, M), (N, 1))), float)
        M = s2.shape[1]
        if family.is_markov:
            P = np.asarray(params.get("P", np.full((M, M), 0.05 / max(M - 1, 1)) + np.eye(M) * (0.95 - 0.05 / max(M - 1, 1))), float)
            pi0 = np.asarray(params.get("pi0", np.full(M, 1.0 / M)), float)
            path = np.empty(T, dtype=np.int64)
            path[0] = rng.choice(M, p=pi0)
            for t in range(1, T):
                path[t] = rng.choice(M, p=P[path[t - 1]])
            truth.update(P=P, pi0=pi0)
        else:
            pi0 = np.asarray(params.get("pi0", np.full(M, 1.0 / M)), float)
            path = rng.choice(M, size=T, p=pi0)
            truth.update(pi0=pi0)
        truth.update(regime=path, sigma2_regime=s2)
        return s2[:, path], truth
    if family is Family.T:
        nu = np.broadcast_to(np.asarray(params.get("nu", 5.0), float), (N,)).copy()
        sigma2 = rig2(rng, nu[:, None] - 2.0, np.broadcast_to(nu[:, None], (N, T)))
        truth.update(nu=nu)
        return sigma2, truth
    raise SpecificationError(f"unsupported family {family}")  # pragma: no cover


def simulate_data(
    family="homo",
    T: int = 200,
    N: int = 2,
    p: int = 1,
    true_params: Optional[dict] = None,
    seed=None,
    M: int = 2,
    burn: int = 100,
    allow_explosive: bool = False,
):
    """Simulate a structural VAR with the variance law of ``family``.

    Parameters
    ----------
    true_params : dict, optional
        ``A`` (N x (N p + 1), constant last), ``B0`` (N x N) and family
        parameters: ``omega``, ``rho`` (SV); ``sigma2_regime``, ``P``, ``pi0``
        (regimes); ``nu`` (Student-t). Missing entries get defaults.
    burn : int
        Pre-sample periods generated from zero initial values and dropped.

    Returns
    -------
    raw : array (T + p, N)
    truth : dict
        The parameters used plus latent variance paths and shocks for the
        retained periods.
    """
    family = Family.parse(family)
    rng = np.random.default_rng(seed)
    params = dict(true_params or {})
    K = N * p + 1
    A = np.asarray(params.get("A", np.hstack([0.5 * np.eye(N), np.zeros((N, K - N))])), float)
    B0 = np.asarray(params.get("B0", np.eye(N)), float)
    if A.shape != (N, K) or B0.shape != (N, N):
        raise SpecificationError("true A must be N x (N p + 1) and B0 must be N x N")
    if not allow_explosive and not is_stationary(A, N, p):
        raise SpecificationError("explosive autoregression requested; pass allow_explosive=True to override")
    total = burn + T
    sigma2, truth = _family_variances(family, N, total, params, rng, M)
    shocks = np.sqrt(sigma2) * rng.standard_normal((N, total))
    det = np.ones((1, p + total))
    y = _recursion(A, B0, shocks, np.zeros((p, N)), det)
    raw = y[burn:]
    truth = {k: (v[..., burn:] if k in ("h", "regime") else v) for k, v in truth.items()}
    truth.update(A=A, B0=B0, family=family.value, sigma2=sigma2[:, burn:], shocks=shocks[:, burn:])
    return raw, truth


def simulate_observations(spec: ModelSpec, state: ParameterState, rng: np.random.Generator) -> np.ndarray:
    """Draw a data set from the model at ``state``, keeping the pre-sample of ``spec``."""
    p = spec.data.p
    shocks = np.sqrt(state.sigma2) * rng.standard_normal((spec.N, spec.T))
    return _recursion(state.A, state.B0, shocks, spec.data.raw[:p], spec.data.deterministic)


# ---------------------------------------------------------------------------
# Prior simulation
# ---------------------------------------------------------------------------


def _ar1_path(rho, var, T, rng):
    path = np.empty(T)
    prev = 0.0
    sd = math.sqrt(var)
    z = rng.standard_normal(T)
    for t in range(T):
        prev = rho * prev + sd * z[t]
        path[t] = prev
    return path


def _dirichlet(rng, alpha):
    v = np.exp(rdirichlet_log(rng, alpha))
    return v / v.sum()


def sample_prior(spec: ModelSpec, rng: np.random.Generator, B0_sweeps: int = 50) -> ParameterState:
    """One draw of every parameter and latent variable from the prior.

    With ``nu_B = N`` the structural rows are independent normals and the
    draw is exact. Larger ``nu_B`` adds a ``|det B0|`` factor; the normal
    draw is then refined by ``B0_sweeps`` prior-only row-rotation sweeps.
    """
    pr = spec.prior
    N, T, M = spec.N, spec.T, spec.M
    ctx = gibbs.SamplerContext(spec)
    s_A = float(rig2(rng, pr.s_sA, pr.nu_sA))
    s_An = rng.gamma(pr.a_A, s_A, size=N)
    gamma_A = rig2(rng, s_An, pr.nu_A)
    s_B = float(rig2(rng, pr.s_sB, pr.nu_sB))
    s_Bn = rng.gamma(pr.a_B, s_B, size=N)
    gamma_B = rig2(rng, s_Bn, pr.nu_b)
    A = np.zeros((N, spec.K))
    B0 = np.zeros((N, N))
    for n in range(N):
        idx = ctx.idx_A[n]
        A[n, idx] = ctx.m_A[n] + np.sqrt(gamma_A[n] * ctx.omega_A[n]) * rng.standard_normal(idx.size)
        idx = ctx.idx_B[n]
        L = np.linalg.cholesky(gamma_B[n] * np.asarray(pr.Omega_B[n]))
        B0[n, idx] = L @ rng.standard_normal(idx.size)
    state = ParameterState(
        A=A, B0=B0, gamma_A=gamma_A, s_An=s_An, s_A=s_A, gamma_B=gamma_B, s_Bn=s_Bn, s_B=s_B,
        sigma2=np.ones((N, T)),
    )
    if pr.nu_B > N:
        for _ in range(B0_sweeps):
            gibbs.sample_B_rows(state, spec, rng, ctx=ctx, prior_only=True)

    fam = spec.family
    if fam.is_sv:
        state.s_sigma = float(rig2(rng, pr.s_sv, pr.nu_sv))
        state.rho = rng.uniform(-1.0, 1.0, size=N)
        state.h = np.empty((N, T))
        state.sv_indicators = rng.choice(10, size=(N, T), p=sv.AUX_MIXTURE_PROB / sv.AUX_MIXTURE_PROB.sum()).astype(np.int8)
        if fam is Family.SV_NONCENTRED:
            state.sigma2_omega = rng.gamma(pr.a_sigma, state.s_sigma, size=N)
            state.omega = np.sqrt(state.sigma2_omega) * rng.standard_normal(N)
            for n in range(N):
                state.h[n] = _ar1_path(state.rho[n], 1.0, T, rng)
            # the scale prior is heavy tailed, so extreme draws may overflow to inf
            with np.errstate(over="ignore"):
                state.sigma2 = np.exp(state.omega[:, None] * state.h)
        else:
            state.s_v = rng.gamma(pr.a_sigma, state.s_sigma, size=N)
            state.sigma_v2 = rig2(rng, state.s_v, pr.a_v)
            for n in range(N):
                state.h[n] = _ar1_path(state.rho[n], state.sigma_v2[n], T, rng)
            state.sigma2 = np.exp(state.h)
    elif fam.is_regime:
        k = spec.min_occupancy
        e = float(rig2(rng, pr.s_e, pr.nu_e)) if fam.is_sparse else None
        for _ in range(100 * spec.max_retries):
            if fam.is_markov:
                P = np.vstack([_dirichlet(rng, np.full(M, e if fam.is_sparse else pr.e)) for _ in range(M)])
                pi0 = _dirichlet(rng, np.full(M, pr.e0))
                path = np.empty(T, dtype=np.int64)
                path[0] = rng.choice(M, p=pi0)
                u = rng.random(T)
                cdf = np.cumsum(P, axis=1)
                for t in range(1, T):
                    path[t] = min(int(np.searchsorted(cdf[path[t - 1]], u[t] * cdf[path[t - 1], -1], side="right")), M - 1)
            else:
                pi0 = _dirichlet(rng, np.full(M, e if fam.is_sparse else pr.e0))
                P = np.tile(pi0, (M, 1))
                path = np.minimum(np.searchsorted(np.cumsum(pi0), rng.random(T) * pi0.sum(), side="right"), M - 1)
            if regimes._occupied(path, M, k):
                break
        else:
            raise regimes.RegimeError("prior simulation could not meet the occupancy constraint")
        x = np.vstack([_dirichlet(rng, np.full(M, pr.e_sigma)) for _ in range(N)])
        state.regime, state.P, state.pi0, state.e = path, P, pi0, e
        state.sigma2_regime = M * x
        state.sigma2 = state.sigma2_regime[:, path]
    elif fam is Family.T:
        lam = rng.random(N)
        state.nu = 1.0 / lam + 1.0
        state.nu_step = np.full(N, student_t.INITIAL_STEP)
        state.nu_accepted = np.zeros(N, dtype=bool)
        state.sigma2 = rig2(rng, state.nu[:, None] - 2.0, np.broadcast_to(state.nu[:, None], (N, T)))
    return state


def prior_draws(spec: ModelSpec, S: int, rng=None) -> PosteriorDraws:
    """``S`` independent prior draws packed like posterior output.

    Verification routines treat these as a posterior without likelihood
    (``meta['prior_only']``), which calibrates the density-ratio estimators.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    names = stored_fields(spec.family)
    store = {}
    state = None
    for i in range(S):
        state = sample_prior(spec, rng)
        for name in names:
            value = np.asarray(getattr(state, name))
            if i == 0:
                store[name] = np.empty((S,) + value.shape, dtype=value.dtype)
            store[name][i] = value
    return PosteriorDraws(spec, store, state, {"prior_only": True})


# ---------------------------------------------------------------------------
# Geweke joint-distribution test
# ---------------------------------------------------------------------------


def geweke_spec(family="homo", N: int = 2, T: int = 30, p: int = 1, M: Optional[int] = None, seed=0) -> ModelSpec:
    """Small specification with moderate priors for joint-distribution tests.

    The default hyper-priors allow very large scales that make simulated data
    explode over short samples; here the autoregressive prior is tight around
    zero and the volatility hierarchies are bounded in their moments.
    """
    family = Family.parse(family)
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((T + p, N))
    K = N * p + 1
    overrides = {
        "Omega_A": np.diag(np.full(K, 0.05)),
        "s_sB": 100.0,
        "nu_sB": 100.0,
        "s_sv": 1.0,
        "nu_sv": 10.0,
    }
    if family.is_regime and M is None:
        M = 2
    return specify(raw, p, family, M=M, unit_root_flags=np.zeros(N, bool), prior_overrides=overrides)


def _log(x):
    return math.log(max(float(x), 1e-300))


def default_test_functions(spec: ModelSpec):
    """Twenty scalar functions of ``(state, data)`` tracked by the test."""
    fam = spec.family
    N = spec.N
    j = 1 if N > 1 else 0

    def y2(state, Y):
        return _log(np.mean(np.square(Y[0])))

    fns = [
        ("A[0,0]", lambda s, Y: s.A[0, 0]),
        (f"A[{j},{j}]", lambda s, Y: s.A[j, j]),
        (f"A[0,{j}]", lambda s, Y: s.A[0, j]),
        ("A[0,const]", lambda s, Y: s.A[0, -1]),
        ("|B0[0,0]|", lambda s, Y: abs(s.B0[0, 0])),
        (f"B0[{j},0]*sign", lambda s, Y: s.B0[j, 0] * np.sign(s.B0[j, j])),
        (f"|B0[{j},{j}]|", lambda s, Y: abs(s.B0[j, j])),
        ("log gamma_A[0]", lambda s, Y: _log(s.gamma_A[0])),
        ("log gamma_B[0]", lambda s, Y: _log(s.gamma_B[0])),
        ("log s_A", lambda s, Y: _log(s.s_A)),
        ("log s_B", lambda s, Y: _log(s.s_B)),
        ("log mean y0^2", y2),
    ]
    if fam is Family.HOMO:
        fam_fns = [("log s_An[0]", lambda s, Y: _log(s.s_An[0])), ("log s_Bn[0]", lambda s, Y: _log(s.s_Bn[0]))]
    elif fam is Family.SV_NONCENTRED:
        fam_fns = [("rho[0]", lambda s, Y: s.rho[0]), ("|omega[0]|", lambda s, Y: abs(s.omega[0]))]
    elif fam is Family.SV_CENTRED:
        fam_fns = [("rho[0]", lambda s, Y: s.rho[0]), ("log sigma_v2[0]", lambda s, Y: _log(s.sigma_v2[0]))]
    elif fam.is_markov:
        # label-invariant: chains rarely switch labels, the exchangeable prior does
        fam_fns = [("trace P", lambda s, Y: float(np.trace(s.P))), ("log max sigma2_regime[0]", lambda s, Y: _log(s.sigma2_regime[0].max()))]
    elif fam.is_regime:
        fam_fns = [("max pi0", lambda s, Y: float(s.pi0.max())), ("log max sigma2_regime[0]", lambda s, Y: _log(s.sigma2_regime[0].max()))]
    else:
        fam_fns = [("lambda[0]", lambda s, Y: 1.0 / (s.nu[0] - 1.0)), ("log sigma2[0,0]", lambda s, Y: _log(s.sigma2[0, 0]))]
    if fam.is_sparse:
        fam_fns = [fam_fns[0], ("log e", lambda s, Y: _log(s.e))]
    fns += fam_fns
    fns += [
        ("A[0,0]^2", lambda s, Y: s.A[0, 0] ** 2),
        (f"A[{j},{j}]^2", lambda s, Y: s.A[j, j] ** 2),
        ("B0[0,0]^2", lambda s, Y: s.B0[0, 0] ** 2),
        (f"B0[{j},0]^2", lambda s, Y: s.B0[j, 0] ** 2),
        (f"B0[{j},{j}]^2", lambda s, Y: s.B0[j, j] ** 2),
        (f"A[0,0]*A[{j},{j}]", lambda s, Y: s.A[0, 0] * s.A[j, j]),
    ]
    return fns


def batch_means_se(x, batches: int = 50) -> float:
    """Standard error of the mean of a correlated series by batch means."""
    x = np.asarray(x, dtype=float)
    b = max(2, min(batches, x.size // 2))
    size = x.size // b
    means = x[: size * b].reshape(b, size).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(b))


@dataclass
class GewekeReport:
    names: list
    z: np.ndarray
    marginal_means: np.ndarray
    successive_means: np.ndarray
    sweeps: int
    bound: float = GEWEKE_BOUND
    allowed_exceedances: int = 1

    @property
    def exceedances(self) -> int:
        return int(np.sum(np.abs(self.z) > self.bound))

    @property
    def passed(self) -> bool:
        return self.exceedances <= self.allowed_exceedances

    def table(self) -> list:
        return [
            {"moment": n, "z": float(z), "marginal_conditional": float(a), "successive_conditional": float(b)}
            for n, z, a, b in zip(self.names, self.z, self.marginal_means, self.successive_means)
        ]


def _with_observations(spec, raw):
    data = build_design_matrices(raw, spec.data.p, spec.data.deterministic, spec.data.names)
    return replace(spec, data=data)


def geweke_joint_test(
    spec: ModelSpec,
    sweeps: int,
    rng=None,
    n_marginal: Optional[int] = None,
    functions: Optional[Sequence] = None,
    batches: int = 50,
) -> GewekeReport:
    """Compare marginal-conditional and successive-conditional simulators.

    Parameters
    ----------
    spec : ModelSpec
        Small instance (``N * T <= 200``); its data only provide the
        pre-sample values and deterministic terms.
    sweeps : int
        Length of the successive-conditional chain.
    n_marginal : int, optional
        Number of independent prior-and-data draws (defaults to ``sweeps``).
    """
    if sweeps < 1:
        raise ValueError("the joint-distribution test needs at least one sweep")
    if spec.N * spec.T > MAX_GEWEKE_SIZE:
        raise ValueError(f"instance too large for the joint-distribution test: N T = {spec.N * spec.T} > {MAX_GEWEKE_SIZE}")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    fns = list(functions) if functions is not None else default_test_functions(spec)
    n_marginal = sweeps if n_marginal is None else n_marginal

    mc = np.empty((n_marginal, len(fns)))
    for i in range(n_marginal):
        state = sample_prior(spec, rng)
        raw = simulate_observations(spec, state, rng)
        Y = raw[spec.data.p :].T
        mc[i] = [f(state, Y) for _, f in fns]

    sc = np.empty((sweeps, len(fns)))
    state = sample_prior(spec, rng)
    current = _with_observations(spec, simulate_observations(spec, state, rng))
    for i in range(sweeps):
        gibbs.gibbs_sweep(state, current, rng, sweep_index=i)
        current = _with_observations(spec, simulate_observations(current, state, rng))
        sc[i] = [f(state, current.data.Y) for _, f in fns]

    m_mc, m_sc = mc.mean(axis=0), sc.mean(axis=0)
    se_mc = mc.std(axis=0, ddof=1) / math.sqrt(n_marginal)
    se_sc = np.array([batch_means_se(sc[:, k], batches) for k in range(len(fns))])
    z = (m_mc - m_sc) / np.sqrt(se_mc**2 + se_sc**2)
    return GewekeReport([n for n, _ in fns], z, m_mc, m_sc, sweeps)
