"""Unit-variance Student-t shocks as a scale mixture of normals.

``u | sigma2 ~ N(0, sigma2)`` with ``sigma2 ~ IG2(nu - 2, nu)`` integrates to a
Student-t with ``nu`` degrees of freedom scaled to unit variance. The prior
``p(nu) = (nu - 1)^-2`` on ``nu > 2`` makes ``lam = 1 / (nu - 1)`` uniform on
(0, 1); the degrees of freedom are updated on ``logit(lam)`` with the latent
variances integrated out.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from ..distributions import rig2

TARGET_ACCEPTANCE = 0.44
INITIAL_STEP = 1.0


def nu_to_lambda(nu):
    return 1.0 / (np.asarray(nu, dtype=float) - 1.0)


def lambda_to_nu(lam):
    return 1.0 + 1.0 / np.asarray(lam, dtype=float)


def sample_t_latent_variances(U, nu, rng: np.random.Generator) -> np.ndarray:
    """Draw ``sigma2[n, t]`` from IG2(nu_n - 2 + u^2, nu_n + 1)."""
    U = np.atleast_2d(U)
    nu = np.asarray(nu, dtype=float)[:, None]
    return rig2(rng, nu - 2.0 + np.square(U), np.broadcast_to(nu + 1.0, U.shape))


def log_t_likelihood(u, nu) -> float:
    """Sum of unit-variance Student-t log densities of ``u``."""
    u = np.asarray(u, dtype=float)
    scale2 = nu - 2.0
    return float(
        u.size * (special.gammaln(0.5 * (nu + 1.0)) - special.gammaln(0.5 * nu) - 0.5 * math.log(math.pi * scale2))
        - 0.5 * (nu + 1.0) * np.sum(np.log1p(np.square(u) / scale2))
    )


def _log_target_logit(z, u):
    # uniform prior on lam; Jacobian of lam = expit(z) is lam (1 - lam)
    lam = special.expit(z)
    if not 0.0 < lam < 1.0:
        return -np.inf
    return log_t_likelihood(u, 1.0 + 1.0 / lam) + math.log(lam) + math.log1p(-lam)


def sample_t_dof(U, nu, step, sweep, rng: np.random.Generator, adapt=True):
    """Adaptive random-walk Metropolis update of each ``nu_n``.

    Returns ``(nu, step, accepted)``. The log step size moves toward the
    target acceptance rate with a diminishing gain.
    """
    U = np.atleast_2d(U)
    nu = np.array(nu, dtype=float)
    step = np.array(step, dtype=float)
    accepted = np.zeros(nu.size, dtype=bool)
    gain = (sweep + 1.0) ** -0.6
    for n in range(nu.size):
        z = special.logit(nu_to_lambda(nu[n]))
        prop = z + step[n] * rng.standard_normal()
        log_acc = _log_target_logit(prop, U[n]) - _log_target_logit(z, U[n])
        if math.log(rng.random()) < log_acc:
            nu_new = float(lambda_to_nu(special.expit(prop)))
            if nu_new > 2.0 and np.isfinite(nu_new):
                nu[n] = nu_new
                accepted[n] = True
        if adapt:
            step[n] *= math.exp(gain * (min(1.0, math.exp(min(log_acc, 0.0))) - TARGET_ACCEPTANCE))
    return nu, step, accepted


def update_t(state, spec, U, rng) -> None:
    state.nu, state.nu_step, state.nu_accepted = sample_t_dof(U, state.nu, state.nu_step, state.sweep, rng)
    state.sigma2 = sample_t_latent_variances(U, state.nu, rng)


def simulate_prior_shocks(nu, size, rng: np.random.Generator) -> np.ndarray:
    """Shocks from the scale mixture: ``u = sqrt(sigma2) z``, ``sigma2 ~ IG2(nu - 2, nu)``."""
    sigma2 = rig2(rng, nu - 2.0, nu, size=size)
    return np.sqrt(sigma2) * rng.standard_normal(size)


def initialise(state, spec, rng) -> None:
    state.nu = np.full(spec.N, 10.0)
    state.nu_step = np.full(spec.N, INITIAL_STEP)
    state.nu_accepted = np.zeros(spec.N, dtype=bool)
    state.sigma2 = np.ones((spec.N, spec.T))
