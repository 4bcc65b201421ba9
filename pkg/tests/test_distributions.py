import math

import numpy as np
import pytest
from scipy import integrate, stats

from bsvar.distributions import (
    log_dirichlet_pdf,
    log_gamma_pdf,
    log_gig_normaliser,
    log_ig2_pdf,
    rdirichlet_log,
    rgig,
    rig2,
    rtruncnorm,
)


def test_ig2_mean_and_density(rng):
    x = rig2(rng, 3.0, 12.0, size=200_000)
    assert abs(x.mean() - 3.0 / 10.0) < 4 * x.std() / math.sqrt(x.size)
    total, _ = integrate.quad(lambda v: math.exp(log_ig2_pdf(v, 3.0, 12.0)), 0, np.inf)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_ig2_draws_are_independent_across_elements(rng):
    x = rig2(rng, np.ones((2, 20_000)), 10.0)
    assert abs(np.corrcoef(x)[0, 1]) < 0.03


def test_gamma_density_matches_scipy():
    x = np.linspace(0.1, 5, 7)
    np.testing.assert_allclose(log_gamma_pdf(x, 0.7, 2.5), stats.gamma(a=2.5, scale=0.7).logpdf(x))


@pytest.mark.parametrize("lam,chi,psi", [(0.5, 1.0, 2.0), (-3.0, 0.2, 5.0), (40.0, 3.0, 0.1), (-0.2, 0.05, 0.5)])
def test_gig_moments_match_scipy(rng, lam, chi, psi):
    ref = stats.geninvgauss(lam, math.sqrt(chi * psi), scale=math.sqrt(chi / psi))
    x = np.array([rgig(rng, lam, chi, psi) for _ in range(20_000)])
    assert abs(np.log(x).mean() - ref.expect(np.log)) < 4 * np.log(x).std() / math.sqrt(x.size)
    ks = stats.kstest(x, ref.cdf)
    assert ks.pvalue > 1e-3


@pytest.mark.parametrize("lam,chi,psi", [(0.5, 1.0, 2.0), (-3.0, 0.2, 5.0), (2.0, 0.0, 1.0), (-2.0, 1.0, 0.0)])
def test_gig_normaliser_matches_quadrature(lam, chi, psi):
    val, _ = integrate.quad(lambda x: x ** (lam - 1) * math.exp(-(chi / x + psi * x) / 2), 0, np.inf, limit=200)
    assert log_gig_normaliser(lam, chi, psi) == pytest.approx(math.log(val), abs=1e-7)


def test_gig_tiny_omega_falls_back_to_gamma(rng):
    x = np.array([rgig(rng, 2.0, 1e-320, 2.0) for _ in range(20_000)])
    assert abs(x.mean() - 2.0) < 4 * x.std() / math.sqrt(x.size)


def test_gig_rejects_invalid_parameters(rng):
    with pytest.raises(ValueError):
        rgig(rng, 1.0, -1.0, 1.0)


@pytest.mark.parametrize("lo,hi", [(-0.5, 0.5), (4.0, 6.0), (-30.0, -25.0)])
def test_truncated_normal(rng, lo, hi):
    x = np.array([rtruncnorm(rng, 0.0, 1.0, lo, hi) for _ in range(5000)])
    assert np.all((x >= lo) & (x <= hi))
    ref = stats.truncnorm(lo, hi)
    assert abs(x.mean() - ref.mean()) < 4 * ref.std() / math.sqrt(x.size)


@pytest.mark.parametrize("alpha", [[1.0, 2.0, 3.0], [0.05] * 20])
def test_dirichlet_log_draws(rng, alpha):
    alpha = np.array(alpha)
    draws = np.exp(np.array([rdirichlet_log(rng, alpha) for _ in range(20_000)]))
    np.testing.assert_allclose(draws.sum(axis=1), 1.0, atol=1e-12)
    mean = alpha / alpha.sum()
    se = np.sqrt(mean * (1 - mean) / (alpha.sum() + 1) / draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 5 * se)


def test_dirichlet_density_matches_scipy():
    p = np.array([0.2, 0.3, 0.5])
    alpha = np.array([1.5, 0.7, 3.0])
    assert log_dirichlet_pdf(np.log(p), alpha) == pytest.approx(stats.dirichlet(alpha).logpdf(p))
