import math

import numpy as np
import pytest
from scipy import integrate, stats

from bsvar import gibbs, harness
from bsvar import verification as V
from bsvar.model import RestrictionPattern, SpecificationError, specify


def test_empty_restriction_is_neutral(homo_draws):
    d, _ = homo_draws
    r = V.sddr_autoregression(d, [])
    assert r.log_sddr == 0.0 and r.sddr == 1.0


def test_scalar_model_matches_quadrature_oracle():
    raw, _ = harness.simulate_data("homo", T=60, N=1, seed=3, true_params={"A": [[0.15, 0.0]], "B0": [[1.0]]})
    spec = specify(raw, p=1, sample_hyper=False)
    d = gibbs.estimate(spec, 20_000, rng=1)
    res = V.sddr_autoregression(d, [(0, 0)])

    # b integrates out analytically; the constant and the lag coefficient by quadrature
    Y, X = spec.data.Y[0], spec.data.X
    gA, gB = d.get("gamma_A")[0, 0], d.get("gamma_B")[0, 0]
    om, m = np.diag(spec.prior.Omega_A), spec.prior.m_A[:, 0]
    ob = 1.0 / float(np.asarray(spec.prior.Omega_B[0]).ravel()[0])

    def logpost(a1, c):
        r = Y - a1 * X[0] - c * X[1]
        return (-0.5 * (spec.T + 1) * math.log(r @ r + ob / gB)
                - 0.5 * (a1 - m[0]) ** 2 / (gA * om[0]) - 0.5 * (c - m[1]) ** 2 / (gA * om[1]))

    ref = logpost(0.15, float(np.mean(Y)))
    f = lambda c, a: math.exp(logpost(a, c) - ref)
    Z, _ = integrate.dblquad(f, -1.0, 1.5, -3.0, 3.0)
    num, _ = integrate.quad(lambda c: f(c, 0.0), -3.0, 3.0)
    log_prior = stats.norm.logpdf(0.0, m[0], math.sqrt(gA * om[0]))
    oracle = math.log(num / Z) - log_prior
    assert abs(math.exp(res.log_sddr - oracle) - 1.0) < 0.02


def test_prior_only_autoregression_ratio_is_one():
    raw, _ = harness.simulate_data("homo", T=60, N=2, seed=1)
    d = harness.prior_draws(specify(raw, p=1), 3000, np.random.default_rng(2))
    r = V.sddr_autoregression(d, [(0, 1), (1, 0)])
    assert abs(r.log_sddr) < 3 * r.nse


def test_prior_only_regime_ratio_is_one():
    raw, _ = harness.simulate_data("homo", T=60, N=2, seed=1)
    d = harness.prior_draws(specify(raw, p=1, family="msh", M=2), 1500, np.random.default_rng(4))
    r = V.sddr_identification_regimes(d, 1)
    assert r.nse > 0
    assert abs(r.log_sddr) < 3 * r.nse


def test_restriction_on_excluded_element_rejected():
    raw, _ = harness.simulate_data("homo", T=60, N=2, seed=1)
    mask_A = np.ones((2, 3), bool)
    mask_A[0, 1] = False
    spec = specify(raw, p=1, restrictions=RestrictionPattern.from_masks(np.tril(np.ones((2, 2), bool)), mask_A))
    d = gibbs.estimate(spec, 30, rng=1)
    with pytest.raises(SpecificationError):
        V.sddr_autoregression(d, [(0, 1)])


def test_omega_prior_ordinate_matches_quadrature():
    a, s_, nu = 1.5, 0.3, 3.0

    def inner(s):
        # omega | s integrated over the gamma variance, evaluated at zero
        g = lambda v: stats.norm.pdf(0.0, scale=math.sqrt(v)) * stats.gamma.pdf(v, a, scale=s)
        return integrate.quad(g, 0, np.inf, limit=200)[0] * stats.invgamma.pdf(s, nu / 2, scale=s_ / 2)

    val = integrate.quad(inner, 0, np.inf, limit=200)[0]
    assert V.log_prior_omega_at_zero(a, s_, nu) == pytest.approx(math.log(val), abs=1e-6)


@pytest.mark.parametrize("M,e", [(2, 1.0), (3, 1.0), (5, 2.5)])
def test_dirichlet_centre_ordinate(M, e):
    assert V.log_dirichlet_centre(M, e) == pytest.approx(stats.dirichlet(np.full(M, e)).logpdf(np.full(M, 1 / M)))
    if e == 1.0:
        assert V.log_dirichlet_centre(M, e) == pytest.approx(math.log(math.factorial(M - 1)))


def test_reflected_kde_recovers_uniform_density(rng):
    contrib, h = V.reflected_kde_at_zero(rng.random(20_000))
    assert h > 0 and contrib.mean() == pytest.approx(1.0, abs=0.05)


def test_sv_ratio_rejects_strong_volatility():
    raw, _ = harness.simulate_data("sv", T=300, N=2, seed=3, true_params={"omega": [1.2, 1.2], "rho": [0.95, 0.95]})
    d = gibbs.estimate(specify(raw, p=1, family="sv"), 600, rng=1)
    res = V.sddr_identification(d)
    assert all(not r.favours_restriction for r in res)
    assert V.identification_verdict(res) == "globally identified"


def test_identification_tests_require_matching_family(homo_draws):
    d, _ = homo_draws
    with pytest.raises(SpecificationError):
        V.sddr_identification(d)
    with pytest.raises(SpecificationError):
        V.sddr_identification_sv(d, 0)
    with pytest.raises(SpecificationError):
        V.sddr_identification_t(d, 0)


def test_kde_needs_enough_draws():
    raw, _ = harness.simulate_data("t", T=100, N=1, seed=1)
    d = gibbs.estimate(specify(raw, p=1, family="t"), 50, rng=1)
    with pytest.raises(SpecificationError):
        V.sddr_identification_t(d, 0)
    r = V.sddr_identification_t(d, 0, method="conditional")
    assert np.isfinite(r.log_sddr)


def test_verdict_counts_favouring_shocks():
    mk = lambda x: V.SddrResult(x, 0.01, 0.0, 0.0, "h")
    assert V.identification_verdict([mk(1.0), mk(-2.0), mk(-1.0)]) == "globally identified"
    assert V.identification_verdict([mk(1.0), mk(0.5), mk(-1.0)]).startswith("not globally identified")
    assert V.interpret(mk(-1.0)) == "rejects restriction"
