import itertools
import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from bsvar import gibbs, harness
from bsvar.model import specify
from bsvar.volatility import regimes, student_t, sv, update_homoskedastic


def dense_smoother_moments(obs, loading, obs_var, rho, state_var):
    """Posterior mean and covariance of the AR(1) path from dense matrices."""
    T = obs.size
    H = np.eye(T) - rho * np.eye(T, k=-1)
    Q = H.T @ H / state_var + np.diag(loading**2 / obs_var)
    cov = np.linalg.inv(Q)
    return cov @ (loading * obs / obs_var), cov


# --- homoskedastic -------------------------------------------------------------


def test_homoskedastic_variances_are_one(homo_draws):
    d, _ = homo_draws
    st = d.state(0)
    st.sigma2 = np.full_like(st.sigma2, 3.0)
    update_homoskedastic(st)
    update_homoskedastic(st)
    assert np.all(st.sigma2 == 1.0)


# --- stochastic volatility ----------------------------------------------------------


def test_aux_weights_match_direct_density():
    r = np.linspace(-20, 5, 50)
    w = sv.aux_indicator_weights(r)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0)
    dens = sv.AUX_MIXTURE_PROB * stats.norm.pdf(r[:, None], sv.AUX_MIXTURE_MEAN, np.sqrt(sv.AUX_MIXTURE_VAR))
    np.testing.assert_allclose(w, dens / dens.sum(axis=1, keepdims=True), rtol=1e-10, atol=1e-300)


def test_aux_mixture_table_is_a_distribution():
    assert sv.AUX_MIXTURE_PROB.sum() == pytest.approx(1.0, abs=1e-4)
    assert np.all(sv.AUX_MIXTURE_VAR > 0)
    mix_mean = sv.AUX_MIXTURE_PROB @ sv.AUX_MIXTURE_MEAN
    assert mix_mean == pytest.approx(special.digamma(0.5) + math.log(2), abs=0.01)


def test_aux_indicator_frequencies_match_weights(rng):
    r = np.array([-1.3, 0.4, -7.0])
    w = sv.aux_indicator_weights(r)
    draws = sv.sample_aux_indicators(np.tile(r, (100_000, 1)), 0.0, rng)
    for j in range(r.size):
        freq = np.bincount(draws[:, j], minlength=10) / draws.shape[0]
        se = np.sqrt(w[j] * (1 - w[j]) / draws.shape[0])
        assert np.all(np.abs(freq - w[j]) <= 3.5 * se + 1e-12)


def test_smoother_without_loading_is_ar1_prior(rng):
    T, rho, var = 6, 0.7, 0.5
    draws = np.array([sv.sample_log_volatility(np.zeros(T), 0.0, np.ones(T), rho, var, rng) for _ in range(10_000)])
    _, cov = dense_smoother_moments(np.zeros(T), 0.0, np.ones(T), rho, var)
    np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.06 * cov.max())
    assert np.all(np.abs(draws.mean(axis=0)) < 4 * np.sqrt(np.diag(cov) / draws.shape[0]))


def test_smoother_matches_dense_oracle(rng):
    obs = np.array([0.5, -1.0, 2.0, 0.3, -0.4])
    obs_var = np.array([1.0, 0.4, 2.5, 0.9, 1.6])
    mean, cov = dense_smoother_moments(obs, 0.8, obs_var, 0.9, 0.3)
    draws = np.array([sv.sample_log_volatility(obs, 0.8, obs_var, 0.9, 0.3, rng) for _ in range(40_000)])
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * np.sqrt(np.diag(cov) / draws.shape[0]))
    np.testing.assert_allclose(np.cov(draws.T), cov, rtol=0.05, atol=0.02 * cov.max())


def test_smoother_rejects_unit_root(rng):
    with pytest.raises(ValueError):
        sv.sample_log_volatility(np.zeros(3), 1.0, np.ones(3), 1.0, 1.0, rng)


def test_reparameterisation_round_trip(rng):
    omega, h = -0.7, rng.standard_normal(20)
    h_t, s2 = sv.to_centred(omega, h)
    omega2, h2 = sv.to_noncentred(h_t, s2, sign=omega)
    assert omega2 == pytest.approx(omega)
    np.testing.assert_allclose(np.exp(omega2 * h2), np.exp(omega * h), rtol=1e-14)


@pytest.mark.parametrize("family", ["sv", "sv-centred"])
def test_sv_draws_are_stationary_and_consistent(family):
    raw, _ = harness.simulate_data("sv", T=150, N=2, seed=5, true_params={"omega": 1.0})
    spec = specify(raw, p=1, family=family)
    d = gibbs.estimate(spec, 200, rng=1)
    assert np.all(np.abs(d.get("rho")) < 1)
    h = d.get("h")
    if family == "sv":
        expected = np.exp(d.get("omega")[:, :, None] * h)
    else:
        expected = np.exp(h)
    np.testing.assert_allclose(d.get("sigma2"), expected, rtol=1e-12)


def test_sv_hierarchy_defaults():
    spec = specify(np.random.default_rng(0).standard_normal((40, 2)), 1, "sv")
    pr = spec.prior
    assert (pr.a_v, pr.a_sigma, pr.nu_sv, pr.s_sv) == (1.0, 1.0, 1.0, 0.1)


def test_sv_simulation_has_excess_kurtosis():
    _, truth = harness.simulate_data("sv", T=20_000, N=1, seed=1, true_params={"omega": 1.0})
    assert stats.kurtosis(truth["shocks"][0], fisher=False) > 3.5


# --- regimes -------------------------------------------------------------------------


def test_single_regime_is_constant(rng):
    path, filt, smooth = regimes.ffbs_states(np.ones((1, 8)), np.ones((1, 1)), np.ones(1), rng)
    assert np.all(path == 0) and np.all(filt == 1) and np.all(smooth == 1)


def test_identical_emissions_give_uniform_smoothing():
    M = 3
    _, smooth = regimes.filter_regimes(np.ones((M, 10)), np.full((M, M), 1 / M), np.full(M, 1 / M))
    np.testing.assert_allclose(smooth, 1 / M)


def _enumerate_paths(emis, P, pi0):
    M, T = emis.shape
    probs = {}
    for path in itertools.product(range(M), repeat=T):
        w = pi0[path[0]] * emis[path[0], 0]
        for t in range(1, T):
            w *= P[path[t - 1], path[t]] * emis[path[t], t]
        probs[path] = w
    z = sum(probs.values())
    return {k: v / z for k, v in probs.items()}


def test_ffbs_matches_enumeration(rng):
    emis = np.array([[0.2, 1.0, 0.6, 0.1], [0.9, 0.3, 0.5, 1.2]])
    P = np.array([[0.8, 0.2], [0.35, 0.65]])
    pi0 = np.array([0.3, 0.7])
    exact = _enumerate_paths(emis, P, pi0)
    n = 100_000
    counts = {}
    for _ in range(n):
        key = tuple(regimes.ffbs_states(emis, P, pi0, rng)[0])
        counts[key] = counts.get(key, 0) + 1
    for key, p in exact.items():
        assert abs(counts.get(key, 0) / n - p) < 3.5 * math.sqrt(p * (1 - p) / n) + 1e-9
    _, smooth = regimes.filter_regimes(emis, P, pi0)
    marg = np.zeros((2, 4))
    for key, p in exact.items():
        marg[list(key), range(4)] += p
    np.testing.assert_allclose(smooth, marg, atol=1e-12)


def test_transition_rows_follow_dirichlet_means(rng):
    path = np.array([0, 0, 1, 1, 1, 0, 2, 2, 0, 1])
    counts = regimes.transition_counts(path, 3)
    draws = np.array([regimes.sample_transition_matrix(path, 3, 1.0, 1.0, rng)[0] for _ in range(20_000)])
    np.testing.assert_allclose(draws.sum(axis=2), 1.0, atol=1e-12)
    expected = (counts + 1) / (counts + 1).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(draws.mean(axis=0), expected, atol=0.01)


def test_regime_variances_sum_to_M(rng):
    U = rng.standard_normal((2, 60)) * np.r_[np.ones(30), 3 * np.ones(30)]
    labels = np.r_[np.zeros(30, int), np.ones(20, int), 2 * np.ones(10, int)]
    cur = np.ones((2, 3))
    for _ in range(200):
        cur = regimes.sample_regime_variances(U, labels, 3, 1.0, rng, current=cur)
        np.testing.assert_allclose(cur.sum(axis=1), 3.0, rtol=0, atol=1e-12)
    assert np.all(regimes.sample_regime_variances(U, labels, 1, 1.0, rng) == 1.0)


def test_prior_regime_variances_have_unit_mean(rng):
    U = np.zeros((1, 0))
    labels = np.zeros(0, int)
    cur = np.ones((1, 4))
    draws = np.empty((20_000, 4))
    for i in range(draws.shape[0]):
        cur = regimes.sample_regime_variances(U, labels, 4, 1.0, rng, current=cur)
        draws[i] = cur[0]
    se = np.array([harness.batch_means_se(draws[:, m]) for m in range(4)])
    assert np.all(np.abs(draws.mean(axis=0) - 1.0) < 4 * se)


def test_regime_variance_ordinate_integrates_to_one():
    counts, ss = np.array([5.0, 12.0]), np.array([3.0, 40.0])
    val, _ = integrate.quad(lambda x: math.exp(regimes.log_regime_variance_ordinate([x, 1 - x], counts, ss, 2, 1.0)), 0, 1)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_allocation_probabilities(rng):
    U = rng.standard_normal((2, 6))
    pi0 = np.array([0.2, 0.5, 0.3])
    np.testing.assert_allclose(regimes.allocation_probabilities(U, pi0, np.ones((2, 3))), np.tile(pi0[:, None], (1, 6)))
    s2 = np.array([[0.5, 1.0, 1.5], [2.0, 0.5, 0.5]])
    brute = np.array([[pi0[m] * np.prod(stats.norm.pdf(U[:, t], scale=np.sqrt(s2[:, m]))) for t in range(6)] for m in range(3)])
    np.testing.assert_allclose(regimes.allocation_probabilities(U, pi0, s2), brute / brute.sum(axis=0), rtol=1e-12)


def test_finite_mixture_allocations_occupy_every_component(rng):
    U = rng.standard_normal((1, 30))
    pi0 = np.array([0.96, 0.02, 0.02])
    for _ in range(50):
        path = regimes.sample_mixture_allocations(U, pi0, np.ones((1, 3)), rng, min_occupancy=1)
        assert np.bincount(path, minlength=3).min() >= 1


# --- Student-t -----------------------------------------------------------------------


def test_t_prior_latent_variance_mean(rng):
    draws = np.array([student_t.sample_t_latent_variances(np.zeros((1, 0)), [7.0], rng) for _ in range(1)])
    s2 = student_t.rig2(rng, 5.0, 7.0, size=400_000)
    assert abs(s2.mean() - 1.0) < 4 * s2.std() / math.sqrt(s2.size)
    assert draws.shape == (1, 1, 0)


def test_t_latent_conditional_matches_quadrature(rng):
    u, nu = 1.7, 5.0

    def post(x):
        return math.exp(stats.norm.logpdf(u, scale=math.sqrt(x)) + stats.invgamma.logpdf(x, nu / 2, scale=(nu - 2) / 2))

    z = integrate.quad(post, 0, np.inf)[0]
    mean = integrate.quad(lambda x: x * post(x), 0, np.inf)[0] / z
    draws = student_t.sample_t_latent_variances(np.full((1, 400_000), u), [nu], rng)
    assert draws.mean() == pytest.approx(mean, rel=0.01)


def test_dof_prior_is_proper_and_uniform_in_lambda():
    assert integrate.quad(lambda v: (v - 1) ** -2, 2, np.inf)[0] == pytest.approx(1.0)
    lam = np.linspace(0.05, 0.95, 7)
    nu = student_t.lambda_to_nu(lam)
    jac = 1 / lam**2
    np.testing.assert_allclose((nu - 1) ** -2 * jac, 1.0)


def test_dof_posterior_recovers_truth():
    raw, _ = harness.simulate_data("t", T=5000, N=1, seed=8, true_params={"nu": 5.0, "A": [[0.3, 0.0]]})
    spec = specify(raw, p=1, family="t")
    d = gibbs.estimate(spec, 600, rng=2)
    assert 3.5 <= np.median(d.get("nu")[100:]) <= 7.0
