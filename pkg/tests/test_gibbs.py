import math

import numpy as np
import pytest
from scipy import integrate, linalg

from bsvar import gibbs, harness
from bsvar.model import check_state, specify


def _spec(T=200, N=2, seed=0, family="homo", **kw):
    raw, truth = harness.simulate_data(family if family in ("homo", "sv", "msh", "mix", "t") else "homo",
                                       T=T, N=N, seed=seed)
    return specify(raw, p=1, family=family, **kw), truth


def test_tight_prior_pins_rows_to_prior_mean(rng):
    spec, _ = _spec()
    state = gibbs.initial_state(spec, rng)
    state.gamma_A[:] = 1e-20
    gibbs.sample_A_rows(state, spec, rng)
    np.testing.assert_allclose(state.A, spec.prior.m_A.T, atol=1e-8)


def test_diffuse_prior_matches_least_squares():
    raw, _ = harness.simulate_data("homo", T=2000, N=2, seed=4)
    spec = specify(raw, p=1, sample_hyper=False)
    rng = np.random.default_rng(5)
    init = gibbs.initial_state(spec, rng)
    init.gamma_A[:] = 1e6
    d = gibbs.estimate(spec, 3000, rng=rng, initial=init)
    Y, X = spec.data.Y, spec.data.X
    ols = np.linalg.solve(X @ X.T, X @ Y.T).T
    A = d.get("A")
    se = np.array([[harness.batch_means_se(A[:, i, j]) for j in range(A.shape[2])] for i in range(A.shape[1])])
    assert np.all(np.abs(A.mean(axis=0) - ols) < 3.5 * se + 1e-12)


def test_structural_rows_keep_their_pattern(rng):
    spec, _ = _spec(N=3)
    state = gibbs.initial_state(spec, rng)
    for _ in range(20):
        gibbs.sample_B_rows(state, spec, rng)
        assert np.all(np.triu(state.B0, 1) == 0.0)


def test_row_flip_leaves_likelihood_unchanged(rng):
    spec, _ = _spec(N=3)
    state = gibbs.initial_state(spec, rng)
    before = gibbs.log_likelihood(state, spec)
    state.B0[1] *= -1
    assert gibbs.log_likelihood(state, spec) == pytest.approx(before, rel=1e-14)


def test_scalar_structural_draws_match_quadrature(rng):
    raw, _ = harness.simulate_data("homo", T=1000, N=1, seed=2, true_params={"A": [[0.3, 0.0]], "B0": [[2.0]]})
    spec = specify(raw, p=1)
    state = gibbs.initial_state(spec, rng)
    S = gibbs.residual_cross_product(state, spec)[0, 0] + 1.0 / state.gamma_B[0]
    beta = spec.T + spec.prior.nu_B - spec.N
    draws = np.empty(20_000)
    for i in range(draws.size):
        gibbs.sample_B_rows(state, spec, rng)
        draws[i] = state.B0[0, 0] ** 2
    b_hat = math.sqrt(beta / S)

    def moment(k):
        f = lambda b: b ** (2 * k) * math.exp(beta * math.log(b / b_hat) - 0.5 * S * (b * b - b_hat * b_hat))
        return integrate.quad(f, 0, 10 * b_hat, points=[b_hat], limit=200)[0]

    z = moment(0)
    assert draws.mean() == pytest.approx(moment(1) / z, rel=0.02)
    assert draws.var() == pytest.approx(moment(2) / z - (moment(1) / z) ** 2, rel=0.05)


def _prior_only_chain(spec, rng, sweeps):
    ctx = gibbs.SamplerContext(spec)
    state = harness.sample_prior(spec, rng)
    out = np.empty((sweeps, 2))
    for i in range(sweeps):
        for n in range(spec.N):
            idx, mean, C = gibbs.a_row_conditional(n, state, spec, ctx=ctx, prior_only=True)
            state.A[n, idx] = mean + linalg.solve_triangular(C.T, rng.standard_normal(idx.size), lower=False)
        gibbs.sample_B_rows(state, spec, rng, ctx=ctx, prior_only=True)
        gibbs.sample_hyper_shrinkage(state, spec, rng, ctx=ctx)
        assert np.all(state.gamma_A > 0) and np.all(state.gamma_B > 0) and state.s_A > 0 and state.s_B > 0
        out[i] = state.gamma_A[0], state.s_An[0]
    return out


def test_hierarchy_without_data_has_prior_mean(rng):
    spec, _ = _spec()
    pr = spec.prior
    out = _prior_only_chain(spec, rng, 20_000)
    expected = pr.a_A * pr.s_sA / (pr.nu_sA - 2) / (pr.nu_A - 2)
    se = harness.batch_means_se(out[:, 0])
    assert abs(out[:, 0].mean() - expected) < 4 * se
    assert abs(out[:, 0].mean() - out[:, 1].mean() / (pr.nu_A - 2)) < 4 * se


def test_normalisation_properties(homo_draws):
    d, _ = homo_draws
    ref = np.asarray(d.meta["normalisation_reference"])
    again = gibbs.normalise_draws(d, ref)
    np.testing.assert_array_equal(again.get("B0"), d.get("B0"))
    flipped = dict(d.draws)
    flipped["B0"] = d.get("B0") * np.array([-1.0, 1.0])[None, :, None]
    recovered = gibbs.normalise_draws(type(d)(d.spec, flipped, d.last_state, d.meta), ref)
    np.testing.assert_array_equal(recovered.get("B0"), d.get("B0"))
    st = d.state(7)
    ll = gibbs.log_likelihood(st, d.spec)
    st.B0 = flipped["B0"][7]
    assert gibbs.log_likelihood(st, d.spec) == pytest.approx(ll, rel=1e-13)


def test_continuation_matches_single_run():
    spec, _ = _spec()
    rng = np.random.default_rng(9)
    burn = gibbs.estimate(spec, 50, rng=rng)
    cont = gibbs.estimate(burn, 100, rng=rng)
    assert cont.S == 100 and cont.meta["continued_from_sweep"] == 50
    single = gibbs.estimate(spec, 150, rng=np.random.default_rng(9))
    np.testing.assert_array_equal(cont.get("A"), single.get("A")[50:])


def test_fixed_seed_is_bit_identical():
    spec, _ = _spec(family="sv")
    a = gibbs.estimate(spec, 30, rng=1)
    b = gibbs.estimate(spec, 30, rng=1)
    for name in a.draws:
        np.testing.assert_array_equal(a.get(name), b.get(name))


def test_nonpositive_sweeps_rejected():
    spec, _ = _spec()
    with pytest.raises(ValueError):
        gibbs.estimate(spec, 0)


@pytest.mark.parametrize("family,M", [("homo", None), ("sv", None), ("sv-centred", None), ("msh", 2),
                                      ("msh-sparse", 5), ("mix", 3), ("mix-sparse", 5), ("t", None)])
def test_every_draw_satisfies_invariants(family, M):
    raw, _ = harness.simulate_data("homo", T=120, N=2, seed=1)
    spec = specify(raw, p=1, family=family, M=M)
    d = gibbs.estimate(spec, 40, rng=2, check=True)
    for i in (0, d.S - 1):
        check_state(d.state(i), spec)


def test_recovers_structural_matrix():
    raw, truth = harness.simulate_data("homo", T=500, N=3, seed=3, true_params={"B0": [[1, 0, 0], [0.5, 1.2, 0], [-0.4, 0.3, 0.8]]})
    spec = specify(raw, p=1)
    d = gibbs.estimate(spec, 3000, rng=4)
    B = d.get("B0")
    mask = spec.restrictions.mask_B
    z = (B.mean(axis=0) - truth["B0"])[mask] / B.std(axis=0)[mask]
    assert np.all(np.abs(z) < 3)
