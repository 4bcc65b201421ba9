import numpy as np
import pytest

from bsvar import analysis, gibbs, harness
from bsvar.model import PosteriorDraws, specify


def custom_draws(spec, A, B0, **extra):
    S = A.shape[0]
    d = {"A": A, "B0": B0, **extra}
    d = {k: np.asarray(v, float) if k != "regime" else np.asarray(v) for k, v in d.items()}
    return PosteriorDraws(spec, d, None, {})


def test_summary_quantiles():
    x = np.arange(101.0)[None, :]
    s = analysis.summarise(x, level=0.9)
    assert s.median[0] == 50 and s.lower[0] == pytest.approx(5) and s.upper[0] == pytest.approx(95)


def test_shock_identity_and_dimensions(homo_draws):
    d, _ = homo_draws
    spec = d.spec
    U = analysis.compute_structural_shocks(d)
    F = analysis.compute_fitted_values(d)
    assert U.shape == (spec.N, spec.T, d.S) and F.shape == U.shape
    recon = F + np.einsum("sij,jts->its", np.linalg.inv(d.get("B0")), U)
    np.testing.assert_allclose(recon, spec.data.Y[:, :, None] * np.ones(d.S), atol=1e-12)
    oracle = np.einsum("snk,kt->nts", d.get("A"), spec.data.X)
    np.testing.assert_allclose(F, oracle, atol=1e-13)


def test_shocks_track_truth():
    raw, truth = harness.simulate_data("homo", T=1000, N=2, seed=6)
    d = gibbs.estimate(specify(raw, p=1), 300, rng=1)
    U = analysis.compute_structural_shocks(d).mean(axis=2)
    for n in range(2):
        assert np.corrcoef(U[n], truth["shocks"][n])[0, 1] > 0.95


def test_zero_autoregression(homo_draws):
    d, _ = homo_draws
    spec = d.spec
    B0 = d.get("B0")[:5]
    z = custom_draws(spec, np.zeros((5, spec.N, spec.K)), B0)
    assert not analysis.compute_fitted_values(z).any()
    irf = analysis.compute_impulse_responses(z, 4)
    assert not irf[:, :, 1:].any()


def test_irf_recursion(homo_draws):
    d, _ = homo_draws
    irf = analysis.compute_impulse_responses(d, 5)
    N = d.spec.N
    for s in (0, d.S - 1):
        A1 = d.get("A")[s][:, :N]
        theta = np.linalg.inv(d.get("B0")[s])
        for h in range(6):
            np.testing.assert_allclose(irf[:, :, h, s], theta, atol=1e-14)
            theta = A1 @ theta


def test_fevd(homo_draws):
    d, _ = homo_draws
    H = 6
    fevd = analysis.compute_variance_decompositions(d, H)
    np.testing.assert_allclose(fevd.sum(axis=1), 1.0, atol=1e-13)
    irf = analysis.compute_impulse_responses(d, H)
    acc = np.cumsum(irf**2, axis=2)
    np.testing.assert_allclose(fevd, acc / acc.sum(axis=1, keepdims=True), atol=1e-13)
    spec = d.spec
    A = np.zeros((2, spec.N, spec.K))
    A[:, 0, 0], A[:, 1, 1] = 0.5, -0.3
    diag = analysis.compute_variance_decompositions(custom_draws(spec, A, np.tile(np.eye(2), (2, 1, 1))), 3)
    np.testing.assert_allclose(diag, np.broadcast_to(np.eye(2)[:, :, None, None], diag.shape), atol=1e-15)


def test_historical_decomposition(homo_draws):
    d, _ = homo_draws
    hd = analysis.compute_historical_decompositions(d)
    np.testing.assert_allclose(hd.total(), d.spec.data.Y[:, :, None] * np.ones(d.S), atol=1e-11)


def test_historical_decomposition_recursion_oracle(rng):
    raw = rng.standard_normal((11, 2))
    spec = specify(raw, p=1)
    A = np.array([[[0.5, 0.2, 0.1], [-0.3, 0.4, -0.2]]])
    B0 = np.array([[[1.2, 0.0], [0.4, 0.9]]])
    d = custom_draws(spec, A, B0)
    hd = analysis.compute_historical_decompositions(d)
    U = analysis.compute_structural_shocks(d)[:, :, 0]
    Binv = np.linalg.inv(B0[0])
    A1 = A[0][:, :2]
    for t in range(10):
        for j in range(2):
            oracle = sum(np.linalg.matrix_power(A1, k) @ Binv[:, j] * U[j, t - k] for k in range(t + 1))
            np.testing.assert_allclose(hd.contributions[:, j, t, 0], oracle, atol=1e-12)


def test_historical_decomposition_single_variable(rng):
    raw = rng.standard_normal((30, 1))
    spec = specify(raw, p=1)
    d = custom_draws(spec, np.array([[[0.6, 0.3]]]), np.array([[[1.5]]]))
    hd = analysis.compute_historical_decompositions(d)
    det = np.empty(spec.T)
    prev = raw[0, 0]
    for t in range(spec.T):
        prev = 0.6 * prev + 0.3
        det[t] = prev
    np.testing.assert_allclose(hd.contributions[0, 0, :, 0], spec.data.Y[0] - det, atol=1e-12)


def test_conditional_sd():
    raw, _ = harness.simulate_data("sv", T=80, N=2, seed=1)
    d = gibbs.estimate(specify(raw, p=1, family="sv"), 30, rng=1)
    sd = analysis.compute_conditional_sd(d)
    expected = np.exp(d.get("omega")[:, :, None] * d.get("h") / 2)
    np.testing.assert_allclose(np.moveaxis(sd, -1, 0), expected, rtol=1e-12)
    np.testing.assert_allclose(np.moveaxis(sd, -1, 0) ** 2, d.get("sigma2"), rtol=1e-12)


def test_homoskedastic_sd_is_one(homo_draws):
    d, _ = homo_draws
    assert np.all(analysis.compute_conditional_sd(d) == 1.0)


@pytest.mark.parametrize("family", ["msh", "mix"])
def test_regime_probabilities(family):
    raw, _ = harness.simulate_data(family, T=100, N=2, seed=2)
    d = gibbs.estimate(specify(raw, p=1, family=family), 30, rng=1)
    for kind in ("filtered", "smoothed"):
        pr = analysis.compute_regime_probabilities(d, kind=kind)
        np.testing.assert_allclose(pr.sum(axis=0), 1.0, atol=1e-12)
    real = analysis.compute_regime_probabilities(d, kind="realized")
    assert set(np.unique(real)) <= {0.0, 1.0}
    with pytest.raises(ValueError):
        analysis.compute_regime_probabilities(d, kind="bogus")


def test_white_noise_forecast(homo_draws):
    d, _ = homo_draws
    spec = d.spec
    S = 10_000
    z = custom_draws(spec, np.zeros((S, spec.N, spec.K)), np.tile(np.eye(spec.N), (S, 1, 1)))
    f = analysis.forecast(z, 2, rng=1)
    y = f.draws[:, 0, :]
    assert np.all(np.abs(y.mean(axis=1)) < 3 / np.sqrt(S))
    cov = np.cov(y)
    assert np.all(np.abs(cov - np.eye(spec.N)) < 3 * np.sqrt(2 / S))


def test_conditional_forecast_imposes_projections(homo_draws):
    d, _ = homo_draws
    cond = np.full((2, 3), np.nan)
    cond[0, 0], cond[1, 2], cond[0, 2] = 1.5, -0.5, 0.25
    f = analysis.forecast(d, 3, conditional=cond, rng=2)
    mask = ~np.isnan(cond)
    assert np.all(f.draws[mask] == cond[mask][:, None])
    assert np.all(np.isfinite(f.draws))


def test_msh_one_step_regime_probabilities():
    raw, _ = harness.simulate_data("msh", T=100, N=2, seed=2)
    d = gibbs.estimate(specify(raw, p=1, family="msh"), 20, rng=3)
    f = analysis.forecast(d, 2, rng=4)
    last = d.get("regime")[:, -1]
    expected = d.get("P")[np.arange(d.S), last].T
    np.testing.assert_allclose(f.regime_probabilities[:, 0, :], expected, atol=1e-14)
    two = np.einsum("sm,smj->sj", d.get("P")[np.arange(d.S), last], d.get("P")).T
    np.testing.assert_allclose(f.regime_probabilities[:, 1, :], two, atol=1e-14)


def test_forecast_horizon_validated(homo_draws):
    d, _ = homo_draws
    with pytest.raises(ValueError):
        analysis.forecast(d, 0)
