import numpy as np
import pytest

from bsvar import gibbs, harness
from bsvar.model import SpecificationError


def test_simulation_is_seeded():
    a, _ = harness.simulate_data("msh", T=50, seed=4)
    b, _ = harness.simulate_data("msh", T=50, seed=4)
    np.testing.assert_array_equal(a, b)


def test_white_noise_covariance():
    N, T = 2, 100_000
    raw, _ = harness.simulate_data("homo", T=T, N=N, seed=1, true_params={"A": np.zeros((N, N + 1))})
    cov = np.cov(raw.T)
    assert np.all(np.abs(cov - np.eye(N)) < 3 * np.sqrt(2.0 / T))


def test_explosive_parameters_rejected():
    with pytest.raises(SpecificationError):
        harness.simulate_data("homo", T=20, N=1, true_params={"A": [[1.2, 0.0]]})


def test_companion_stationarity():
    A = np.array([[0.5, 0.1, 0.2, 0.0, 1.0], [0.0, 0.4, 0.0, 0.1, 0.0]])
    assert harness.is_stationary(A, 2, 2)
    assert harness.companion_matrix(A, 2, 2).shape == (4, 4)


def test_geweke_report_structure():
    # short run: the pass/fail verdict needs tens of thousands of sweeps (acceptance suite)
    rep = harness.geweke_joint_test(harness.geweke_spec("homo"), 300, rng=1)
    assert len(rep.z) == len(rep.names) == 20 and np.all(np.isfinite(rep.z))
    assert rep.exceedances == int(np.sum(np.abs(rep.z) > rep.bound))


def test_geweke_detects_corrupted_shrinkage(monkeypatch):
    original = gibbs.sample_hyper_shrinkage

    def halved(state, spec, rng, ctx=None):
        original(state, spec, rng, ctx=ctx)
        state.gamma_A *= 0.5
        state.gamma_B *= 0.5

    monkeypatch.setattr(gibbs, "sample_hyper_shrinkage", halved)
    rep = harness.geweke_joint_test(harness.geweke_spec("homo"), 3000, rng=1)
    assert np.max(np.abs(rep.z)) > 5


def test_geweke_argument_checks():
    with pytest.raises(ValueError):
        harness.geweke_joint_test(harness.geweke_spec("homo"), 0)
    with pytest.raises(ValueError):
        harness.geweke_joint_test(harness.geweke_spec("homo", T=150), 10)


def test_prior_draws_flagged(rng):
    d = harness.prior_draws(harness.geweke_spec("mix"), 20, rng)
    assert d.meta["prior_only"] and d.S == 20
