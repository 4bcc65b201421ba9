import csv

import numpy as np
import pytest

from bsvar import analysis, io
from bsvar.config import ConfigError, RunConfig, load_restrictions, parse_config_text, parse_hypothesis, parse_restriction_text

try:
    from hypothesis import given, settings
    from hypothesis import strategies as st
    from hypothesis.extra import numpy as hnp
except ImportError:  # pragma: no cover
    given = None


if given is not None:

    @settings(max_examples=60, deadline=None)
    @given(hnp.arrays(dtype=st.sampled_from([np.float64, np.int64, np.bool_, np.int8]),
                      shape=hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5)))
    def test_array_round_trip_is_bit_exact(arr):
        back = io.decode_array(io.encode_array(arr))
        assert back.dtype == arr.dtype and back.shape == arr.shape
        assert back.tobytes() == np.ascontiguousarray(arr).tobytes()


def test_array_file_round_trip(tmp_path, rng):
    arr = rng.standard_normal((3, 4, 5))
    arr[0, 0, 0] = np.nan
    back = io.read_array(io.write_array(tmp_path / "a.bsve", arr))
    assert back.tobytes() == arr.tobytes()


def test_corrupt_arrays_rejected():
    buf = io.encode_array(np.arange(4.0))
    with pytest.raises(ValueError):
        io.decode_array(b"XXXXX" + buf[5:])
    with pytest.raises(ValueError):
        io.decode_array(buf[:-3])


def test_posterior_round_trip(tmp_path, homo_draws):
    d, _ = homo_draws
    io.save_posterior(d, tmp_path / "post")
    back = io.load_posterior(tmp_path / "post")
    for name, arr in d.draws.items():
        assert back.get(name).tobytes() == arr.tobytes()
    np.testing.assert_array_equal(back.spec.data.raw, d.spec.data.raw)
    np.testing.assert_array_equal(back.last_state.A, d.last_state.A)
    io.save_posterior(d, tmp_path / "post", append=True)
    assert io.load_posterior(tmp_path / "post").S == 2 * d.S


def test_missing_posterior_reported(tmp_path):
    with pytest.raises(io.OutputError):
        io.load_posterior(tmp_path / "nothing")


def test_summary_csv_reparses(tmp_path, homo_draws):
    d, _ = homo_draws
    irf = analysis.compute_impulse_responses(d, 3)
    s = analysis.summarise(irf)
    labels = [(i, j, h) for i in range(2) for j in range(2) for h in range(4)]
    path = io.write_summary_csv(tmp_path / "s.csv", labels, ["variable", "shock", "horizon"], s)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row, (i, j, h) in zip(rows, labels):
        assert abs(float(row["median"]) - s.median[i, j, h]) <= 1e-12
        assert abs(float(row["upper"]) - s.upper[i, j, h]) <= 1e-12


def test_data_csv_reading(tmp_path):
    (tmp_path / "y.csv").write_text("a,b\n1,2\n3,NA\n")
    header, values = io.read_csv_matrix(tmp_path / "y.csv")
    assert header == ["a", "b"] and np.isnan(values[1, 1]) and values[0, 0] == 1.0
    with pytest.raises(ValueError, match="missing"):
        io.read_data_csv(tmp_path / "y.csv")


def test_config_parsing():
    cfg = parse_config_text("data = y.csv\nlags = 2  # two lags\nprior.nu_A = 5\nrestrict = 0,1\nrestrict = 1,0\n")
    assert cfg.lags == 2 and cfg.prior == {"nu_A": 5.0} and cfg.restrict == ["0,1", "1,0"]
    merged = cfg.merged(lags=3, prior={"a_A": 2.0}, seed=None)
    assert merged.lags == 3 and merged.prior == {"nu_A": 5.0, "a_A": 2.0}
    for bad in ("lags = x", "colour = red", "family = garch", "draws = 0", "prior.nope = 1", "novalue"):
        with pytest.raises(ConfigError):
            parse_config_text(bad)


def test_restriction_file(tmp_path):
    R = parse_restriction_text("B0\n1 0\n1 1\nA\n1 0 1\n1 1 1\n", 2, 3)
    assert R.mask_A.tolist() == [[True, False, True], [True, True, True]]
    with pytest.raises(ConfigError):
        parse_restriction_text("B0\n1 0\n", 2, 3)
    with pytest.raises(ConfigError):
        load_restrictions(tmp_path / "missing.txt", 2, 3)


def test_hypothesis_parsing():
    assert parse_hypothesis("0,1") == (0, 1, 0.0)
    assert parse_hypothesis("1,2=0.5") == (1, 2, 0.5)
    with pytest.raises(ConfigError):
        parse_hypothesis("x")


def test_default_config_is_valid():
    assert RunConfig().validate().family == "homo"
