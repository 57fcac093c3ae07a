import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sle4.stats import MCEstimate, Z99, dkw_epsilon, mc_mean, ols_slope, summarize


def test_mc_mean_plain_and_batched():
    x = np.arange(10.0)
    e = mc_mean(x)
    assert e.estimate == 4.5 and e.stderr == pytest.approx(x.std(ddof=1) / np.sqrt(10))
    b = mc_mean(np.repeat([1.0, 3.0], 50), n_batches=2)
    assert b.stderr == pytest.approx(1.0)


def test_single_sample_is_inconclusive():
    rows = summarize({"one": [1.0], "many": np.ones(40)})
    assert rows[0]["status"] == "INCONCLUSIVE" and rows[0]["stderr"] is None
    assert rows[1]["status"] == "OK"
    assert np.isnan(MCEstimate(1.0, None, 1).ci()[0])


def test_estimate_validation():
    with pytest.raises(ValueError):
        MCEstimate(0.0, -1.0, 5)
    with pytest.raises(ValueError):
        MCEstimate(0.0, 1.0, 0)


def test_ci_width():
    lo, hi = MCEstimate(0.0, 1.0, 10).ci()
    assert hi == pytest.approx(2.5758293, rel=1e-6) and lo == -hi
    assert Z99 == pytest.approx(2.5758293, rel=1e-6)


def test_dkw():
    assert dkw_epsilon(10_000, 0.01) == pytest.approx(np.sqrt(np.log(200) / 20_000))


@settings(max_examples=50, deadline=None)
@given(m=st.floats(-5, 5), c=st.floats(-5, 5))
def test_ols_recovers_exact_line(m, c):
    x = np.linspace(0, 3, 7)
    s, se, i = ols_slope(x, m * x + c)
    assert s == pytest.approx(m, abs=1e-9) and i == pytest.approx(c, abs=1e-9)
    assert se < 1e-6


def test_ols_known_sigma_se():
    x = np.array([0.0, 1.0])
    s, se, _ = ols_slope(x, [0.0, 2.0], sigma=[1.0, 1.0])
    assert s == pytest.approx(2.0) and se == pytest.approx(np.sqrt(2.0))
