import numpy as np
import pytest
from scipy import stats as sps

from session_miner.errors import ConfigError, InsufficientDataError, ZeroVarianceError
from session_miner.stats.moments import pearson, skewness, skewness_and_transform


def test_pearson_trivial_cases():
    a = np.array([1.0, 2.0, 3.0, 5.0])
    r, p = pearson(a, a)
    assert r == pytest.approx(1.0)
    r, _ = pearson(a, -a)
    assert r == pytest.approx(-1.0)


def test_pearson_strong_correlation_small_p():
    rng = np.random.default_rng(4)
    a = rng.normal(size=100)
    b = a + 0.2 * rng.normal(size=100)
    r, p = pearson(a, b)
    assert r > 0.9 and p < 1e-3


def test_pearson_errors():
    with pytest.raises(ZeroVarianceError):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(InsufficientDataError):
        pearson([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(InsufficientDataError):
        pearson([1.0, 2.0, 3.0], [1.0, 2.0])


def test_skewness_matches_scipy_population_convention():
    rng = np.random.default_rng(17)
    x = rng.gamma(2.0, size=500)
    assert skewness(x) == pytest.approx(sps.skew(x, bias=True), rel=1e-12)


def test_symmetric_data_passes_through_auto():
    rep = skewness_and_transform([-1.0, 0.0, 1.0], "auto")
    assert rep.g1_before == 0.0
    assert rep.transform == "none"
    assert rep.g1_after == 0.0
    assert list(rep.values) == [-1.0, 0.0, 1.0]


def test_exponential_sample_triggers_log1p():
    rng = np.random.default_rng(123)
    x = rng.exponential(scale=3, size=10_000)
    rep = skewness_and_transform(x, "auto")
    assert rep.g1_before == pytest.approx(2.0, abs=0.15)
    assert rep.transform == "log1p"
    assert rep.g1_after < 0.7


def test_moderate_skew_triggers_sqrt():
    rng = np.random.default_rng(9)
    x = rng.chisquare(4, size=20_000)  # skewness sqrt(8/4) ~ 1.41
    rep = skewness_and_transform(x, "auto")
    assert 1.0 <= rep.g1_before < 2.0
    assert rep.transform == "sqrt"
    assert abs(rep.g1_after) < abs(rep.g1_before)


def test_explicit_policies_are_honored():
    x = np.array([0.0, 1.0, 2.0, 9.0])
    assert skewness_and_transform(x, "none").transform == "none"
    assert skewness_and_transform(x, "sqrt").transform == "sqrt"
    rep = skewness_and_transform(x, "log1p")
    assert rep.values[0] == 0.0  # zeros stay finite under ln(x+1)


def test_transform_errors():
    with pytest.raises(ZeroVarianceError):
        skewness_and_transform([2.0, 2.0, 2.0], "auto")
    with pytest.raises(ConfigError):
        skewness_and_transform([-1.0, 0.0, 1.0, 5.0], "sqrt")
    with pytest.raises(ConfigError):
        skewness_and_transform([-2.0, 0.0, 1.0, 5.0], "log1p")
    with pytest.raises(ConfigError):
        skewness_and_transform([1.0, 2.0, 3.0], "boxcox")
    with pytest.raises(InsufficientDataError):
        skewness([1.0, 2.0])
