import itertools
import math

import pytest
from hypothesis import given, settings, strategies as st

from mea.errors import WeightSumError
from mea.power import (
    PowerParams,
    binary_ratio,
    factorial_variance,
    independent_trigger_weights,
    mea_variance,
    ratio_table,
    variance_ratio,
)

from oracles import binary_ratio_exact, enumerate_ratio


def test_two_binary_experiments_worked_numbers():
    p = PowerParams(k=2, ell=2, sigma2=1.0, n_plus=1000)
    assert factorial_variance(p) == pytest.approx(0.008, abs=1e-15)
    w = {(1, 1): 1 / 3, (1, 0): 1 / 3, (0, 1): 1 / 3}
    assert mea_variance(p, w) == pytest.approx(0.0053333333333, abs=1e-12)
    assert mea_variance(p, independent_trigger_weights(2, 0.5)) == pytest.approx(0.016 / 3)


def test_weight_errors():
    p = PowerParams(k=2, ell=2, sigma2=1.0, n_plus=1000)
    with pytest.raises(WeightSumError):
        mea_variance(p, {(1, 1): 0.5, (1, 0): 0.4})
    with pytest.raises(WeightSumError):
        mea_variance(p, {(1, 1): 0.5, (0, 0): 0.5})


@pytest.mark.parametrize(
    "kw", [{"k": 0}, {"ell": 1}, {"sigma2": -1.0}, {"n_plus": 0}, {"r": 0.0}, {"r": 1.5}]
)
def test_param_domain(kw):
    base = dict(k=2, ell=2, sigma2=1.0, n_plus=100.0)
    with pytest.raises(ValueError):
        PowerParams(**{**base, **kw})


def test_unequal_variant_counts_and_stratum_variances():
    p = PowerParams(k=2, ell=(2, 3), sigma2=1.0, n_plus=60, stratum_variances={(1, 1): 4.0})
    assert factorial_variance(p) == pytest.approx(2 * 6 / 60)
    w = {(1, 1): 0.5, (1, 0): 0.25, (0, 1): 0.25}
    assert mea_variance(p, w) == pytest.approx(2 / 60 * (0.5 * 4 * 6 + 0.25 * 2 + 0.25 * 3))


@pytest.mark.parametrize("k", range(1, 11))
@pytest.mark.parametrize("ell", [2, 3, 5])
@pytest.mark.parametrize("r", [0.05, 0.3, 0.5, 0.9, 1.0])
def test_closed_form_matches_enumeration(k, ell, r):
    assert variance_ratio(k, ell, r) == pytest.approx(enumerate_ratio(k, ell, r), rel=1e-12, abs=1e-15)
    p = PowerParams(k=k, ell=ell, sigma2=2.5, n_plus=777.0, r=r)
    via_weights = mea_variance(p, independent_trigger_weights(k, r)) / factorial_variance(p)
    assert via_weights == pytest.approx(enumerate_ratio(k, ell, r), rel=1e-12)


@pytest.mark.parametrize("k", range(1, 21))
def test_binary_closed_form(k):
    assert binary_ratio(k) == float(binary_ratio_exact(k))
    assert variance_ratio(k, 2, 0.5) == pytest.approx(binary_ratio(k), rel=1e-13)


def test_never_worse_than_factorial():
    for k, ell, r in itertools.product(range(1, 13), range(2, 7), [0.01, 0.1, 0.33, 0.5, 0.77, 0.99, 1.0]):
        assert variance_ratio(k, ell, r) <= 1.0 + 1e-12


@settings(max_examples=200)
@given(k=st.integers(1, 40), ell=st.integers(2, 10), r=st.floats(1e-4, 1.0))
def test_ratio_in_unit_interval(k, ell, r):
    v = variance_ratio(k, ell, r)
    assert 0.0 < v <= 1.0 + 1e-12


def test_binary_ratio_decreases_and_tracks_three_quarters_power():
    prev = math.inf
    for k in range(1, 31):
        b = binary_ratio(k)
        assert b < prev or k == 1
        prev = b
        assert 0.9 <= b / 0.75**k <= 1.4


def test_large_k_is_finite():
    v = variance_ratio(64, 2, 0.5)
    assert math.isfinite(v) and 0.0 < v < 1e-7
    assert v == pytest.approx(float(binary_ratio_exact(64)), rel=1e-12)
    assert math.isfinite(variance_ratio(64, 10, 0.01))


def test_full_triggering_gives_no_gain():
    assert variance_ratio(5, 3, 1.0) == 1.0


def test_ratio_table_rows():
    rows = ratio_table([1, 2, 3, 4], 2, 0.5)
    assert [round(r["ratio"], 2) for r in rows] == [1.0, 0.67, 0.46, 0.33]
    assert rows[1]["multiplier"] == pytest.approx(1.5)


def test_weights_sum_to_one():
    for k in (1, 3, 8):
        for r in (0.1, 0.5, 1.0):
            w = independent_trigger_weights(k, r)
            assert len(w) == 2**k - 1
            assert math.fsum(w.values()) == pytest.approx(1.0, abs=1e-12)
