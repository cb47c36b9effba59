import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mea.data_model import NOT_TRIGGERED, UnitTable
from mea.diagnostics import (
    Verdict,
    bar_chart_csv,
    chi_squared_homogeneity,
    chi_squared_sf,
    cramers_v,
    export_bar_chart_data,
    invariance_check,
    joint_independence_test,
    source_contingency_table,
)
from mea.errors import ConfigError, InsufficientDataError
from mea.simulator import Contamination, preset, simulate_population

from conftest import make_config
from oracles import chi2_brute, chi2_sf_mpmath, expected_counts


def test_handex_e1_table(handex):
    ct = source_contingency_table(handex, "e1")
    assert ct.row_labels == ("c1", "t1")
    assert ct.col_labels == (("c2",), ("t2",), (NOT_TRIGGERED,))
    assert ct.counts.tolist() == [[2, 2, 3], [2, 2, 3]]
    assert ct.nan_columns() == [False, False, True]


def test_handex_verdicts(handex):
    e1, e2 = invariance_check(handex)
    assert e1.verdict is Verdict.PASS and e1.chi2 == 0.0 and e1.p_value == 1.0
    assert e1.dof == 2 and e1.cramers_v == 0.0
    assert e1.bonferroni_alpha == pytest.approx(0.025)
    # E2 arms see (c1, t1, not triggered) as 2:2:2 vs 2:2:4
    assert e2.table.counts.tolist() == [[2, 2, 2], [2, 2, 4]]
    assert e2.chi2 == pytest.approx(0.3888888888888889, rel=1e-12)
    assert e2.p_value == pytest.approx(0.8233, abs=1e-4)
    assert e2.verdict is Verdict.PASS
    assert any("expected count" in w for w in e2.warnings)


def test_perfectly_dependent_two_by_two():
    res = chi_squared_homogeneity(np.array([[20, 0], [0, 20]]))
    assert res.chi2 == pytest.approx(40.0, abs=1e-12)
    assert res.dof == 1
    assert res.p_value == pytest.approx(2.5396e-10, rel=1e-4)
    assert res.p_value == pytest.approx(chi2_sf_mpmath(40.0, 1), rel=1e-10)
    assert cramers_v(res.chi2, 40, 2, 2) == pytest.approx(math.sqrt(0.5), abs=1e-12)
    assert cramers_v(res.chi2, 40, 2, 2, textbook=True) == pytest.approx(1.0, abs=1e-12)


def test_sf_against_mpmath_on_twenty_tables():
    rng = np.random.default_rng(20)
    for _ in range(20):
        r, c = rng.integers(2, 6, size=2)
        probs = rng.dirichlet(np.ones(c), size=r)
        obs = np.array([rng.multinomial(rng.integers(20, 400), p) for p in probs])
        obs = obs[:, obs.sum(0) > 0]
        res = chi_squared_homogeneity(obs)
        want = chi2_sf_mpmath(res.chi2, res.dof)
        assert abs(res.p_value - want) <= 1e-8 * max(want, 1e-300) or abs(res.p_value - want) < 1e-15


@pytest.mark.parametrize("x, dof", [(0.5, 1), (3.0, 2), (40.0, 1), (120.0, 12), (1e-6, 4), (400.0, 3)])
def test_sf_reference_points(x, dof):
    want = chi2_sf_mpmath(x, dof)
    assert chi_squared_sf(x, dof) == pytest.approx(want, rel=1e-10)


@settings(max_examples=100, deadline=None)
@given(
    obs=st.integers(2, 5).flatmap(
        lambda r: st.integers(2, 5).flatmap(
            lambda c: st.lists(
                st.lists(st.integers(1, 60), min_size=c, max_size=c), min_size=r, max_size=r
            )
        )
    )
)
def test_expected_counts_and_statistic_match_brute_force(obs):
    res = chi_squared_homogeneity(np.array(obs))
    want_e = expected_counts(obs)
    assert np.allclose(res.expected, want_e, rtol=1e-12)
    stat, dof = chi2_brute(obs)
    assert res.chi2 == pytest.approx(stat, rel=1e-9, abs=1e-12)
    assert res.dof == dof


def test_zero_rows_and_columns_are_pruned():
    res = chi_squared_homogeneity(np.array([[3, 0, 4], [0, 0, 0], [5, 0, 1]]))
    assert res.dof == 1
    with pytest.raises(InsufficientDataError):
        chi_squared_homogeneity(np.array([[3, 0], [4, 0]]))


def test_permutation_null_calibration():
    """Shuffling source arms breaks any dependence, so p < .05 about 5% of the time."""
    rng = np.random.default_rng(2024)
    n = 3000
    cols = rng.choice(3, size=n, p=[0.3, 0.3, 0.4])
    rows = rng.integers(0, 2, size=n)
    rejections = 0
    perms = 1000
    for _ in range(perms):
        r = rng.permutation(rows)
        obs = np.zeros((2, 3))
        np.add.at(obs, (r, cols), 1)
        rejections += chi_squared_homogeneity(obs).p_value < 0.05
    assert abs(rejections / perms - 0.05) <= 0.02


@settings(max_examples=50, deadline=None)
@given(
    obs=st.lists(st.lists(st.integers(1, 50), min_size=3, max_size=3), min_size=2, max_size=4),
    scale=st.integers(2, 50),
)
def test_cramers_v_scale_invariant(obs, scale):
    a = np.array(obs)
    r1 = chi_squared_homogeneity(a)
    r2 = chi_squared_homogeneity(a * scale)
    v1 = cramers_v(r1.chi2, a.sum(), *a.shape)
    v2 = cramers_v(r2.chi2, a.sum() * scale, *a.shape)
    assert v1 == pytest.approx(v2, rel=1e-9, abs=1e-12)
    assert 0.0 <= v1 <= 1.0


def test_cramers_v_rejects_empty():
    with pytest.raises(ValueError):
        cramers_v(1.0, 0, 2, 2)


@pytest.fixture(scope="module")
def contaminated():
    cfg = preset(
        "appendix-c",
        n_units=40_000,
        contamination=(Contamination("e1", "t1", "e2", 2.0),),
    )
    return simulate_population(cfg, seed=9)


def test_contamination_is_flagged(contaminated):
    e1, e2 = invariance_check(contaminated)
    assert e1.verdict is Verdict.FLAG
    assert e1.p_value < 1e-12 and e1.cramers_v > 0.1
    # the nan column share differs by arm
    rows = {r["source_variant"]: r for r in export_bar_chart_data(e1) if r["is_nan_column"]}
    assert rows["c1"]["proportion"] > rows["t1"]["proportion"] + 0.1


def test_verdict_monotone_in_thresholds(contaminated):
    flagged = []
    for alpha in (1e-30, 1e-12, 1e-3, 0.05, 0.5):
        for v in (0.5, 0.2, 0.1, 0.05, 0.0):
            res = invariance_check(contaminated, alpha=alpha, v_threshold=v)
            flagged.append(((alpha, v), {d.source for d in res if d.verdict is Verdict.FLAG}))
    for (a1, v1), f1 in flagged:
        for (a2, v2), f2 in flagged:
            if a2 >= a1 and v2 <= v1:
                assert f1 <= f2


def test_bar_chart_values(handex):
    e1 = invariance_check(handex)[0]
    data = export_bar_chart_data(e1)
    props = [(d["source_variant"], d["column_label"], d["proportion"]) for d in data]
    assert props == [
        ("c1", "(c2)", pytest.approx(2 / 7)),
        ("c1", "(t2)", pytest.approx(2 / 7)),
        ("c1", "(nan)", pytest.approx(3 / 7)),
        ("t1", "(c2)", pytest.approx(2 / 7)),
        ("t1", "(t2)", pytest.approx(2 / 7)),
        ("t1", "(nan)", pytest.approx(3 / 7)),
    ]
    for variant in ("c1", "t1"):
        assert math.fsum(d["proportion"] for d in data if d["source_variant"] == variant) == pytest.approx(1.0)
    text = bar_chart_csv(e1)
    assert text.splitlines()[0] == "source_variant,column_label,proportion,is_nan_column"
    assert text.splitlines()[3] == "c1,(nan),0.428571428571,True"


def test_skipped_when_source_has_one_arm():
    cfg = make_config([["c", "t"], ["x", "y"]])
    codes = np.array([[0, 0], [0, 1], [0, -1], [-1, 0], [-1, 1], [0, 1]])
    table = UnitTable(cfg, [f"u{i}" for i in range(6)], codes, {"y": np.arange(6.0)})
    res = invariance_check(table)
    assert res[0].verdict is Verdict.SKIPPED and res[0].table is None
    assert export_bar_chart_data(res[0]) == []
    assert res[1].verdict in (Verdict.PASS, Verdict.FLAG)


def test_single_experiment_is_a_config_error():
    cfg = make_config([["c", "t"]])
    table = UnitTable(cfg, ["a", "b"], np.array([[0], [1]]), {"y": np.zeros(2)})
    with pytest.raises(ConfigError):
        invariance_check(table)


def test_to_dict_shape(handex):
    d = invariance_check(handex)[0].to_dict()
    assert list(d)[:3] == ["source", "verdict", "chi2"]
    assert d["columns"] == ["(c2)", "(t2)", "(nan)"]
    assert len(d["bar_chart"]) == 6


def _three_way_table(weight_same, seed=5, n=20_000):
    rng = np.random.default_rng(seed)
    states = [st for st in itertools.product((0, 1), repeat=3) if any(st)]
    p = np.array([weight_same if st[0] == st[1] else 1.0 for st in states])
    trig = np.array(states)[rng.choice(len(states), n, p=p / p.sum())]
    codes = np.where(trig == 1, rng.integers(0, 2, (n, 3)), -1)
    return UnitTable(make_config([["a", "b"]] * 3), [f"u{i}" for i in range(n)], codes, {"y": np.zeros(n)})


def test_joint_test_sees_correlated_triggers_that_per_source_tests_allow():
    correlated = _three_way_table(3.0)
    assert all(d.verdict is Verdict.PASS for d in invariance_check(correlated))
    assert joint_independence_test(correlated).p_value < 1e-10
    # uniform over the seven nonzero states is exactly quasi-independent
    assert joint_independence_test(_three_way_table(1.0)).p_value > 1e-3


def test_joint_test_blind_to_two_way_trigger_correlation():
    table_probs = {(1, 1): 0.4, (1, 0): 0.1, (0, 1): 0.1, (0, 0): 0.4}
    cfg = preset("appendix-c", n_units=20_000, trigger_dependence="custom", trigger_table=table_probs)
    assert joint_independence_test(simulate_population(cfg, seed=5)).p_value > 1e-3


def test_joint_test_dof_and_fit_margins(handex):
    res = joint_independence_test(handex)
    # 3x3 table minus the structural corner: 8 cells, 4 margin parameters, one total
    assert res.dof == 3
    fit = np.nan_to_num(res.expected)
    assert fit.sum() == pytest.approx(20.0)
    assert fit.sum(axis=1).tolist() == pytest.approx([6, 7, 7])
