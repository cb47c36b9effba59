import json

import numpy as np
import pytest
from scipy.stats import spearmanr

from mea.errors import ConfigError, MissingCellError
from mea.estimator import combination_effect
from mea.partitioner import build_partition
from mea.simulator import (
    METRIC,
    PRESETS,
    Contamination,
    Interaction,
    SimConfig,
    SimExperiment,
    coverage_experiment,
    preset,
    region_probabilities,
    regression_r11,
    replication_seeds,
    save_sim_config,
    sequential_pipeline,
    sim_config_from_dict,
    simulate_ctr_population,
    simulate_population,
    three_way_comparison,
    true_combination_delta,
    univariate_effect,
)


def test_same_seed_same_table():
    cfg = preset("appendix-c", n_units=70_000)
    a = simulate_population(cfg, seed=12)
    assert a == simulate_population(cfg, seed=12)
    assert a != simulate_population(cfg, seed=13)


def test_never_triggered_units_are_dropped():
    cfg = preset("appendix-c", n_units=10_000)
    table = simulate_population(cfg, seed=1)
    assert (table.codes >= 0).any(axis=1).all()
    assert abs(len(table) / 10_000 - (1 - 0.7**2)) < 0.02
    assert str(table.unit_ids[0]).startswith("u")


def test_noiseless_baseline_is_constant():
    cfg = SimConfig(
        experiments=(SimExperiment("e1", ("c", "t"), 0.5, (0.5, 0.5)), SimExperiment("e2", ("c", "t"), 0.5, (0.5, 0.5))),
        main_effects={},
        baseline_mean=3.25,
        noise_sd=0.0,
        n_units=2_000,
    )
    y = simulate_population(cfg).values[METRIC]
    assert np.all(y == 3.25)


def test_noiseless_cells_hit_the_truth_exactly():
    cfg = preset("appendix-b", noise_sd=0.0, n_units=20_000)
    part = build_partition(simulate_population(cfg, seed=2))
    truth = true_combination_delta(cfg, ("v1", "enabled"))
    est = combination_effect(part, ("v1", "enabled"))
    for c in est.ledger:
        assert c.delta == pytest.approx(truth.region_effects[c.state], abs=1e-12)


def test_appendix_b_truth():
    truth = true_combination_delta(preset("appendix-b"), ("v1", "enabled"))
    assert truth.expected_delta == pytest.approx(1.2 / 0.7, abs=1e-12)
    assert truth.region_effects == pytest.approx({(1, 1): 11.0, (1, 0): -2.0, (0, 1): -2.0})


@pytest.mark.parametrize(
    "combo, value",
    [(("c1", "t2"), 4.0), (("t1", "c2"), 3.0), (("t1", "t2"), (0.09 * -3 + 0.21 * 3 + 0.21 * 4) / 0.51)],
)
def test_appendix_c_truths(combo, value):
    assert true_combination_delta(preset("appendix-c"), combo).expected_delta == pytest.approx(value, abs=1e-12)


def test_region_probabilities():
    ind = region_probabilities(preset("appendix-b"))
    assert ind == pytest.approx({(0, 0): 0.3, (0, 1): 0.2, (1, 0): 0.3, (1, 1): 0.2})
    cfg = preset("appendix-c").replace(
        experiments=(SimExperiment("e1", ("c1", "t1"), 0.5, (0.5, 0.5)), SimExperiment("e2", ("c2", "t2"), 0.3, (0.5, 0.5))),
        trigger_dependence="nested",
    )
    nested = region_probabilities(cfg)
    assert nested == pytest.approx({(0, 0): 0.5, (0, 1): 0.0, (1, 0): 0.2, (1, 1): 0.3})
    table = simulate_population(cfg.replace(n_units=20_000), seed=3)
    assert not ((table.codes[:, 0] < 0) & (table.codes[:, 1] >= 0)).any()


def test_custom_trigger_table_must_sum_to_one():
    with pytest.raises(ConfigError):
        preset("appendix-c", trigger_dependence="custom", trigger_table={(1, 1): 0.5})


def test_error_shrinks_with_n():
    cfg = preset("appendix-c")
    ns = [2_000, 8_000, 32_000, 128_000]
    truth = true_combination_delta(cfg, ("t1", "t2")).expected_delta
    maes = []
    for n in ns:
        errs = []
        for s in replication_seeds(77, 15):
            part = build_partition(simulate_population(cfg, seed=s, n_units=n))
            errs.append(abs(combination_effect(part, ("t1", "t2")).point - truth))
        maes.append(np.mean(errs))
    rho = spearmanr(ns, maes).statistic
    assert rho == pytest.approx(-1.0)


def test_univariate_effects_in_appendix_c():
    table = simulate_population(preset("appendix-c", n_units=400_000), seed=8)
    assert univariate_effect(table, "e1", "t1") == pytest.approx(1.5, abs=0.15)
    assert univariate_effect(table, "e2", "t2") == pytest.approx(2.5, abs=0.15)


def test_sequential_trace():
    trace = sequential_pipeline(preset("appendix-c"), seed=3)
    assert trace.stage1_ship == "t1"
    assert trace.stage1_effects["t1"] == pytest.approx(1.5, abs=0.3)
    assert trace.stage2_ship == "t2"
    assert trace.stage2_effects["t2"] == pytest.approx(1.0, abs=0.3)
    assert trace.final == ("t1", "t2")
    assert trace.final_true_effect == pytest.approx(1.2 / 0.51, abs=1e-12)


def test_three_way_comparison():
    out = three_way_comparison(preset("appendix-c"), seed=3)
    assert out["univariate"]["decision"] == ("t1", "t2")
    assert out["sequential"]["decision"] == ("t1", "t2")
    assert out["mea"]["decision"] == ("c1", "t2")
    assert out["ground_truth"][("c1", "t2")] == max(out["ground_truth"].values())


def test_two_experiment_helpers_reject_other_k():
    cfg = SimConfig(experiments=(SimExperiment("e1", ("c", "t"), 0.5, (0.5, 0.5)),), main_effects={}, n_units=100)
    with pytest.raises(ConfigError):
        sequential_pipeline(cfg)
    with pytest.raises(ConfigError):
        three_way_comparison(cfg)
    with pytest.raises(ConfigError):
        regression_r11(simulate_population(cfg), ("t",))


def test_regression_agrees_with_the_r11_ledger_entry():
    additive = preset("appendix-c", interactions=(), n_units=50_000)
    table = simulate_population(additive, seed=6)
    reg = regression_r11(table, ("t1", "t2"))
    est = combination_effect(build_partition(table), ("t1", "t2"))
    r11 = next(c for c in est.ledger if c.state == (1, 1))
    assert reg.point == pytest.approx(r11.delta, abs=1e-9)
    assert reg.point == pytest.approx(7.0, abs=4 * reg.se)


def test_regression_misses_the_pooled_effect_under_interaction():
    table = simulate_population(preset("appendix-c"), seed=3)
    reg = regression_r11(table, ("t1", "t2"))
    assert reg.point == pytest.approx(-3.0, abs=4 * reg.se)
    assert reg.ci[1] < true_combination_delta(preset("appendix-c"), ("t1", "t2")).expected_delta


def test_regression_without_r11_cell():
    cfg = preset("appendix-c", trigger_dependence="custom", trigger_table={(1, 0): 0.5, (0, 1): 0.5}, n_units=500)
    with pytest.raises(MissingCellError):
        regression_r11(simulate_population(cfg), ("t1", "t2"))


def test_config_json_round_trip():
    for name, cfg in PRESETS.items():
        again = sim_config_from_dict(json.loads(save_sim_config(cfg)))
        assert again == cfg, name
    cont = preset("appendix-c", contamination=(Contamination("e1", "t1", "e2", 2.0),))
    assert sim_config_from_dict(json.loads(save_sim_config(cont))) == cont


def test_interaction_must_name_known_variants():
    with pytest.raises(ConfigError):
        preset("appendix-c", interactions=(Interaction({"e1": "zz"}, 1.0),))


def test_coverage_experiment_is_deterministic_across_workers():
    cfg = preset("appendix-c")
    a = coverage_experiment(cfg, reps=6, n_units=5_000, workers=1)
    b = coverage_experiment(cfg, reps=6, n_units=5_000, workers=3)
    assert np.array_equal(a.estimates, b.estimates) and np.array_equal(a.ses, b.ses)
    assert a.truth == pytest.approx(1.2 / 0.51)
    assert len(a.rows()) == 6 and set(a.rows()[0]) == {"rep", "seed", "estimate", "se", "covered"}
    with pytest.raises(ValueError):
        coverage_experiment(cfg, reps=0)


def test_ctr_population():
    table, lift = simulate_ctr_population(20_000, seed=1)
    assert lift == 0.02
    assert table.config.metric("ctr").is_ratio
    assert (table.values["impressions"] >= 1).all()
    assert (table.values["clicks"] <= table.values["impressions"]).all()
