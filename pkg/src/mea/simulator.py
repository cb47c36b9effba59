"""Synthetic overlapping experiments with known ground truth.

Generative model, per unit:

1. draw the trigger vector from the configured joint law (independent
   Bernoulli, nested via one shared uniform, or an explicit table);
2. draw a latent arm for every experiment from its split, independently;
3. optionally let a source arm raise or lower another experiment's trigger
   probability (a deliberate Arm-Trigger Invariance violation);
4. outcome = baseline mean + main effects of the triggered arms
   + interaction effects whose experiments all triggered with the listed
   variants + Gaussian noise.

Random numbers are drawn in fixed blocks of units, each block seeded from
``(seed, block index)``. The first n units are therefore identical for any
population size >= n, which gives common random numbers across N sweeps.
"""

from __future__ import annotations

import concurrent.futures as cf
import itertools
import json
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data_model import AnalysisConfig, ExperimentSpec, MetricSpec, UnitTable
from .errors import ConfigError, MissingCellError
from .estimator import (
    EffectEstimate,
    all_combinations,
    combination_comparison,
    combination_effect,
)
from .partitioner import TriggerState, build_partition

__all__ = [
    "SimExperiment",
    "Interaction",
    "Contamination",
    "SimConfig",
    "GroundTruth",
    "CoverageResult",
    "SequentialTrace",
    "PRESETS",
    "preset",
    "sim_config_from_dict",
    "simulate_population",
    "region_probabilities",
    "true_combination_delta",
    "coverage_experiment",
    "replication_seeds",
    "PRESET_TARGETS",
    "save_sim_config",
    "univariate_effect",
    "sequential_pipeline",
    "three_way_comparison",
    "regression_r11",
    "simulate_ctr_population",
]

BLOCK_SIZE = 1 << 16
METRIC = "metric1"


@dataclass(frozen=True)
class SimExperiment:
    id: str
    variants: tuple[str, ...]
    trigger_rate: float
    split: tuple[float, ...]

    def spec(self) -> ExperimentSpec:
        return ExperimentSpec(self.id, tuple(self.variants), self.variants[0])


@dataclass(frozen=True)
class Interaction:
    """Extra effect for units that triggered every listed experiment with the listed variant."""

    when: Mapping[str, str]
    effect: float


@dataclass(frozen=True)
class Contamination:
    """Units in ``variant`` of ``source`` trigger ``target`` at ``multiplier`` times its rate."""

    source: str
    variant: str
    target: str
    multiplier: float


@dataclass(frozen=True)
class SimConfig:
    experiments: tuple[SimExperiment, ...]
    main_effects: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    interactions: tuple[Interaction, ...] = ()
    baseline_mean: float = 0.0
    noise_sd: float = 5.0
    n_units: int = 100_000
    seed: int = 0
    trigger_dependence: str = "independent"
    trigger_table: Mapping[tuple, float] | None = None
    contamination: tuple[Contamination, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "experiments", tuple(self.experiments))
        object.__setattr__(self, "interactions", tuple(self.interactions))
        object.__setattr__(self, "contamination", tuple(self.contamination))
        self.validate()

    def validate(self) -> None:
        ids = [e.id for e in self.experiments]
        if not ids or len(set(ids)) != len(ids):
            raise ConfigError("simulation needs uniquely named experiments")
        for e in self.experiments:
            if not 0.0 < e.trigger_rate <= 1.0:
                raise ConfigError(f"{e.id}: trigger rate must lie in (0, 1]")
            if len(e.split) != len(e.variants) or any(p < 0 for p in e.split):
                raise ConfigError(f"{e.id}: one nonnegative split entry per variant required")
            if abs(sum(e.split) - 1.0) > 1e-12:
                raise ConfigError(f"{e.id}: variant split sums to {sum(e.split)}, not 1")
        for exp_id, effects in self.main_effects.items():
            e = self._exp(exp_id)
            for v in effects:
                if v not in e.variants:
                    raise ConfigError(f"main effect on unknown variant {exp_id}={v}")
        for inter in self.interactions:
            for exp_id, v in inter.when.items():
                if v not in self._exp(exp_id).variants:
                    raise ConfigError(f"interaction on unknown variant {exp_id}={v}")
        for c in self.contamination:
            if c.variant not in self._exp(c.source).variants:
                raise ConfigError(f"contamination on unknown variant {c.source}={c.variant}")
            self._exp(c.target)
            if c.multiplier < 0:
                raise ConfigError("contamination multiplier must be nonnegative")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be nonnegative")
        if self.n_units < 1:
            raise ConfigError("n_units must be positive")
        if self.trigger_dependence not in ("independent", "nested", "custom"):
            raise ConfigError(f"unknown trigger dependence {self.trigger_dependence!r}")
        if self.trigger_dependence == "custom":
            table = self.trigger_table or {}
            k = len(self.experiments)
            if any(len(s) != k for s in table) or any(p < 0 for p in table.values()):
                raise ConfigError("custom trigger table needs nonnegative probabilities over {0,1}^k")
            if abs(sum(table.values()) - 1.0) > 1e-9:
                raise ConfigError("custom trigger table must sum to 1")

    def _exp(self, exp_id: str) -> SimExperiment:
        for e in self.experiments:
            if e.id == exp_id:
                return e
        raise ConfigError(f"unknown experiment {exp_id!r}")

    @property
    def k(self) -> int:
        return len(self.experiments)

    def analysis_config(self, **kw) -> AnalysisConfig:
        return AnalysisConfig(
            experiments=tuple(e.spec() for e in self.experiments),
            metrics=(MetricSpec(METRIC),),
            **kw,
        )

    def replace(self, **changes) -> "SimConfig":
        fields = {f: getattr(self, f) for f in self.__dataclass_fields__}
        fields.update(changes)
        return SimConfig(**fields)


def _tuple_key(s: str) -> tuple:
    return tuple(int(c) for c in s.strip("()[] ").replace(",", " ").split())


def sim_config_from_dict(doc: Mapping) -> SimConfig:
    """Build a :class:`SimConfig` from its JSON shape.

    Example::

        {"experiments": [{"id": "e1", "variants": ["c1", "t1"],
                          "trigger_rate": 0.3, "split": [0.5, 0.5]}, ...],
         "main_effects": {"e1": {"t1": 3}},
         "interactions": [{"when": {"e1": "t1", "e2": "t2"}, "effect": -10}],
         "noise_sd": 5, "n_units": 100000, "seed": 0}
    """
    try:
        exps = tuple(
            SimExperiment(
                id=str(e["id"]),
                variants=tuple(e["variants"]),
                trigger_rate=float(e["trigger_rate"]),
                split=tuple(float(x) for x in e["split"]),
            )
            for e in doc["experiments"]
        )
        table = doc.get("trigger_table")
        if table is not None:
            table = {_tuple_key(k): float(v) for k, v in table.items()}
        return SimConfig(
            experiments=exps,
            main_effects={k: dict(v) for k, v in doc.get("main_effects", {}).items()},
            interactions=tuple(
                Interaction(dict(i["when"]), float(i["effect"])) for i in doc.get("interactions", [])
            ),
            baseline_mean=float(doc.get("baseline_mean", 0.0)),
            noise_sd=float(doc.get("noise_sd", 5.0)),
            n_units=int(doc.get("n_units", 100_000)),
            seed=int(doc.get("seed", 0)),
            trigger_dependence=doc.get("trigger_dependence", "independent"),
            trigger_table=table,
            contamination=tuple(Contamination(**c) for c in doc.get("contamination", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed simulation config: {exc!r}") from exc


# E1 (control, v1, v2) triggers 50% with a 40/30/30 split; E2 (control,
# enabled) triggers 40% with a 40/60 split; independent triggering.
APPENDIX_B = SimConfig(
    experiments=(
        SimExperiment("e1", ("control", "v1", "v2"), 0.5, (0.4, 0.3, 0.3)),
        SimExperiment("e2", ("control", "enabled"), 0.4, (0.4, 0.6)),
    ),
    main_effects={"e1": {"v1": -2.0, "v2": 5.0}, "e2": {"enabled": -2.0}},
    interactions=(
        Interaction({"e1": "v1", "e2": "enabled"}, 15.0),
        Interaction({"e1": "v2", "e2": "control"}, -2.0),
    ),
    baseline_mean=0.0,
    noise_sd=5.0,
    n_units=200_000,
    seed=0,
)

# Two binary experiments, 30% independent triggering, 50/50 splits,
# +3 / +4 main effects and a -10 interaction when both treatments apply.
APPENDIX_C = SimConfig(
    experiments=(
        SimExperiment("e1", ("c1", "t1"), 0.3, (0.5, 0.5)),
        SimExperiment("e2", ("c2", "t2"), 0.3, (0.5, 0.5)),
    ),
    main_effects={"e1": {"t1": 3.0}, "e2": {"t2": 4.0}},
    interactions=(Interaction({"e1": "t1", "e2": "t2"}, -10.0),),
    baseline_mean=0.0,
    noise_sd=5.0,
    n_units=100_000,
    seed=0,
)

PRESETS = {"appendix-b": APPENDIX_B, "appendix-c": APPENDIX_C}

#: Comparison each preset is built around.
PRESET_TARGETS = {
    "appendix-b": (("v1", "enabled"), ("control", "control")),
    "appendix-c": (("t1", "t2"), ("c1", "c2")),
}


def preset(name: str, **changes) -> SimConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return cfg.replace(**changes) if changes else cfg


# --------------------------------------------------------------------------
# population


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(block,)))


def _trigger_states(k: int) -> list[tuple]:
    return list(itertools.product((0, 1), repeat=k))


def _draw_block(cfg: SimConfig, rng: np.random.Generator, n: int):
    k = cfg.k
    rates = np.array([e.trigger_rate for e in cfg.experiments])
    u_trig = rng.random((n, k))
    u_arm = rng.random((n, k))
    noise = rng.standard_normal(n)
    if cfg.trigger_dependence == "independent":
        trig = u_trig < rates
    elif cfg.trigger_dependence == "nested":
        trig = u_trig[:, :1] < rates
    else:
        states = _trigger_states(k)
        probs = np.array([cfg.trigger_table.get(s, 0.0) for s in states])
        cum = np.cumsum(probs)
        cum[-1] = 1.0
        pick = np.minimum(np.searchsorted(cum, u_trig[:, 0], side="right"), len(states) - 1)
        trig = np.array(states, dtype=bool)[pick]
    arms = np.empty((n, k), dtype=np.int16)
    for j, e in enumerate(cfg.experiments):
        cum = np.cumsum(e.split)
        cum[-1] = 1.0
        arms[:, j] = np.minimum(np.searchsorted(cum, u_arm[:, j], side="right"), len(e.split) - 1)
    ids = [e.id for e in cfg.experiments]
    for c in cfg.contamination:
        s, t = ids.index(c.source), ids.index(c.target)
        v = cfg.experiments[s].variants.index(c.variant)
        hit = trig[:, s] & (arms[:, s] == v)
        p_new = min(1.0, c.multiplier * cfg.experiments[t].trigger_rate)
        # reuse the target's trigger uniform so unaffected structure is kept
        u = u_trig[:, t] if cfg.trigger_dependence == "independent" else rng.random(n)
        trig[hit, t] = u[hit] < p_new
    return trig, arms, noise


def _outcome_means(cfg: SimConfig, trig: np.ndarray, arms: np.ndarray) -> np.ndarray:
    n = trig.shape[0]
    mu = np.full(n, cfg.baseline_mean)
    ids = [e.id for e in cfg.experiments]
    for exp_id, effects in cfg.main_effects.items():
        j = ids.index(exp_id)
        table = np.zeros(len(cfg.experiments[j].variants))
        for v, eff in effects.items():
            table[cfg.experiments[j].variants.index(v)] = eff
        mu += np.where(trig[:, j], table[arms[:, j]], 0.0)
    for inter in cfg.interactions:
        hit = np.ones(n, dtype=bool)
        for exp_id, v in inter.when.items():
            j = ids.index(exp_id)
            hit &= trig[:, j] & (arms[:, j] == cfg.experiments[j].variants.index(v))
        mu += np.where(hit, inter.effect, 0.0)
    return mu


def simulate_population(cfg: SimConfig, seed: int | None = None, n_units: int | None = None) -> UnitTable:
    """Draw one synthetic population; deterministic given the seed."""
    seed = cfg.seed if seed is None else seed
    n = cfg.n_units if n_units is None else n_units
    parts = []
    for block in range(math.ceil(n / BLOCK_SIZE)):
        size = min(BLOCK_SIZE, n - block * BLOCK_SIZE)
        trig, arms, noise = _draw_block(cfg, _block_rng(seed, block), BLOCK_SIZE)
        parts.append((trig[:size], arms[:size], noise[:size]))
    trig = np.concatenate([p[0] for p in parts])
    arms = np.concatenate([p[1] for p in parts])
    noise = np.concatenate([p[2] for p in parts])
    y = _outcome_means(cfg, trig, arms) + cfg.noise_sd * noise
    codes = np.where(trig, arms, -1).astype(np.int16)
    keep = trig.any(axis=1)  # never-triggered units are not part of the data
    width = len(str(n))
    unit_ids = np.array([f"u{i:0{width}d}" for i in np.flatnonzero(keep)], dtype=object)
    return UnitTable(cfg.analysis_config(), unit_ids, codes[keep], {METRIC: y[keep]})


# --------------------------------------------------------------------------
# ground truth


def region_probabilities(cfg: SimConfig) -> dict[TriggerState, float]:
    """Probability of every trigger state under the configured law (no contamination)."""
    rates = [e.trigger_rate for e in cfg.experiments]
    states = _trigger_states(cfg.k)
    if cfg.trigger_dependence == "independent":
        return {
            s: math.prod(r if b else 1.0 - r for r, b in zip(rates, s)) for s in states
        }
    if cfg.trigger_dependence == "custom":
        return {s: float(cfg.trigger_table.get(s, 0.0)) for s in states}
    # nested: S_j = 1{U < r_j} for a single uniform U
    cuts = sorted(set([0.0, 1.0, *rates]))
    out = {s: 0.0 for s in states}
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (lo + hi)
        out[tuple(int(mid < r) for r in rates)] += hi - lo
    return out


@dataclass(frozen=True)
class GroundTruth:
    """Region-level effects and the impacted-population expected delta.

    ``support`` lists the regions where the launch changes some triggered
    experiment's variant; ``expected_delta`` is the probability-weighted
    average of ``region_effects`` over it.
    """

    target: tuple[str, ...]
    baseline: tuple[str, ...]
    region_probabilities: Mapping[TriggerState, float]
    region_effects: Mapping[TriggerState, float]
    support: tuple[TriggerState, ...]
    expected_delta: float


def _cell_mean(cfg: SimConfig, codes: Sequence[int]) -> float:
    trig = np.array([[c >= 0 for c in codes]])
    arms = np.array([[max(c, 0) for c in codes]], dtype=np.int16)
    return float(_outcome_means(cfg, trig, arms)[0])


def true_combination_delta(cfg: SimConfig, combo, baseline_combo=None) -> GroundTruth:
    """Closed-form expected effect of launching ``combo`` over the impacted population."""
    specs = [e.spec() for e in cfg.experiments]
    comp = combination_comparison(specs, combo, baseline_combo)
    probs = region_probabilities(cfg)
    effects = {
        s: _cell_mean(cfg, comp.target[s]) - _cell_mean(cfg, comp.baseline[s]) for s in comp.support
    }
    mass = sum(probs[s] for s in comp.support)
    delta = sum(probs[s] * effects[s] for s in comp.support) / mass if mass > 0 else 0.0
    return GroundTruth(
        target=tuple(combo) if not isinstance(combo, Mapping) else tuple(combo[e.id] for e in specs),
        baseline=tuple(baseline_combo)
        if baseline_combo is not None and not isinstance(baseline_combo, Mapping)
        else tuple(e.baseline for e in specs),
        region_probabilities=probs,
        region_effects=effects,
        support=comp.support,
        expected_delta=delta,
    )


# --------------------------------------------------------------------------
# replications


def _workers() -> int:
    env = os.environ.get("MEA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def replication_seeds(seed: int, reps: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(reps)
    return [int(c.generate_state(1)[0]) for c in children]


@dataclass(frozen=True)
class CoverageResult:
    truth: float
    coverage: float
    mean_ci_length: float
    estimates: np.ndarray
    ses: np.ndarray
    covered: np.ndarray
    seeds: tuple[int, ...]

    @property
    def empirical_quantile_range(self) -> float:
        """Width of the central 95% of the estimates."""
        lo, hi = np.quantile(self.estimates, [0.025, 0.975])
        return float(hi - lo)

    def rows(self) -> list[dict]:
        return [
            {"rep": i, "seed": s, "estimate": e, "se": se, "covered": bool(c)}
            for i, (s, e, se, c) in enumerate(zip(self.seeds, self.estimates, self.ses, self.covered))
        ]


def coverage_experiment(
    cfg: SimConfig,
    reps: int,
    alpha: float = 0.05,
    target=None,
    baseline=None,
    variance_method: str = "jackknife",
    n_units: int | None = None,
    workers: int | None = None,
    n_buckets: int = 20,
) -> CoverageResult:
    """Fraction of replications whose CI contains the closed-form truth.

    The default bucketed jackknife recomputes the region weights in every
    leave-out sample. The analytic fixed-weight variance ignores weight
    uncertainty, which matters when region effects differ a lot (in the
    ``appendix-b`` preset they range from -2 to +11) and pulls its
    coverage below nominal.

    Replication seeds are spawned from ``cfg.seed``, so the result is
    deterministic regardless of how many worker threads run it.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    if target is None:
        target = tuple(e.variants[-1] for e in cfg.experiments)
    truth = true_combination_delta(cfg, target, baseline).expected_delta
    seeds = replication_seeds(cfg.seed, reps)

    def one(seed):
        table = simulate_population(cfg, seed=seed, n_units=n_units)
        part = build_partition(table, n_buckets=n_buckets)
        est = combination_effect(part, target, baseline, variance_method=variance_method, alpha=alpha)
        return est.point, est.se, est.ci

    workers = workers or _workers()
    if workers > 1 and reps > 1:
        with cf.ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    est = np.array([r[0] for r in results])
    ses = np.array([r[1] for r in results])
    lo = np.array([r[2][0] for r in results])
    hi = np.array([r[2][1] for r in results])
    covered = (lo <= truth) & (truth <= hi)
    return CoverageResult(
        truth=truth,
        coverage=float(covered.mean()),
        mean_ci_length=float((hi - lo).mean()),
        estimates=est,
        ses=ses,
        covered=covered,
        seeds=tuple(seeds),
    )


# --------------------------------------------------------------------------
# alternatives to joint analysis


def univariate_effect(table: UnitTable, experiment: str, target_variant: str, metric: str = METRIC) -> float:
    """Plain difference of means over every unit that triggered ``experiment``.

    Other experiments are ignored entirely, as when each test is read out in
    isolation.
    """
    config = table.config
    j = config.experiment_index(experiment)
    exp = config.experiments[j]
    col = config.metric(metric).numerator_column
    y = table.values[col]
    t = table.codes[:, j] == exp.index(target_variant)
    c = table.codes[:, j] == exp.baseline_index
    if not t.any() or not c.any():
        raise MissingCellError(f"{experiment}: no units in {target_variant!r} or the baseline")
    return float(y[t].mean() - y[c].mean())


def _univariate_winner(table: UnitTable, experiment: str) -> tuple[str, float]:
    exp = table.config.experiment(experiment)
    best, best_eff = exp.baseline, 0.0
    for v in exp.variants:
        if v == exp.baseline:
            continue
        eff = univariate_effect(table, experiment, v)
        if eff > best_eff:
            best, best_eff = v, eff
    return best, best_eff


@dataclass(frozen=True)
class SequentialTrace:
    stage1_effects: Mapping[str, float]
    stage1_ship: str
    stage2_effects: Mapping[str, float]
    stage2_ship: str
    final: tuple[str, str]
    final_true_effect: float


def sequential_pipeline(cfg: SimConfig, seed: int | None = None, n_units: int | None = None) -> SequentialTrace:
    """Ship E1's winner first, then test E2 with that winner deployed.

    Stage 1 is read out univariately while E2 runs concurrently at its
    configured split. In stage 2 every E1-triggered unit gets E1's shipped
    variant and E2's winner is read out univariately over E2's triggered
    population.
    """
    if cfg.k != 2:
        raise ConfigError("the sequential pipeline is defined for two experiments")
    seed = cfg.seed if seed is None else seed
    s1, s2 = replication_seeds(seed, 2)
    e1, e2 = cfg.experiments
    stage1 = simulate_population(cfg, seed=s1, n_units=n_units)
    eff1 = {v: univariate_effect(stage1, e1.id, v) for v in e1.variants if v != e1.variants[0]}
    ship1, _ = _univariate_winner(stage1, e1.id)

    fixed = tuple(1.0 if v == ship1 else 0.0 for v in e1.variants)
    cfg2 = cfg.replace(experiments=(SimExperiment(e1.id, e1.variants, e1.trigger_rate, fixed), e2))
    stage2 = simulate_population(cfg2, seed=s2, n_units=n_units)
    eff2 = {v: univariate_effect(stage2, e2.id, v) for v in e2.variants if v != e2.variants[0]}
    ship2, _ = _univariate_winner(stage2, e2.id)
    final = (ship1, ship2)
    return SequentialTrace(
        stage1_effects=eff1,
        stage1_ship=ship1,
        stage2_effects=eff2,
        stage2_ship=ship2,
        final=final,
        final_true_effect=true_combination_delta(cfg, final).expected_delta,
    )


def three_way_comparison(cfg: SimConfig, seed: int | None = None, n_units: int | None = None) -> dict:
    """Launch decisions from concurrent univariate, sequential and joint analysis."""
    if cfg.k != 2:
        raise ConfigError("the three-way comparison is defined for two experiments")
    seed = cfg.seed if seed is None else seed
    table = simulate_population(cfg, seed=seed, n_units=n_units)
    univ = tuple(_univariate_winner(table, e.id)[0] for e in cfg.experiments)
    univ_effects = {
        e.id: {v: univariate_effect(table, e.id, v) for v in e.variants[1:]} for e in cfg.experiments
    }
    seq = sequential_pipeline(cfg, seed=seed + 1, n_units=n_units)
    part = build_partition(table)
    report = all_combinations(part, variance_method="analytic")
    mea_estimates = {combo: est.point for combo, est in report.entries}

    def effect(combo):
        return mea_estimates.get(tuple(combo), 0.0)

    return {
        "univariate": {"decision": univ, "effect": effect(univ), "per_experiment": univ_effects},
        "sequential": {"decision": seq.final, "effect": effect(seq.final), "trace": seq},
        "mea": {"decision": report.optimal, "effect": effect(report.optimal)},
        "combinations": mea_estimates,
        "ground_truth": {
            combo: true_combination_delta(cfg, combo).expected_delta for combo, _ in report.entries
        },
    }


def regression_r11(
    table: UnitTable, target_combo, baseline_combo=None, metric: str = METRIC, alpha: float = 0.05
) -> EffectEstimate:
    """Saturated interaction regression on units that triggered both experiments.

    For ``Y = b0 + b1 A1 + b2 A2 + b12 A1 A2`` fitted on the 2x2 design
    formed by the target and baseline variants, the launch contrast
    ``b1 + b2 + b12`` equals the difference of the two cell means, so no
    matrix solve is needed.
    """
    config = table.config
    if config.k != 2:
        raise ConfigError("regression_r11 compares two experiments")
    specs = config.experiments
    t = [e.index(v) for e, v in zip(specs, target_combo)]
    c = (
        [e.baseline_index for e in specs]
        if baseline_combo is None
        else [e.index(v) for e, v in zip(specs, baseline_combo)]
    )
    y = table.values[config.metric(metric).numerator_column]
    codes = table.codes
    both = (codes >= 0).all(axis=1)
    in_t = both & (codes[:, 0] == t[0]) & (codes[:, 1] == t[1])
    in_c = both & (codes[:, 0] == c[0]) & (codes[:, 1] == c[1])
    if not in_t.any() or not in_c.any():
        raise MissingCellError("R11 lacks the target or baseline cell")
    yt, yc = y[in_t], y[in_c]
    point = float(yt.mean() - yc.mean())
    var = (yt.var(ddof=1) / len(yt) if len(yt) > 1 else 0.0) + (
        yc.var(ddof=1) / len(yc) if len(yc) > 1 else 0.0
    )
    from .estimator import RegionContribution
    from .inference import confidence_interval, p_value

    se = math.sqrt(var)
    return EffectEstimate(
        metric=metric,
        kind="mean",
        point=point,
        se=se,
        ci=confidence_interval(point, se, alpha),
        p_value=p_value(point, se),
        method="analytic",
        alpha=alpha,
        ledger=(
            RegionContribution(
                state=(1, 1),
                weight=1.0,
                delta=point,
                n_target=int(in_t.sum()),
                n_baseline=int(in_c.sum()),
                variance=var,
                target_mean=float(yt.mean()),
                baseline_mean=float(yc.mean()),
            ),
        ),
        support_count=int(both.sum()),
        description="interaction regression on R11",
    )


# --------------------------------------------------------------------------
# ratio metric


def simulate_ctr_population(
    n_units: int,
    seed: int,
    base_ctr: float = 0.10,
    lift: float = 0.02,
    trigger_rates: tuple[float, float] = (0.5, 0.5),
    mean_impressions: float = 5.0,
) -> tuple[UnitTable, float]:
    """Clicks/impressions data for two binary experiments.

    Only E1's treatment moves the click probability (by ``lift``), and
    impressions do not depend on any arm, so the true effect of
    ``(t1, c2) vs (c1, c2)`` on click-through rate is exactly ``lift``.
    Returns the table and that true effect.
    """
    rng = np.random.default_rng(seed)
    trig = rng.random((n_units, 2)) < np.array(trigger_rates)
    arms = (rng.random((n_units, 2)) < 0.5).astype(np.int16)
    impressions = rng.poisson(mean_impressions, n_units) + 1
    p = base_ctr + lift * (trig[:, 0] & (arms[:, 0] == 1))
    clicks = rng.binomial(impressions, p)
    keep = trig.any(axis=1)
    config = AnalysisConfig(
        experiments=(
            ExperimentSpec("e1", ("c1", "t1"), "c1"),
            ExperimentSpec("e2", ("c2", "t2"), "c2"),
        ),
        metrics=(MetricSpec("ctr", "ratio", "clicks", "impressions"),),
    )
    codes = np.where(trig, arms, -1).astype(np.int16)[keep]
    ids = np.array([f"c{i}" for i in np.flatnonzero(keep)], dtype=object)
    table = UnitTable(
        config,
        ids,
        codes,
        {"clicks": clicks[keep].astype(float), "impressions": impressions[keep].astype(float)},
    )
    return table, lift


def save_sim_config(cfg: SimConfig) -> str:
    doc = {
        "experiments": [
            {"id": e.id, "variants": list(e.variants), "trigger_rate": e.trigger_rate, "split": list(e.split)}
            for e in cfg.experiments
        ],
        "main_effects": {k: dict(v) for k, v in cfg.main_effects.items()},
        "interactions": [{"when": dict(i.when), "effect": i.effect} for i in cfg.interactions],
        "baseline_mean": cfg.baseline_mean,
        "noise_sd": cfg.noise_sd,
        "n_units": cfg.n_units,
        "seed": cfg.seed,
        "trigger_dependence": cfg.trigger_dependence,
    }
    if cfg.trigger_table is not None:
        doc["trigger_table"] = {"".join(map(str, k)): v for k, v in cfg.trigger_table.items()}
    if cfg.contamination:
        doc["contamination"] = [c.__dict__ for c in cfg.contamination]
    return json.dumps(doc, indent=2)
