"""Post-stratified effect estimation over triggering regions.

For a launch decision (a target variant per experiment against a baseline
variant per experiment) the effect in region ``r`` is the difference of the
target and baseline cell means, with experiments that did not trigger in
``r`` fixed at "not triggered". The overall effect is the region-size
weighted average of those differences.

Support rule: a region enters a comparison only when the launch changes
something for its units, i.e. some experiment triggered in the region has
different target and baseline variants. Regions where target and baseline
cells coincide would contribute an identically zero difference; they are
left out of the weights. With that rule the "corrected individual effect"
``(t1, c2) vs (c1, c2)`` and the scenario effect of E1 with E2 fixed at
``c2`` are the same estimator.

Variance of a mean-metric effect (weights treated as fixed)::

    Var = sum_r w_r^2 (s_t^2 / n_t + s_c^2 / n_c)

Delta-method variance of a ratio effect ``Nt/Dt - Nc/Dc`` where each arm
aggregates ``X = sum_r w_r mean_r(X)``: every cell contributes, with
``g = (1/D, -N/D^2)`` the gradient of its arm's ratio,
``w_r^2 g' S g / n`` with ``S`` the within-cell sample covariance of
(numerator, denominator). Cells are independent across arms and regions.

The bucketed jackknife recomputes the whole estimator (weights included)
with one hash bucket of units removed at a time.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .data_model import NOT_TRIGGERED, ExperimentSpec, MetricSpec, combination_count
from .errors import (
    CapExceededError,
    DegenerateBucketError,
    EmptySupportError,
    MissingCellError,
    ZeroDenominatorError,
)
from .inference import confidence_interval, p_value
from .partitioner import RegionPartition, TriggerState, format_cell, region_label

logger = logging.getLogger(__name__)

__all__ = [
    "Comparison",
    "RegionContribution",
    "EffectEstimate",
    "CombinationReport",
    "combination_comparison",
    "scenario_comparison",
    "estimate_effect",
    "combination_effect",
    "scenario_effect",
    "ratio_effect",
    "all_combinations",
    "jackknife_variance",
    "delta_method_variance",
    "weight_uncertainty",
]


@dataclass(frozen=True)
class Comparison:
    """Target and baseline cell (variant codes) for each region in the support."""

    support: tuple[TriggerState, ...]
    target: Mapping[TriggerState, tuple[int, ...]]
    baseline: Mapping[TriggerState, tuple[int, ...]]
    description: str = ""

    def __post_init__(self):
        for s in self.support:
            if not any(s):
                raise ValueError("the never-triggered region cannot be in a support")
            for cells in (self.target, self.baseline):
                if any((c >= 0) != bool(b) for c, b in zip(cells[s], s)):
                    raise ValueError(f"cell {cells[s]} does not match region {s}")

    def swapped(self) -> "Comparison":
        return Comparison(self.support, self.baseline, self.target, self.description)


def _all_states(k: int):
    for bits in itertools.product((0, 1), repeat=k):
        if any(bits):
            yield bits


def _combo_codes(experiments: Sequence[ExperimentSpec], combo) -> tuple[int, ...]:
    if isinstance(combo, Mapping):
        missing = [e.id for e in experiments if e.id not in combo]
        if missing:
            raise ValueError(f"combination misses experiments {missing}")
        combo = [combo[e.id] for e in experiments]
    combo = list(combo)
    if len(combo) != len(experiments):
        raise ValueError(f"combination needs {len(experiments)} variants, got {len(combo)}")
    return tuple(e.index(v) for e, v in zip(experiments, combo))


def combination_comparison(
    experiments: Sequence[ExperimentSpec], target_combo, baseline_combo=None
) -> Comparison:
    """Cells to compare for launching ``target_combo`` instead of ``baseline_combo``.

    Combos are sequences of variant names in experiment order or mappings
    experiment id -> variant. ``baseline_combo`` defaults to every
    experiment's baseline.
    """
    t = _combo_codes(experiments, target_combo)
    if baseline_combo is None:
        c = tuple(e.baseline_index for e in experiments)
    else:
        c = _combo_codes(experiments, baseline_combo)
    support, tgt, base = [], {}, {}
    for s in _all_states(len(experiments)):
        if not any(b and ti != ci for b, ti, ci in zip(s, t, c)):
            continue
        support.append(s)
        tgt[s] = tuple(ti if b else -1 for b, ti in zip(s, t))
        base[s] = tuple(ci if b else -1 for b, ci in zip(s, c))
    desc = "{} vs {}".format(
        format_cell(e.variants[i] for e, i in zip(experiments, t)),
        format_cell(e.variants[i] for e, i in zip(experiments, c)),
    )
    return Comparison(tuple(support), tgt, base, desc)


def scenario_comparison(
    experiments: Sequence[ExperimentSpec],
    scenario: Mapping[str, str],
    of_interest: str,
    target_variant: str,
    baseline_variant: str | None = None,
) -> Comparison:
    """Cells for the effect of one experiment given launch decisions for others.

    The support is every region where ``of_interest`` triggers. Conditioning
    experiments sit at their scenario variant where they triggered and at
    "not triggered" elsewhere. Experiments absent from ``scenario`` are held
    at their baseline variant.
    """
    ids = [e.id for e in experiments]
    if of_interest not in ids:
        raise ValueError(f"unknown experiment {of_interest!r}")
    if of_interest in scenario:
        raise ValueError("the experiment of interest cannot also be fixed by the scenario")
    for key in scenario:
        if key not in ids:
            raise ValueError(f"unknown experiment {key!r} in scenario")
    j = ids.index(of_interest)
    exp = experiments[j]
    fixed = [
        e.index(scenario[e.id]) if e.id in scenario else e.baseline_index for e in experiments
    ]
    t_code = exp.index(target_variant)
    c_code = exp.baseline_index if baseline_variant is None else exp.index(baseline_variant)
    support, tgt, base = [], {}, {}
    for s in _all_states(len(experiments)):
        if not s[j]:
            continue
        cells = [f if b else -1 for f, b in zip(fixed, s)]
        support.append(s)
        tgt[s] = tuple(cells[:j] + [t_code] + cells[j + 1 :])
        base[s] = tuple(cells[:j] + [c_code] + cells[j + 1 :])
    given = ", ".join(f"{k}={v}" for k, v in scenario.items()) or "baseline"
    desc = f"{of_interest}: {exp.variants[t_code]} vs {exp.variants[c_code]} | {given}"
    return Comparison(tuple(support), tgt, base, desc)


@dataclass(frozen=True)
class RegionContribution:
    """One region's share of an estimate.

    For ratio metrics ``target_mean``/``baseline_mean`` hold numerator means
    and the ``*_den_mean`` fields hold denominator means.
    """

    state: TriggerState
    weight: float
    delta: float
    n_target: int
    n_baseline: int
    variance: float
    target_mean: float
    baseline_mean: float
    target_den_mean: float | None = None
    baseline_den_mean: float | None = None

    @property
    def region(self) -> str:
        return region_label(self.state)


@dataclass(frozen=True)
class EffectEstimate:
    metric: str
    kind: str
    point: float
    se: float
    ci: tuple[float, float]
    p_value: float
    method: str
    alpha: float
    ledger: tuple[RegionContribution, ...]
    support_count: int
    description: str = ""
    notes: tuple[str, ...] = ()
    df: float | None = None

    def recompute_point(self) -> float:
        """Point estimate rebuilt from the ledger alone."""
        if not self.ledger:
            return 0.0
        if self.kind == "ratio":
            nt = sum(c.weight * c.target_mean for c in self.ledger)
            dt = sum(c.weight * c.target_den_mean for c in self.ledger)
            nc = sum(c.weight * c.baseline_mean for c in self.ledger)
            dc = sum(c.weight * c.baseline_den_mean for c in self.ledger)
            return nt / dt - nc / dc
        return math.fsum(c.weight * c.delta for c in self.ledger)

    def is_significant(self, threshold: float) -> bool:
        return self.p_value < threshold


# --------------------------------------------------------------------------
# core evaluation


@dataclass
class _Eval:
    point: float
    ledger: list[RegionContribution]
    support_count: int
    notes: list[str] = field(default_factory=list)
    # per-cell pieces needed by the delta method
    ratio_terms: list = field(default_factory=list)


def _cells_for(partition, comparison, allow_drop):
    counts = partition.region_counts
    present, missing, notes = [], [], []
    for s in comparison.support:
        n_r = counts.get(s, 0)
        if n_r == 0:
            continue
        nt = partition.cell_totals(comparison.target[s])[0]
        nc = partition.cell_totals(comparison.baseline[s])[0]
        if nt == 0 or nc == 0:
            missing.append(s)
        else:
            present.append(s)
    if missing:
        labels = ", ".join(region_label(s) for s in missing)
        if not allow_drop:
            raise MissingCellError(
                f"empty target or baseline cell in region(s) {labels} "
                f"for {comparison.description or 'comparison'}",
                missing,
            )
        notes.append(f"dropped region(s) {labels}: empty target or baseline cell")
    if not present:
        raise EmptySupportError(
            f"no populated region supports {comparison.description or 'the comparison'}"
        )
    total = sum(counts[s] for s in present)
    weights = {s: counts[s] / total for s in present}
    return present, weights, total, notes


def _eval_mean(partition: RegionPartition, comparison: Comparison, column: str, allow_drop: bool):
    present, weights, total, notes = _cells_for(partition, comparison, allow_drop)
    j = partition.column_index(column)
    ledger = []
    for s in present:
        nt, st, sst, _ = partition.cell_totals(comparison.target[s])
        nc, sc, ssc, _ = partition.cell_totals(comparison.baseline[s])
        mt, mc = st[j] / nt, sc[j] / nc
        vt = _sample_var(nt, st[j], sst[j])
        vc = _sample_var(nc, sc[j], ssc[j])
        ledger.append(
            RegionContribution(
                state=s,
                weight=weights[s],
                delta=float(mt - mc),
                n_target=nt,
                n_baseline=nc,
                variance=float(vt / nt + vc / nc),
                target_mean=float(mt),
                baseline_mean=float(mc),
            )
        )
    point = math.fsum(c.weight * c.delta for c in ledger)
    return _Eval(point, ledger, total, notes)


def _sample_var(n, s, ss):
    if n < 2:
        return 0.0
    return max(ss - s * s / n, 0.0) / (n - 1)


def _eval_ratio(partition: RegionPartition, comparison: Comparison, metric: MetricSpec, allow_drop):
    present, weights, total, notes = _cells_for(partition, comparison, allow_drop)
    jn = partition.column_index(metric.numerator_column)
    jd = partition.column_index(metric.denominator_column)
    jp = partition.pair_index(metric.columns)
    ledger, terms = [], []
    agg = np.zeros(4)  # Nt, Dt, Nc, Dc
    for s in present:
        w = weights[s]
        nt, st, sst, xt = partition.cell_totals(comparison.target[s])
        nc, sc, ssc, xc = partition.cell_totals(comparison.baseline[s])
        means = np.array([st[jn] / nt, st[jd] / nt, sc[jn] / nc, sc[jd] / nc])
        agg += w * means
        for arm, (n, sm, ss, x) in enumerate(((nt, st, sst, xt), (nc, sc, ssc, xc))):
            if n < 2:
                cov = np.zeros((2, 2))
            else:
                vn = max(ss[jn] - sm[jn] ** 2 / n, 0.0) / (n - 1)
                vd = max(ss[jd] - sm[jd] ** 2 / n, 0.0) / (n - 1)
                cnd = (x[jp] - sm[jn] * sm[jd] / n) / (n - 1)
                cov = np.array([[vn, cnd], [cnd, vd]])
            terms.append((arm, w, n, cov))
        rt = means[0] / means[1] if means[1] != 0 else math.nan
        rc = means[2] / means[3] if means[3] != 0 else math.nan
        ledger.append(
            RegionContribution(
                state=s,
                weight=w,
                delta=float(rt - rc),
                n_target=nt,
                n_baseline=nc,
                variance=math.nan,
                target_mean=float(means[0]),
                baseline_mean=float(means[2]),
                target_den_mean=float(means[1]),
                baseline_den_mean=float(means[3]),
            )
        )
    if agg[1] == 0 or agg[3] == 0:
        raise ZeroDenominatorError(
            f"zero weighted denominator mean for {metric.name!r} "
            f"({comparison.description or 'comparison'})"
        )
    point = agg[0] / agg[1] - agg[2] / agg[3]
    ev = _Eval(float(point), ledger, total, notes)
    ev.ratio_terms = [(agg, terms)]
    return ev


def _evaluate(partition, comparison, metric: MetricSpec, allow_drop: bool) -> _Eval:
    if metric.is_ratio:
        return _eval_ratio(partition, comparison, metric, allow_drop)
    return _eval_mean(partition, comparison, metric.numerator_column, allow_drop)


def _delta_variance_from_eval(ev: _Eval) -> float:
    agg, terms = ev.ratio_terms[0]
    grads = (
        np.array([1.0 / agg[1], -agg[0] / agg[1] ** 2]),
        np.array([1.0 / agg[3], -agg[2] / agg[3] ** 2]),
    )
    var = 0.0
    for arm, w, n, cov in terms:
        g = grads[arm]
        var += w * w * float(g @ cov @ g) / n
    return max(var, 0.0)


def jackknife_variance(
    partition: RegionPartition, estimator: Callable[[RegionPartition], float]
) -> float:
    """Leave-one-bucket-out variance ``(B-1)/B * sum_b (est_b - mean)^2``.

    Args:
        partition: partition with bucket shards populated (B >= 2).
        estimator: deterministic function of a partition returning a number.

    Raises:
        DegenerateBucketError: the estimator fails on some leave-out partition.
    """
    b = partition.n_buckets
    if b < 2:
        raise ValueError("the jackknife needs at least two buckets")
    reps = np.empty(b)
    for i in range(b):
        try:
            reps[i] = estimator(partition.leave_out(i))
        except (MissingCellError, EmptySupportError, ZeroDenominatorError) as exc:
            raise DegenerateBucketError(f"leaving out bucket {i} breaks the estimate: {exc}") from exc
    return float((b - 1) / b * np.sum((reps - reps.mean()) ** 2))


def delta_method_variance(
    partition: RegionPartition, comparison: Comparison, metric: MetricSpec, allow_drop: bool = False
) -> float:
    """First-order (Delta method) variance of a ratio-metric effect."""
    if not metric.is_ratio:
        raise ValueError(f"metric {metric.name!r} is not a ratio metric")
    return _delta_variance_from_eval(_eval_ratio(partition, comparison, metric, allow_drop))


def estimate_effect(
    partition: RegionPartition,
    comparison: Comparison,
    metric: MetricSpec,
    variance_method: str | None = None,
    alpha: float = 0.05,
    allow_drop: bool = False,
) -> EffectEstimate:
    """Weighted effect estimate with standard error, CI and p-value.

    ``variance_method`` is ``"analytic"`` (fixed-weight formula for means,
    Delta method for ratios) or ``"jackknife"``; ``None`` picks analytic for
    mean metrics and jackknife for ratio metrics.
    """
    if variance_method is None:
        variance_method = "jackknife" if metric.is_ratio else "analytic"
    if not comparison.support:
        # target and baseline coincide in every region: nothing changes
        return EffectEstimate(
            metric=metric.name,
            kind=metric.kind,
            point=0.0,
            se=0.0,
            ci=(0.0, 0.0),
            p_value=1.0,
            method=variance_method,
            alpha=alpha,
            ledger=(),
            support_count=0,
            description=comparison.description,
            notes=("target equals baseline",),
        )
    ev = _evaluate(partition, comparison, metric, allow_drop)
    if variance_method == "analytic":
        if metric.is_ratio:
            var = _delta_variance_from_eval(ev)
        else:
            var = math.fsum(c.weight**2 * c.variance for c in ev.ledger)
    elif variance_method == "jackknife":
        var = jackknife_variance(
            partition, lambda p: _evaluate(p, comparison, metric, allow_drop).point
        )
    else:
        raise ValueError(f"unknown variance method {variance_method!r}")
    se = math.sqrt(max(var, 0.0))
    # the jackknife variance has about B - 1 degrees of freedom
    df = float(partition.n_buckets - 1) if variance_method == "jackknife" else None
    return EffectEstimate(
        metric=metric.name,
        kind=metric.kind,
        point=ev.point,
        se=se,
        ci=confidence_interval(ev.point, se, alpha, df),
        p_value=p_value(ev.point, se, df),
        method=variance_method,
        alpha=alpha,
        ledger=tuple(ev.ledger),
        support_count=ev.support_count,
        description=comparison.description,
        notes=tuple(ev.notes),
        df=df,
    )


def combination_effect(
    partition: RegionPartition,
    target_combo,
    baseline_combo=None,
    metric: MetricSpec | None = None,
    variance_method: str | None = None,
    alpha: float = 0.05,
    allow_drop: bool = False,
) -> EffectEstimate:
    """Effect of launching one variant per experiment versus the baseline combination."""
    metric = metric or _default_metric(partition)
    comp = combination_comparison(partition.experiments, target_combo, baseline_combo)
    return estimate_effect(partition, comp, metric, variance_method, alpha, allow_drop)


def scenario_effect(
    partition: RegionPartition,
    scenario: Mapping[str, str],
    of_interest: str,
    target_variant: str,
    baseline_variant: str | None = None,
    metric: MetricSpec | None = None,
    variance_method: str | None = None,
    alpha: float = 0.05,
    allow_drop: bool = False,
) -> EffectEstimate:
    """Effect of ``of_interest``'s variant given the launch decisions in ``scenario``."""
    metric = metric or _default_metric(partition)
    comp = scenario_comparison(
        partition.experiments, scenario, of_interest, target_variant, baseline_variant
    )
    return estimate_effect(partition, comp, metric, variance_method, alpha, allow_drop)


def ratio_effect(
    partition: RegionPartition,
    comparison: Comparison,
    metric: MetricSpec,
    variance_method: str = "jackknife",
    alpha: float = 0.05,
    allow_drop: bool = False,
) -> EffectEstimate:
    """Difference of weighted-mean ratios between target and baseline cells."""
    if not metric.is_ratio:
        raise ValueError(f"metric {metric.name!r} is not a ratio metric")
    return estimate_effect(partition, comparison, metric, variance_method, alpha, allow_drop)


def _default_metric(partition: RegionPartition) -> MetricSpec:
    return MetricSpec(name=partition.columns[0])


@dataclass(frozen=True)
class CombinationReport:
    """Every non-baseline combination against the all-baseline combination.

    ``optimal`` maximizes the point estimate of the objective metric; ties go
    to the combination that comes first in declared variant order.
    """

    metric: str
    entries: tuple[tuple[tuple[str, ...], EffectEstimate], ...]
    alpha: float
    bonferroni_alpha: float
    optimal: tuple[str, ...]
    objective_metric: str
    baseline: tuple[str, ...]
    refused: tuple[tuple[tuple[str, ...], str, tuple[str, ...]], ...] = ()

    @property
    def n_combinations(self) -> int:
        return len(self.entries)

    def estimate(self, combo: Sequence[str]) -> EffectEstimate:
        for c, est in self.entries:
            if c == tuple(combo):
                return est
        raise KeyError(combo)

    def to_markdown(self) -> str:
        lines = [
            f"**{self.metric}** (Bonferroni threshold {self.bonferroni_alpha:.4g}, "
            f"optimal {format_cell(self.optimal)})",
            "",
            "| Combination | Delta | CI | p-value | Significant |",
            "|---|---:|---|---:|:---:|",
        ]
        for combo, est in self.entries:
            lo, hi = est.ci
            sig = "yes" if est.is_significant(self.bonferroni_alpha) else "no"
            lines.append(
                f"| {format_cell(combo)} | {est.point:+.4g} | [{lo:.4g}, {hi:.4g}] "
                f"| {est.p_value:.3g} | {sig} |"
            )
        for combo, reason, _ in self.refused:
            lines.append(f"| {format_cell(combo)} | refused | {reason} | | |")
        return "\n".join(lines)


def all_combinations(
    partition: RegionPartition,
    metric: MetricSpec | None = None,
    objective_metric: MetricSpec | None = None,
    alpha: float = 0.05,
    variance_method: str | None = None,
    cap: int = 50,
    allow_drop: bool = False,
    record_refusals: bool = False,
) -> CombinationReport:
    """Evaluate every non-baseline combination and pick the optimum.

    With ``record_refusals`` a combination whose required cell is empty is
    listed in ``refused`` (with the offending regions) instead of aborting
    the whole report.

    Raises:
        CapExceededError: more than ``cap`` non-baseline combinations.
        MissingCellError: an empty required cell, unless ``allow_drop`` or
            ``record_refusals`` is set.
    """
    metric = metric or _default_metric(partition)
    objective_metric = objective_metric or metric
    exps = partition.experiments
    count = combination_count(exps)
    if count > cap:
        raise CapExceededError(f"{count} combinations exceed the cap of {cap}")
    baseline = tuple(e.baseline for e in exps)
    entries = []
    refused = []
    best, best_value = None, -math.inf
    for combo in itertools.product(*(e.variants for e in exps)):
        if combo == baseline:
            continue
        try:
            est = combination_effect(
                partition, combo, baseline, metric, variance_method, alpha, allow_drop
            )
        except MissingCellError as exc:
            if not record_refusals:
                raise
            refused.append((combo, str(exc), tuple(region_label(s) for s in exc.regions)))
            continue
        entries.append((combo, est))
        if objective_metric.name == metric.name:
            value = est.point
        else:
            comp = combination_comparison(exps, combo, baseline)
            value = _evaluate(partition, comp, objective_metric, allow_drop).point
        if value > best_value:
            best, best_value = combo, value
    return CombinationReport(
        metric=metric.name,
        entries=tuple(entries),
        alpha=alpha,
        bonferroni_alpha=alpha / count if count else alpha,
        optimal=best if best is not None else baseline,
        objective_metric=objective_metric.name,
        baseline=baseline,
        refused=tuple(refused),
    )


def weight_uncertainty(estimate: EffectEstimate) -> dict[str, float]:
    """Three-term variance decomposition of a mean-metric estimate.

    Per region: ``w^2 Var(d)`` (fixed-weight term), ``d^2 Var(w)`` and
    ``Var(w) Var(d)``, with the multinomial ``Var(w) = w (1 - w) / N``
    where N is the number of units in the support. ``inflation`` is the
    ratio of the full sum to the fixed-weight term.
    """
    if estimate.kind != "mean":
        raise ValueError("the decomposition is defined for mean metrics")
    n = estimate.support_count
    fixed = weight = cross = 0.0
    for c in estimate.ledger:
        var_w = c.weight * (1.0 - c.weight) / n
        fixed += c.weight**2 * c.variance
        weight += c.delta**2 * var_w
        cross += var_w * c.variance
    total = fixed + weight + cross
    return {
        "fixed_weight_term": fixed,
        "weight_term": weight,
        "cross_term": cross,
        "total": total,
        "inflation": total / fixed if fixed > 0 else math.inf if total > 0 else 1.0,
    }
