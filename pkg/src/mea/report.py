"""Analysis reports: assembly, canonical JSON and a markdown view.

The JSON document is the canonical artifact. Keys appear in a fixed order
and every float is rounded to 12 significant digits, so identical inputs
give byte-identical files. Non-finite floats become ``null``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .data_model import AnalysisConfig, MetricSpec, UnitTable
from .diagnostics import DiagnosticResult, Verdict, invariance_check
from .errors import ConfigError, MissingCellError
from .estimator import (
    CombinationReport,
    EffectEstimate,
    all_combinations,
    scenario_effect,
    weight_uncertainty,
)
from .partitioner import RegionPartition, build_partition, format_cell, region_label

__all__ = [
    "AnalysisReport",
    "build_report",
    "config_echo",
    "estimate_to_dict",
    "canonical_json",
    "round_floats",
    "INFLATION_WARNING",
]

SIGNIFICANT_DIGITS = 12

#: Weight uncertainty is worth a warning once it inflates the fixed-weight
#: variance by more than this factor.
INFLATION_WARNING = 1.10


def round_floats(obj: Any, digits: int = SIGNIFICANT_DIGITS) -> Any:
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return None
        return float(format(obj, f".{digits}g"))
    if isinstance(obj, int):
        return obj
    if isinstance(obj, Mapping):
        return {str(k): round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, digits) for v in obj]
    if hasattr(obj, "item"):  # numpy scalar
        return round_floats(obj.item(), digits)
    return obj


def canonical_json(obj: Any) -> str:
    return json.dumps(round_floats(obj), indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def config_echo(config: AnalysisConfig, scenarios: Sequence[Mapping] = ()) -> dict:
    return {
        "experiments": [
            {"id": e.id, "variants": list(e.variants), "baseline": e.baseline}
            for e in config.experiments
        ],
        "metrics": [
            {
                "name": m.name,
                "kind": m.kind,
                "numerator": m.numerator_column,
                "denominator": m.denominator_column,
            }
            for m in config.metrics
        ],
        "alpha": config.alpha,
        "jackknife_buckets": config.jackknife_buckets,
        "variance_method": config.variance_method,
        "cramers_v_threshold": config.cramers_v_threshold,
        "max_combinations": config.max_combinations,
        "objective_metric": config.objective_metric,
        "scenarios": [dict(s) for s in scenarios],
    }


def estimate_to_dict(est: EffectEstimate, threshold: float | None = None) -> dict:
    out = {
        "point": est.point,
        "se": est.se,
        "ci": list(est.ci),
        "p_value": est.p_value,
        "method": est.method,
        "df": est.df,
        "support_units": est.support_count,
    }
    if threshold is not None:
        out["significant"] = est.is_significant(threshold)
    ledger = []
    for c in est.ledger:
        row = {
            "region": c.region,
            "weight": c.weight,
            "delta": c.delta,
            "n_target": c.n_target,
            "n_baseline": c.n_baseline,
            "target_mean": c.target_mean,
            "baseline_mean": c.baseline_mean,
            "variance": c.variance,
        }
        if c.target_den_mean is not None:
            row["target_denominator_mean"] = c.target_den_mean
            row["baseline_denominator_mean"] = c.baseline_den_mean
        ledger.append(row)
    out["ledger"] = ledger
    if est.notes:
        out["notes"] = list(est.notes)
    return out


@dataclass
class AnalysisReport:
    """Everything ``mea analyze`` writes, in serializable form."""

    config: dict
    seed: int | None
    n_units: int
    regions: list[dict]
    metrics: list[dict] = field(default_factory=list)
    scenarios: list[dict] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "n_units": self.n_units,
            "overlap": {"regions": self.regions},
            "metrics": self.metrics,
            "scenarios": self.scenarios,
            "diagnostics": self.diagnostics,
            "warnings": self.warnings,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def to_markdown(self) -> str:
        return render_markdown(self.to_dict())


def _region_rows(partition: RegionPartition, config: AnalysisConfig) -> list[dict]:
    counts = partition.region_counts
    total = sum(n for s, n in counts.items() if any(s))
    rows = []
    # larger regions first, ties by label, as in an overlap summary table
    for s in sorted(counts, key=lambda s: (-counts[s], region_label(s))):
        if not any(s):
            continue
        rows.append(
            {
                "region": region_label(s),
                "triggered": [e.id for e, b in zip(config.experiments, s) if b],
                "units": counts[s],
                "proportion": counts[s] / total if total else 0.0,
            }
        )
    return rows


def _metric_section(report: CombinationReport, partition: RegionPartition, warnings: list[str]) -> dict:
    threshold = report.bonferroni_alpha
    combos = []
    for combo, est in report.entries:
        entry = {"combination": list(combo), "label": format_cell(combo)}
        entry.update(estimate_to_dict(est, threshold))
        if est.kind == "mean" and est.ledger:
            wu = weight_uncertainty(est)
            entry["weight_uncertainty"] = wu
            # the jackknife already absorbs weight uncertainty
            if est.method == "analytic" and wu["inflation"] > INFLATION_WARNING:
                warnings.append(
                    f"{report.metric} {format_cell(combo)}: weight uncertainty inflates the "
                    f"fixed-weight variance by a factor {wu['inflation']:.3g}; prefer the jackknife"
                )
        for c in est.ledger:
            if min(c.n_target, c.n_baseline) < 2:
                warnings.append(
                    f"{report.metric} {format_cell(combo)}: region {c.region} has a cell with "
                    "fewer than 2 units, so its variance contribution is taken as 0"
                )
        for note in est.notes:
            warnings.append(f"{report.metric} {format_cell(combo)}: {note}")
        combos.append(entry)
    counts = partition.region_counts
    refused = []
    for combo, reason, regions in report.refused:
        refused.append(
            {
                "combination": list(combo),
                "label": format_cell(combo),
                "reason": reason,
                "regions": list(regions),
                "region_units": [
                    next(n for s, n in counts.items() if region_label(s) == r) for r in regions
                ],
            }
        )
        warnings.append(f"{report.metric} {format_cell(combo)}: estimate refused ({reason})")
    return {
        "metric": report.metric,
        "objective_metric": report.objective_metric,
        "baseline": list(report.baseline),
        "alpha": report.alpha,
        "bonferroni_alpha": threshold,
        "optimal": list(report.optimal),
        "combinations": combos,
        "refused": refused,
    }


def _parse_scenario(doc: Mapping, config: AnalysisConfig) -> tuple[dict, str, str, str | None]:
    try:
        fix = dict(doc.get("fix", {}))
        of_interest = str(doc["of_interest"])
        target = str(doc["target"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed scenario {doc!r}: {exc!r}") from exc
    baseline = doc.get("baseline")
    exp = config.experiment(of_interest)
    exp.index(target)
    if baseline is not None:
        exp.index(baseline)
    for exp_id, v in fix.items():
        config.experiment(exp_id).index(v)
    if of_interest in fix:
        raise ConfigError(f"scenario fixes the experiment of interest {of_interest!r}")
    return fix, of_interest, target, baseline


def build_report(
    table: UnitTable,
    config: AnalysisConfig | None = None,
    scenarios: Sequence[Mapping] = (),
    variance_method: str | None = None,
    allow_drop: bool = False,
    seed: int | None = None,
    partition: RegionPartition | None = None,
) -> AnalysisReport:
    """Partition, estimate every combination per metric, run scenarios and diagnostics."""
    config = config or table.config
    method = variance_method or config.variance_method
    part = partition or build_partition(table, n_buckets=config.jackknife_buckets)
    warnings: list[str] = []
    report = AnalysisReport(
        config=config_echo(config, scenarios),
        seed=seed,
        n_units=len(table),
        regions=_region_rows(part, config),
    )
    objective = config.metric(config.objective_metric) if config.objective_metric else None
    for metric in config.metrics:
        combos = all_combinations(
            part,
            metric=metric,
            objective_metric=objective or metric,
            alpha=config.alpha,
            variance_method=method,
            cap=config.max_combinations,
            allow_drop=allow_drop,
            record_refusals=True,
        )
        report.metrics.append(_metric_section(combos, part, warnings))
    parsed = [_parse_scenario(s, config) for s in scenarios]
    for metric in config.metrics:
        for fix, of_interest, target, baseline in parsed:
            entry = {
                "metric": metric.name,
                "fix": fix,
                "of_interest": of_interest,
                "target": target,
                "baseline": baseline or config.experiment(of_interest).baseline,
            }
            try:
                est = scenario_effect(
                    part, fix, of_interest, target, baseline, metric, method, config.alpha, allow_drop
                )
                entry.update(estimate_to_dict(est, config.alpha))
            except MissingCellError as exc:
                entry["refused"] = str(exc)
                warnings.append(f"scenario {of_interest}={target} given {fix}: estimate refused ({exc})")
            report.scenarios.append(entry)
    if config.k >= 2:
        diags = invariance_check(table, config)
        report.diagnostics = [_diagnostic_dict(d) for d in diags]
        for d in diags:
            for w in d.warnings:
                warnings.append(f"diagnostic {d.source}: {w}")
            if d.verdict is Verdict.FLAG:
                warnings.append(
                    f"diagnostic {d.source}: FLAG (p = {d.p_value:.3g}, V = {d.cramers_v:.3g}); "
                    "trigger rates depend on this experiment's arms, investigate before trusting "
                    "region weights"
                )
    else:
        warnings.append("invariance diagnostics need at least two experiments; skipped")
    report.warnings = warnings
    return report


def _diagnostic_dict(d: DiagnosticResult) -> dict:
    out = d.to_dict()
    out.pop("bar_chart", None)  # kept in the per-source CSV files
    return out


def diagnostics_report(table: UnitTable, config: AnalysisConfig | None = None) -> tuple[dict, list[DiagnosticResult]]:
    config = config or table.config
    diags = invariance_check(table, config)
    warnings = [f"diagnostic {d.source}: {w}" for d in diags for w in d.warnings]
    doc = {
        "config": config_echo(config),
        "n_units": len(table),
        "diagnostics": [_diagnostic_dict(d) for d in diags],
        "warnings": warnings,
    }
    return doc, diags


# --------------------------------------------------------------------------
# markdown


def _fmt(x, spec=".4g") -> str:
    if x is None:
        return "n/a"
    if isinstance(x, float):
        return format(x, spec)
    return str(x)


def render_markdown(doc: Mapping) -> str:
    lines = ["# Overlapping experiment analysis", ""]
    cfg = doc.get("config", {})
    if cfg:
        exps = ", ".join(f"{e['id']} ({'/'.join(e['variants'])})" for e in cfg["experiments"])
        lines += [f"Experiments: {exps}", f"Units: {doc.get('n_units')}", ""]
    regions = doc.get("overlap", {}).get("regions")
    if regions:
        lines += ["## Overlap", "", "| Region | Triggered | Units | Share |", "|---|---|---:|---:|"]
        for r in regions:
            lines.append(
                f"| {r['region']} | {', '.join(r['triggered'])} | {r['units']} | {r['proportion']:.1%} |"
            )
        lines.append("")
    for m in doc.get("metrics", []):
        lines += [
            f"## Metric `{m['metric']}`",
            "",
            f"Bonferroni threshold {_fmt(m['bonferroni_alpha'])}; "
            f"optimal combination {format_cell(m['optimal'])}.",
            "",
            "| Combination | Delta | 95% CI | p-value | Significant |",
            "|---|---:|---|---:|:---:|",
        ]
        for c in m["combinations"]:
            lo, hi = c["ci"]
            lines.append(
                f"| {c['label']} | {_fmt(c['point'], '+.4g')} | [{_fmt(lo)}, {_fmt(hi)}] "
                f"| {_fmt(c['p_value'], '.3g')} | {'yes' if c['significant'] else 'no'} |"
            )
        for r in m.get("refused", []):
            lines.append(f"| {r['label']} | refused | empty cell in {', '.join(r['regions'])} | | |")
        lines.append("")
    if doc.get("scenarios"):
        lines += [
            "## Scenarios",
            "",
            "| Metric | Given | Effect of | Delta | 95% CI | p-value |",
            "|---|---|---|---:|---|---:|",
        ]
        for s in doc["scenarios"]:
            given = ", ".join(f"{k}={v}" for k, v in s["fix"].items()) or "nothing"
            what = f"{s['of_interest']}: {s['target']} vs {s['baseline']}"
            if "refused" in s:
                lines.append(f"| {s['metric']} | {given} | {what} | refused | | |")
                continue
            lo, hi = s["ci"]
            lines.append(
                f"| {s['metric']} | {given} | {what} | {_fmt(s['point'], '+.4g')} "
                f"| [{_fmt(lo)}, {_fmt(hi)}] | {_fmt(s['p_value'], '.3g')} |"
            )
        lines.append("")
    if doc.get("diagnostics"):
        lines += [
            "## Arm-trigger invariance",
            "",
            "| Source | Chi-squared | dof | p-value | Cramer's V | Verdict |",
            "|---|---:|---:|---:|---:|:---:|",
        ]
        for d in doc["diagnostics"]:
            lines.append(
                f"| {d['source']} | {_fmt(d['chi2'])} | {d['dof']} | {_fmt(d['p_value'], '.3g')} "
                f"| {_fmt(d['cramers_v'], '.3g')} | {d['verdict']} |"
            )
        lines.append("")
    if doc.get("warnings"):
        lines += ["## Warnings", ""] + [f"- {w}" for w in doc["warnings"]] + [""]
    return "\n".join(lines)
