"""``mea`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 schema or configuration error,
3 degenerate data (empty support, degenerate jackknife bucket). FLAG
verdicts from the invariance diagnostics are report content and never
change the exit code.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .data_model import ingest_unit_table, load_config
from .diagnostics import bar_chart_csv
from .errors import (
    CapExceededError,
    ConfigError,
    DegenerateBucketError,
    EmptySupportError,
    SchemaError,
    NonFiniteValueError,
    ZeroDenominatorError,
)
from .power import ratio_table
from .report import build_report, canonical_json, diagnostics_report, render_markdown
from .simulator import (
    PRESET_TARGETS,
    coverage_experiment,
    preset,
    save_sim_config,
    sim_config_from_dict,
    three_way_comparison,
)

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DEGENERATE = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2, which means "config" here
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mea", description="Joint analysis of overlapping online experiments.")
    p.add_argument("--version", action="version", version=f"mea {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="estimate every combination effect and run diagnostics")
    a.add_argument("--data", required=True, help="unit-level CSV")
    a.add_argument("--config", required=True, help="analysis config JSON")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--variance", choices=("jackknife", "analytic"))
    a.add_argument("--allow-drop-empty-regions", action="store_true")

    d = sub.add_parser("diagnose", help="arm-trigger invariance diagnostics only")
    d.add_argument("--data", required=True)
    d.add_argument("--config", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("simulate", help="coverage study on a synthetic population")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=("appendix-b", "appendix-c"))
    src.add_argument("--config", help="simulation config JSON")
    s.add_argument("--reps", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, help="units per replication (default from the config)")

    w = sub.add_parser("power", help="variance ratio of joint analysis to a full factorial")
    w.add_argument("--k", type=int, nargs="+", required=True, help="one or more experiment counts")
    w.add_argument("--ell", type=int, required=True, help="variants per experiment")
    w.add_argument("--rate", type=float, required=True, help="trigger rate in (0, 1]")
    w.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    return p


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _load_inputs(args):
    config, scenarios = load_config(args.config)
    table = ingest_unit_table(args.data, config)
    return config, scenarios, table


def cmd_analyze(args) -> int:
    config, scenarios, table = _load_inputs(args)
    report = build_report(
        table,
        config,
        scenarios,
        variance_method=args.variance,
        allow_drop=args.allow_drop_empty_regions,
        seed=args.seed,
    )
    out = Path(args.out)
    _write(out / "report.json", report.to_json())
    _write(out / "report.md", report.to_markdown())
    for m in report.metrics:
        print(f"{m['metric']}: optimal {tuple(m['optimal'])} of {len(m['combinations'])} combinations")
    for d in report.diagnostics:
        print(f"invariance {d['source']}: {d['verdict']}")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {out / 'report.json'}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    config, _, table = _load_inputs(args)
    if config.k < 2:
        raise ConfigError("diagnostics need at least two experiments")
    doc, diags = diagnostics_report(table, config)
    doc["seed"] = args.seed
    out = Path(args.out)
    _write(out / "diagnostics.json", canonical_json(doc))
    _write(out / "diagnostics.md", render_markdown(doc))
    for d in diags:
        _write(out / f"bar_chart_{d.source}.csv", bar_chart_csv(d))
        print(f"invariance {d.source}: {d.verdict.value}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.reps < 1:
        raise _UsageError("--reps must be at least 1")
    if args.n is not None and args.n < 1:
        raise _UsageError("--n must be positive")
    if args.preset:
        cfg = preset(args.preset, seed=args.seed)
        target, baseline = PRESET_TARGETS[args.preset]
    else:
        with open(args.config, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
        cfg = sim_config_from_dict(doc).replace(seed=args.seed)
        target = tuple(doc.get("target") or (e.variants[-1] for e in cfg.experiments))
        baseline = tuple(doc.get("baseline") or (e.variants[0] for e in cfg.experiments))
    out = Path(args.out)
    result = coverage_experiment(cfg, args.reps, target=target, baseline=baseline, n_units=args.n)

    fields = ["rep", "seed", "estimate", "se", "covered"]
    lines = [",".join(fields)]
    for row in result.rows():
        lines.append(
            f"{row['rep']},{row['seed']},{row['estimate']:.12g},{row['se']:.12g},{int(row['covered'])}"
        )
    _write(out / "estimates.csv", "\n".join(lines) + "\n")
    summary = {
        "preset": args.preset,
        "seed": args.seed,
        "reps": args.reps,
        "n_units": args.n or cfg.n_units,
        "target": list(target),
        "baseline": list(baseline),
        "truth": result.truth,
        "coverage": result.coverage,
        "mean_ci_length": result.mean_ci_length,
        "mean_estimate": float(result.estimates.mean()),
    }
    _write(out / "sim_config.json", save_sim_config(cfg) + "\n")
    print(
        f"truth {result.truth:.4f}  coverage {result.coverage:.3f}  "
        f"mean CI length {result.mean_ci_length:.4f}  ({args.reps} reps)"
    )
    if cfg.k == 2:
        three = three_way_comparison(cfg, seed=args.seed, n_units=args.n)
        rows = [
            {
                "approach": name,
                "decision": list(three[name]["decision"]),
                "mea_estimate": three[name]["effect"],
                "true_effect": three["ground_truth"].get(tuple(three[name]["decision"]), 0.0),
            }
            for name in ("univariate", "sequential", "mea")
        ]
        summary["three_way"] = rows
        print("approach     decision            estimate   truth")
        for r in rows:
            print(
                f"{r['approach']:<12} {str(tuple(r['decision'])):<19} "
                f"{r['mea_estimate']:+8.3f} {r['true_effect']:+7.3f}"
            )
    _write(out / "summary.json", canonical_json(summary))
    return EXIT_OK


def cmd_power(args) -> int:
    if args.ell < 2:
        raise _UsageError("--ell must be at least 2")
    if not 0.0 < args.rate <= 1.0:
        raise _UsageError("--rate must lie in (0, 1]")
    if any(k < 1 for k in args.k):
        raise _UsageError("--k must be at least 1")
    rows = ratio_table(args.k, args.ell, args.rate)
    if args.format == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["k", "ratio", "multiplier"])
        for r in rows:
            w.writerow([r["k"], f"{r['ratio']:.6f}", f"{r['multiplier']:.6f}"])
    else:
        print(f"ell = {args.ell}, trigger rate = {args.rate}")
        print()
        print("| k | variance ratio | sample-size multiplier |")
        print("|---:|---:|---:|")
        for r in rows:
            print(f"| {r['k']} | {r['ratio']:.2f} | {r['multiplier']:.2f} |")
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze,
    "diagnose": cmd_diagnose,
    "simulate": cmd_simulate,
    "power": cmd_power,
}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, SchemaError, NonFiniteValueError, CapExceededError) as exc:
        print(f"mea: configuration or schema error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"mea: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EmptySupportError, DegenerateBucketError, ZeroDenominatorError) as exc:
        print(f"mea: degenerate data: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
