"""Experiment, metric and analysis configuration plus unit-level data ingestion.

A :class:`UnitTable` is stored column-wise: one integer code per (unit,
experiment) where ``-1`` marks a unit that never triggered the experiment,
and one float array per metric column. Tables are immutable once built.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DuplicateUnitError, NonFiniteValueError, SchemaError

logger = logging.getLogger(__name__)

__all__ = [
    "NOT_TRIGGERED",
    "NOT_TRIGGERED_TOKEN",
    "ExperimentSpec",
    "MetricSpec",
    "AnalysisConfig",
    "UnitRecord",
    "UnitTable",
    "ingest_unit_table",
    "validate_config",
    "combination_count",
    "load_config",
    "config_from_dict",
]


class _Marker(enum.Enum):
    NOT_TRIGGERED = "nan"

    def __repr__(self) -> str:
        return "NOT_TRIGGERED"

    def __str__(self) -> str:
        return "nan"


#: In-memory sentinel for "this unit did not trigger the experiment".
NOT_TRIGGERED = _Marker.NOT_TRIGGERED

#: Literal CSV token accepted (besides the empty cell) for NOT_TRIGGERED.
NOT_TRIGGERED_TOKEN = "nan"

DEFAULT_COMBINATION_CAP = 50


def _is_reserved(name: str) -> bool:
    return name == "" or name.strip().lower() == NOT_TRIGGERED_TOKEN


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: an id, its ordered variants and the baseline variant."""

    id: str
    variants: tuple[str, ...]
    baseline: str

    def __post_init__(self):
        object.__setattr__(self, "variants", tuple(self.variants))

    @property
    def n_variants(self) -> int:
        return len(self.variants)

    @property
    def baseline_index(self) -> int:
        return self.variants.index(self.baseline)

    def index(self, variant: str) -> int:
        try:
            return self.variants.index(variant)
        except ValueError:
            raise SchemaError(
                f"unknown variant {variant!r} for experiment {self.id!r}; "
                f"declared variants are {list(self.variants)}"
            ) from None


@dataclass(frozen=True)
class MetricSpec:
    """A mean metric over one column, or a ratio of two column means."""

    name: str
    kind: str = "mean"
    numerator_column: str | None = None
    denominator_column: str | None = None

    def __post_init__(self):
        if self.numerator_column is None:
            object.__setattr__(self, "numerator_column", self.name)

    @property
    def is_ratio(self) -> bool:
        return self.kind == "ratio"

    @property
    def columns(self) -> tuple[str, ...]:
        if self.is_ratio:
            return (self.numerator_column, self.denominator_column)
        return (self.numerator_column,)


@dataclass(frozen=True)
class AnalysisConfig:
    experiments: tuple[ExperimentSpec, ...]
    metrics: tuple[MetricSpec, ...]
    alpha: float = 0.05
    jackknife_buckets: int = 20
    variance_method: str = "jackknife"
    cramers_v_threshold: float = 0.01
    max_combinations: int = DEFAULT_COMBINATION_CAP
    objective_metric: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "experiments", tuple(self.experiments))
        object.__setattr__(self, "metrics", tuple(self.metrics))

    @property
    def k(self) -> int:
        return len(self.experiments)

    @property
    def experiment_ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.experiments)

    def experiment(self, exp_id: str) -> ExperimentSpec:
        for e in self.experiments:
            if e.id == exp_id:
                return e
        raise ConfigError(f"unknown experiment {exp_id!r}")

    def experiment_index(self, exp_id: str) -> int:
        return self.experiment_ids.index(self.experiment(exp_id).id)

    def metric(self, name: str) -> MetricSpec:
        for m in self.metrics:
            if m.name == name:
                return m
        raise ConfigError(f"unknown metric {name!r}")

    @property
    def metric_columns(self) -> tuple[str, ...]:
        """Distinct data columns referenced by the metrics, in declaration order."""
        cols: list[str] = []
        for m in self.metrics:
            for c in m.columns:
                if c not in cols:
                    cols.append(c)
        return tuple(cols)

    @property
    def ratio_pairs(self) -> tuple[tuple[str, str], ...]:
        pairs: list[tuple[str, str]] = []
        for m in self.metrics:
            if m.is_ratio and m.columns not in pairs:
                pairs.append(m.columns)
        return tuple(pairs)


def combination_count(experiments: Sequence[ExperimentSpec]) -> int:
    """Number of non-baseline variant combinations, prod(l_j) - 1."""
    return math.prod(e.n_variants for e in experiments) - 1


def validate_config(config: AnalysisConfig, cap: int | None = None) -> list[str]:
    """Check every configuration invariant.

    Args:
        config: the configuration to check.
        cap: combination count above which a warning is emitted; defaults to
            ``config.max_combinations``.

    Returns:
        A list of warning messages (possibly empty).

    Raises:
        ConfigError: on any invariant breach.
    """
    if cap is None:
        cap = config.max_combinations
    if not config.experiments:
        raise ConfigError("at least one experiment is required")
    ids = [e.id for e in config.experiments]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"experiment ids must be unique, got {ids}")
    for e in config.experiments:
        if not e.id or e.id == "unit_id":
            raise ConfigError(f"illegal experiment id {e.id!r}")
        if not e.variants:
            raise ConfigError(f"experiment {e.id!r} has no variants")
        if len(set(e.variants)) != len(e.variants):
            raise ConfigError(f"experiment {e.id!r} has duplicate variant names")
        for v in e.variants:
            if not isinstance(v, str) or _is_reserved(v):
                raise ConfigError(
                    f"experiment {e.id!r}: {v!r} is reserved for NOT_TRIGGERED"
                )
        if e.baseline not in e.variants:
            raise ConfigError(
                f"baseline {e.baseline!r} is not a variant of experiment {e.id!r}"
            )
    if not (0.0 < config.alpha < 1.0):
        raise ConfigError(f"alpha must lie in (0, 1), got {config.alpha}")
    b = config.jackknife_buckets
    if not isinstance(b, (int, np.integer)) or not (2 <= b <= 10000):
        raise ConfigError(f"jackknife_buckets must be an integer in [2, 10000], got {b}")
    if config.variance_method not in ("analytic", "jackknife"):
        raise ConfigError(
            f"variance_method must be 'analytic' or 'jackknife', got {config.variance_method!r}"
        )
    if config.cramers_v_threshold < 0:
        raise ConfigError("cramers_v_threshold must be nonnegative")
    names = [m.name for m in config.metrics]
    if len(set(names)) != len(names):
        raise ConfigError(f"metric names must be unique, got {names}")
    for m in config.metrics:
        if m.kind not in ("mean", "ratio"):
            raise ConfigError(f"metric {m.name!r}: kind must be 'mean' or 'ratio'")
        if m.is_ratio and not m.denominator_column:
            raise ConfigError(f"ratio metric {m.name!r} needs a denominator column")
        if not m.is_ratio and m.denominator_column:
            raise ConfigError(f"mean metric {m.name!r} must not name a denominator")
        for c in m.columns:
            if c == "unit_id" or c in ids:
                raise ConfigError(f"metric column {c!r} collides with an id column")
    if config.objective_metric is not None and config.objective_metric not in names:
        raise ConfigError(f"objective metric {config.objective_metric!r} is not declared")

    warnings: list[str] = []
    n_comb = combination_count(config.experiments)
    if n_comb > cap:
        warnings.append(
            f"{n_comb} non-baseline combinations exceed the cap of {cap}; "
            "consider restricting the analysis to key variant subsets"
        )
    for w in warnings:
        logger.warning(w)
    return warnings


def config_from_dict(doc: Mapping) -> tuple[AnalysisConfig, list[dict]]:
    """Build an :class:`AnalysisConfig` from its JSON shape.

    Returns the config and the (unvalidated) list of scenario requests.
    """
    try:
        experiments = [
            ExperimentSpec(
                id=str(e["id"]),
                variants=tuple(str(v) for v in e["variants"]),
                baseline=str(e.get("baseline", e["variants"][0])),
            )
            for e in doc["experiments"]
        ]
        metrics = [
            MetricSpec(
                name=str(m["name"]),
                kind=str(m.get("kind", "mean")),
                numerator_column=m.get("numerator", m.get("numerator_column")),
                denominator_column=m.get("denominator", m.get("denominator_column")),
            )
            for m in doc["metrics"]
        ]
    except (KeyError, TypeError, IndexError) as exc:
        raise ConfigError(f"malformed config document: {exc!r}") from exc
    config = AnalysisConfig(
        experiments=tuple(experiments),
        metrics=tuple(metrics),
        alpha=float(doc.get("alpha", 0.05)),
        jackknife_buckets=doc.get("jackknife_buckets", 20),
        variance_method=str(doc.get("variance_method", "jackknife")),
        cramers_v_threshold=float(doc.get("cramers_v_threshold", 0.01)),
        max_combinations=int(doc.get("max_combinations", DEFAULT_COMBINATION_CAP)),
        objective_metric=doc.get("objective_metric"),
    )
    validate_config(config)
    return config, list(doc.get("scenarios", []))


def load_config(path: str | os.PathLike) -> tuple[AnalysisConfig, list[dict]]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc)


@dataclass(frozen=True)
class UnitRecord:
    """One unit: its observed variant per experiment and its metric values."""

    unit_id: str
    variants: tuple
    values: Mapping[str, float] = field(default_factory=dict)


class UnitTable:
    """Validated, immutable unit-level data for one analysis.

    Attributes:
        config: the analysis configuration the table was validated against.
        unit_ids: object array of unit identifiers.
        codes: ``(n, k)`` int16 array, variant index per experiment or -1.
        values: mapping metric column -> float64 array.
    """

    def __init__(
        self,
        config: AnalysisConfig,
        unit_ids: Sequence[str],
        codes: np.ndarray,
        values: Mapping[str, np.ndarray],
    ):
        validate_config(config)
        n = len(unit_ids)
        unit_ids = np.asarray(unit_ids, dtype=object).reshape(n)
        codes = np.asarray(codes, dtype=np.int16).reshape(n, config.k)
        for j, e in enumerate(config.experiments):
            col = codes[:, j]
            if col.size and (col.min() < -1 or col.max() >= e.n_variants):
                raise SchemaError(f"variant code out of range for experiment {e.id!r}")
        vals: dict[str, np.ndarray] = {}
        for c in config.metric_columns:
            if c not in values:
                raise SchemaError(f"missing metric column {c!r}")
            arr = np.asarray(values[c], dtype=np.float64).reshape(n)
            if not np.all(np.isfinite(arr)):
                bad = int(np.flatnonzero(~np.isfinite(arr))[0])
                raise NonFiniteValueError(
                    f"non-finite value in column {c!r} for unit {unit_ids[bad]!r}"
                )
            vals[c] = arr
        if len(set(unit_ids.tolist())) != n:
            seen: set = set()
            dup = next(u for u in unit_ids if u in seen or seen.add(u))
            raise DuplicateUnitError(f"duplicate unit_id {dup!r}")
        for arr in (unit_ids, codes, *vals.values()):
            arr.setflags(write=False)
        self.config = config
        self.unit_ids = unit_ids
        self.codes = codes
        self.values = vals
        self._bucket_cache: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.unit_ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, UnitTable):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.unit_ids, other.unit_ids)
            and np.array_equal(self.codes, other.codes)
            and all(np.array_equal(self.values[c], other.values[c]) for c in self.values)
        )

    @property
    def experiments(self) -> tuple[ExperimentSpec, ...]:
        return self.config.experiments

    @classmethod
    def from_records(cls, config: AnalysisConfig, records: Iterable[UnitRecord]) -> "UnitTable":
        records = list(records)
        codes = np.empty((len(records), config.k), dtype=np.int16)
        for i, rec in enumerate(records):
            if len(rec.variants) != config.k:
                raise SchemaError(f"unit {rec.unit_id!r}: expected {config.k} variants")
            for j, (e, v) in enumerate(zip(config.experiments, rec.variants)):
                codes[i, j] = -1 if v is NOT_TRIGGERED else e.index(v)
        values = {}
        for c in config.metric_columns:
            try:
                values[c] = np.array([float(r.values[c]) for r in records], dtype=np.float64)
            except KeyError:
                raise SchemaError(f"record missing metric column {c!r}") from None
        return cls(config, [r.unit_id for r in records], codes, values)

    def record(self, i: int) -> UnitRecord:
        variants = tuple(
            NOT_TRIGGERED if c < 0 else e.variants[c]
            for e, c in zip(self.config.experiments, self.codes[i])
        )
        return UnitRecord(
            unit_id=self.unit_ids[i],
            variants=variants,
            values={c: float(v[i]) for c, v in self.values.items()},
        )

    def records(self) -> Iterator[UnitRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def take(self, index) -> "UnitTable":
        """Sub-table of the selected rows (boolean mask or integer index)."""
        index = np.asarray(index)
        return UnitTable(
            self.config,
            self.unit_ids[index],
            self.codes[index],
            {c: v[index] for c, v in self.values.items()},
        )

    def bucket_ids(self, n_buckets: int) -> np.ndarray:
        """Jackknife bucket per unit, cached per bucket count."""
        from .partitioner import assign_bucket

        if n_buckets not in self._bucket_cache:
            b = np.fromiter(
                (assign_bucket(u, n_buckets) for u in self.unit_ids),
                dtype=np.int64,
                count=len(self),
            )
            b.setflags(write=False)
            self._bucket_cache[n_buckets] = b
        return self._bucket_cache[n_buckets]

    def to_csv(self, dest: str | os.PathLike | IO[str] | None = None) -> str | None:
        """Write the table in the ingestion CSV format.

        NOT_TRIGGERED is written as the empty cell and floats use ``repr`` so
        re-ingesting reproduces the table exactly. Returns the text when
        ``dest`` is None.
        """
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        exps = self.config.experiments
        cols = list(self.values)
        writer.writerow(["unit_id", *[e.id for e in exps], *cols])
        value_lists = [self.values[c].tolist() for c in cols]
        for i, uid in enumerate(self.unit_ids):
            row = [uid]
            row.extend("" if c < 0 else e.variants[c] for e, c in zip(exps, self.codes[i]))
            row.extend(repr(v[i]) for v in value_lists)
            writer.writerow(row)
        text = buf.getvalue()
        if dest is None:
            return text
        if hasattr(dest, "write"):
            dest.write(text)
        else:
            Path(dest).write_text(text, encoding="utf-8")
        return None


def ingest_unit_table(source, config: AnalysisConfig) -> UnitTable:
    """Read unit-level CSV data and validate it against ``config``.

    Args:
        source: path, open text stream, or CSV text with a header row holding
            ``unit_id``, one column per experiment id and one per metric column.
        config: the analysis configuration.

    Raises:
        SchemaError: missing column or undeclared variant name.
        NonFiniteValueError: empty, unparsable or non-finite metric value.
        DuplicateUnitError: repeated unit_id.
    """
    validate_config(config)
    if isinstance(source, (str, os.PathLike)) and not (
        isinstance(source, str) and "\n" in source
    ):
        with open(source, encoding="utf-8", newline="") as fh:
            return _ingest_stream(fh, config)
    if isinstance(source, str):
        return _ingest_stream(io.StringIO(source), config)
    return _ingest_stream(source, config)


def _ingest_stream(stream: IO[str], config: AnalysisConfig) -> UnitTable:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty input: no header row") from None
    header = [h.strip() for h in header]
    pos = {name: i for i, name in enumerate(header)}
    needed = ["unit_id", *config.experiment_ids, *config.metric_columns]
    for name in needed:
        if name not in pos:
            raise SchemaError(f"missing column {name!r}")

    lookups = [
        {v: i for i, v in enumerate(e.variants)} for e in config.experiments
    ]
    exp_pos = [pos[e] for e in config.experiment_ids]
    val_pos = [pos[c] for c in config.metric_columns]
    unit_ids: list[str] = []
    codes: list[list[int]] = []
    cols: list[list[float]] = [[] for _ in val_pos]
    width = len(header)
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) < width:
            raise SchemaError(f"line {lineno}: expected {width} fields, got {len(row)}")
        unit_ids.append(row[pos["unit_id"]])
        code_row = []
        for j, p in enumerate(exp_pos):
            cell = row[p]
            if cell == "" or cell == NOT_TRIGGERED_TOKEN:
                code_row.append(-1)
            else:
                try:
                    code_row.append(lookups[j][cell])
                except KeyError:
                    exp = config.experiments[j]
                    raise SchemaError(
                        f"line {lineno}: unknown variant {cell!r} for experiment {exp.id!r}"
                    ) from None
        codes.append(code_row)
        for out, p, name in zip(cols, val_pos, config.metric_columns):
            cell = row[p].strip()
            try:
                x = float(cell)
            except ValueError:
                raise NonFiniteValueError(
                    f"line {lineno}: column {name!r} holds {cell!r}, not a number"
                ) from None
            if not math.isfinite(x):
                raise NonFiniteValueError(f"line {lineno}: non-finite value in {name!r}")
            out.append(x)
    codes_arr = np.array(codes, dtype=np.int16).reshape(len(unit_ids), config.k)
    if not np.any(codes_arr >= 0):
        raise SchemaError("no unit triggered any experiment")
    values = {c: np.array(v, dtype=np.float64) for c, v in zip(config.metric_columns, cols)}
    return UnitTable(config, unit_ids, codes_arr, values)
