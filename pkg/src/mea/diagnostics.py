"""Arm-Trigger Invariance diagnostics.

For each source experiment, units that triggered the source are
cross-tabulated by their source arm (rows) against the joint observed
variants of all other experiments, "not triggered" included (columns). A
chi-squared homogeneity test asks whether the source arm shifts that joint
distribution. Columns containing "not triggered" detect cross-trigger
contamination; fully triggered columns detect broken assignment
independence. A source is flagged only when the p-value beats the
Bonferroni level ``alpha / k`` and Cramér's V exceeds a practical threshold.
"""

from __future__ import annotations

import csv
import enum
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaincc

from .data_model import NOT_TRIGGERED, AnalysisConfig, UnitTable
from .errors import ConfigError, InsufficientDataError

__all__ = [
    "Verdict",
    "ContingencyTable",
    "ChiSquaredResult",
    "DiagnosticResult",
    "source_contingency_table",
    "chi_squared_homogeneity",
    "chi_squared_sf",
    "cramers_v",
    "invariance_check",
    "export_bar_chart_data",
    "bar_chart_csv",
    "joint_independence_test",
]

LOW_EXPECTED_COUNT = 5.0


class Verdict(str, enum.Enum):
    PASS = "PASS"
    FLAG = "FLAG"
    SKIPPED = "SKIPPED"


@dataclass(frozen=True)
class ContingencyTable:
    """Source arm (rows) by joint variants of the other experiments (columns)."""

    source: str
    row_labels: tuple[str, ...]
    col_labels: tuple[tuple, ...]
    counts: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    def nan_columns(self) -> list[bool]:
        return [any(v is NOT_TRIGGERED for v in col) for col in self.col_labels]

    def column_names(self) -> list[str]:
        return ["(" + ", ".join(str(v) for v in col) + ")" for col in self.col_labels]


@dataclass(frozen=True)
class ChiSquaredResult:
    chi2: float
    dof: int
    p_value: float
    expected: np.ndarray

    @property
    def min_expected(self) -> float:
        return float(self.expected.min()) if self.expected.size else math.nan


@dataclass(frozen=True)
class DiagnosticResult:
    source: str
    table: ContingencyTable | None
    chi2: float
    dof: int
    p_value: float
    cramers_v: float
    verdict: Verdict
    bonferroni_alpha: float
    v_threshold: float
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        out = {
            "source": self.source,
            "verdict": self.verdict.value,
            "chi2": self.chi2,
            "dof": self.dof,
            "p_value": self.p_value,
            "cramers_v": self.cramers_v,
            "bonferroni_alpha": self.bonferroni_alpha,
            "v_threshold": self.v_threshold,
            "warnings": list(self.warnings),
        }
        if self.table is not None:
            out["rows"] = list(self.table.row_labels)
            out["columns"] = self.table.column_names()
            out["counts"] = self.table.counts.tolist()
            out["bar_chart"] = export_bar_chart_data(self)
        return out


def _col_sort_key(codes):
    return tuple(10**6 if c < 0 else c for c in codes)


def source_contingency_table(table: UnitTable, source: str) -> ContingencyTable:
    """Cross-tab of ``source`` arms against the other experiments' joint variants.

    Raises:
        InsufficientDataError: fewer than two populated rows or columns.
    """
    config = table.config
    j = config.experiment_index(source)
    exp = config.experiments[j]
    mask = table.codes[:, j] >= 0
    if not mask.any():
        raise InsufficientDataError(f"no unit triggered {source!r}")
    rows = table.codes[mask, j].astype(np.int64)
    others = [i for i in range(config.k) if i != j]
    other_codes = table.codes[mask][:, others]
    cols, col_idx = np.unique(other_codes, axis=0, return_inverse=True)
    col_idx = col_idx.reshape(-1)
    order = sorted(range(len(cols)), key=lambda i: _col_sort_key(cols[i]))
    rank = np.empty(len(cols), dtype=np.int64)
    rank[order] = np.arange(len(cols))
    cols = cols[order]
    row_vals = np.unique(rows)
    row_rank = np.searchsorted(row_vals, rows)
    counts = np.zeros((len(row_vals), len(cols)), dtype=np.int64)
    np.add.at(counts, (row_rank, rank[col_idx]), 1)
    if counts.shape[0] < 2 or counts.shape[1] < 2:
        raise InsufficientDataError(
            f"source {source!r}: need at least 2 rows and 2 columns, got {counts.shape}"
        )
    col_labels = tuple(
        tuple(
            NOT_TRIGGERED if c < 0 else config.experiments[o].variants[c]
            for o, c in zip(others, col)
        )
        for col in cols
    )
    return ContingencyTable(
        source=source,
        row_labels=tuple(exp.variants[r] for r in row_vals),
        col_labels=col_labels,
        counts=counts,
    )


def chi_squared_sf(chi2: float, dof: int) -> float:
    """Upper tail of the chi-squared law: regularized upper incomplete gamma Q(dof/2, chi2/2)."""
    if chi2 <= 0:
        return 1.0
    return float(gammaincc(dof / 2.0, chi2 / 2.0))


def chi_squared_homogeneity(ct: ContingencyTable | np.ndarray) -> ChiSquaredResult:
    """Pearson chi-squared test with margin-based expected counts.

    All-zero rows and columns are pruned first.

    Raises:
        InsufficientDataError: fewer than two nonzero rows or columns.
    """
    obs = np.asarray(ct.counts if isinstance(ct, ContingencyTable) else ct, dtype=float)
    obs = obs[obs.sum(axis=1) > 0][:, obs.sum(axis=0) > 0]
    if obs.ndim != 2 or obs.shape[0] < 2 or obs.shape[1] < 2:
        raise InsufficientDataError(f"chi-squared test needs a 2x2 table or larger, got {obs.shape}")
    n = obs.sum()
    expected = np.outer(obs.sum(axis=1), obs.sum(axis=0)) / n
    chi2 = float(((obs - expected) ** 2 / expected).sum())
    dof = (obs.shape[0] - 1) * (obs.shape[1] - 1)
    return ChiSquaredResult(chi2, dof, chi_squared_sf(chi2, dof), expected)


def cramers_v(chi2: float, n: float, n_rows: int, n_cols: int, textbook: bool = False) -> float:
    """Cramér's V.

    The default scales by ``min(n_rows, n_cols)``; ``textbook=True`` uses
    ``min(n_rows - 1, n_cols - 1)``. The default therefore tops out at
    ``sqrt(1/2)`` for a perfectly dependent 2x2 table.
    """
    if n <= 0:
        raise ValueError("N must be positive")
    m = min(n_rows, n_cols) - (1 if textbook else 0)
    if m <= 0:
        return 0.0
    return math.sqrt(max(chi2, 0.0) / (n * m))


def _diagnose_table(ct: ContingencyTable, bonferroni: float, threshold: float, textbook: bool):
    res = chi_squared_homogeneity(ct)
    r, c = ct.shape
    v = cramers_v(res.chi2, ct.n, r, c, textbook)
    warnings = []
    if res.min_expected < LOW_EXPECTED_COUNT:
        warnings.append(
            f"smallest expected count {res.min_expected:.3g} < {LOW_EXPECTED_COUNT:g}; "
            "chi-squared approximation may be poor"
        )
    flag = res.p_value < bonferroni and v > threshold
    return DiagnosticResult(
        source=ct.source,
        table=ct,
        chi2=res.chi2,
        dof=res.dof,
        p_value=res.p_value,
        cramers_v=v,
        verdict=Verdict.FLAG if flag else Verdict.PASS,
        bonferroni_alpha=bonferroni,
        v_threshold=threshold,
        warnings=tuple(warnings),
    )


def invariance_check(
    table: UnitTable,
    config: AnalysisConfig | None = None,
    alpha: float | None = None,
    v_threshold: float | None = None,
    textbook_v: bool = False,
) -> list[DiagnosticResult]:
    """One homogeneity test per source experiment.

    A source is flagged when ``p < alpha / k`` and ``V > v_threshold``.
    Sources without enough data get a SKIPPED verdict.

    Raises:
        ConfigError: fewer than two experiments.
    """
    config = config or table.config
    k = config.k
    if k < 2:
        raise ConfigError("invariance diagnostics need at least two experiments")
    alpha = config.alpha if alpha is None else alpha
    threshold = config.cramers_v_threshold if v_threshold is None else v_threshold
    bonferroni = alpha / k
    out = []
    for e in config.experiments:
        try:
            ct = source_contingency_table(table, e.id)
            out.append(_diagnose_table(ct, bonferroni, threshold, textbook_v))
        except InsufficientDataError as exc:
            out.append(
                DiagnosticResult(
                    source=e.id,
                    table=None,
                    chi2=math.nan,
                    dof=0,
                    p_value=math.nan,
                    cramers_v=math.nan,
                    verdict=Verdict.SKIPPED,
                    bonferroni_alpha=bonferroni,
                    v_threshold=threshold,
                    warnings=(str(exc),),
                )
            )
    return out


def export_bar_chart_data(result: DiagnosticResult | ContingencyTable) -> list[dict]:
    """Per source-variant conditional distribution over the columns.

    Each row: ``source_variant``, ``column_label``, ``proportion`` and
    ``is_nan_column`` (columns containing "not triggered", which a renderer
    should grey out).
    """
    ct = result.table if isinstance(result, DiagnosticResult) else result
    if ct is None:
        return []
    names = ct.column_names()
    nan_cols = ct.nan_columns()
    rows = []
    for label, counts in zip(ct.row_labels, ct.counts):
        total = counts.sum()
        for name, is_nan, c in zip(names, nan_cols, counts):
            rows.append(
                {
                    "source_variant": label,
                    "column_label": name,
                    "proportion": float(c / total) if total else 0.0,
                    "is_nan_column": bool(is_nan),
                }
            )
    return rows


def bar_chart_csv(result: DiagnosticResult | ContingencyTable) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(
        buf,
        fieldnames=["source_variant", "column_label", "proportion", "is_nan_column"],
        lineterminator="\n",
    )
    w.writeheader()
    for row in export_bar_chart_data(result):
        w.writerow({**row, "proportion": format(row["proportion"], ".12g")})
    return buf.getvalue()


def joint_independence_test(
    table: UnitTable, tol: float = 1e-10, max_iter: int = 1000
) -> ChiSquaredResult:
    """Mutual-independence test on the full k-way table of observed variants.

    Each axis has the experiment's variants plus "not triggered". The
    all-"not triggered" corner is structurally absent (never-triggered units
    are not in the data), so expected counts are fitted by iterative
    proportional fitting of the one-way margins over the present cells only,
    and the degrees of freedom drop by one. Unlike the per-source tests this
    also reacts to correlated trigger states (which are allowed), but only
    for k >= 3: with two experiments the missing corner leaves the trigger
    margins saturated, so trigger correlation is invisible.
    """
    config = table.config
    k = config.k
    levels = [e.n_variants + 1 for e in config.experiments]
    obs = np.zeros(levels)
    idx = tuple((table.codes[:, j].astype(np.int64) + 1) for j in range(k))
    np.add.at(obs, idx, 1.0)
    present = np.ones(levels, dtype=bool)
    present[(0,) * k] = False
    obs[(0,) * k] = 0.0
    # prune empty levels
    for axis in range(k):
        other = tuple(a for a in range(k) if a != axis)
        keep = obs.sum(axis=other) > 0
        obs = np.compress(keep, obs, axis=axis)
        present = np.compress(keep, present, axis=axis)
    if any(s < 2 for s in obs.shape):
        raise InsufficientDataError(f"joint table too small after pruning: {obs.shape}")
    fit = present.astype(float) * obs.sum() / present.sum()
    for _ in range(max_iter):
        delta = 0.0
        for axis in range(k):
            other = tuple(a for a in range(k) if a != axis)
            target = obs.sum(axis=other)
            current = fit.sum(axis=other)
            scale = np.where(current > 0, target / np.where(current > 0, current, 1.0), 0.0)
            shape = [1] * k
            shape[axis] = -1
            fit = fit * scale.reshape(shape)
            delta = max(delta, float(np.abs(current - target).max()))
        if delta < tol:
            break
    mask = present & (fit > 0)
    chi2 = float(((obs[mask] - fit[mask]) ** 2 / fit[mask]).sum())
    dims = obs.shape
    dof = int(np.prod(dims)) - sum(d - 1 for d in dims) - 1 - 1
    return ChiSquaredResult(chi2, dof, chi_squared_sf(chi2, dof), np.where(present, fit, np.nan))
