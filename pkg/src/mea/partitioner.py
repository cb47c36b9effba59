"""Triggering regions, variant cells and per-cell summary statistics.

Every unit falls into exactly one triggering region (which experiments it
triggered) and, within it, one variant cell (which variant it saw in each
triggered experiment). A :class:`RegionPartition` keeps, for every observed
cell and every jackknife bucket, the count, sum and sum of squares of each
metric column, plus numerator*denominator cross sums for ratio metrics.
Storing sums rather than means keeps bucket aggregation exact.
"""

from __future__ import annotations

import csv
import io
import zlib
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data_model import NOT_TRIGGERED, ExperimentSpec, UnitRecord, UnitTable
from .errors import EmptySupportError

__all__ = [
    "TriggerState",
    "trigger_state",
    "region_label",
    "assign_bucket",
    "CellStats",
    "RegionPartition",
    "build_partition",
    "region_weights",
]

#: A trigger state is a tuple of 0/1 flags, one per experiment.
TriggerState = tuple


def trigger_state(record: UnitRecord) -> TriggerState:
    return tuple(int(v is not NOT_TRIGGERED) for v in record.variants)


def region_label(state: Sequence[int]) -> str:
    """``(1, 0)`` -> ``"R10"``."""
    return "R" + "".join(str(int(b)) for b in state)


def assign_bucket(unit_id: str, n_buckets: int) -> int:
    """Jackknife bucket of a unit: CRC-32 of its UTF-8 id, modulo ``n_buckets``.

    CRC-32 (``zlib.crc32``) is fixed by ISO 3309 so the assignment is stable
    across runs, platforms and Python versions.
    """
    if n_buckets < 2:
        raise ValueError(f"need at least 2 buckets, got {n_buckets}")
    return zlib.crc32(str(unit_id).encode("utf-8")) % n_buckets


@dataclass(frozen=True)
class CellStats:
    """Summary statistics of one variant cell.

    ``sums``/``sum_squares`` map metric column -> whole-cell value; the
    ``bucket_*`` fields hold the same quantities split by jackknife bucket.
    """

    count: int
    sums: Mapping[str, float]
    sum_squares: Mapping[str, float]
    cross_sums: Mapping[tuple[str, str], float]
    bucket_counts: np.ndarray
    bucket_sums: Mapping[str, np.ndarray]
    bucket_sum_squares: Mapping[str, np.ndarray]

    def mean(self, column: str) -> float:
        return self.sums[column] / self.count

    def variance(self, column: str) -> float:
        """Sample variance (n - 1 denominator); 0 for cells with fewer than 2 units."""
        n = self.count
        if n < 2:
            return 0.0
        s = self.sums[column]
        return max(self.sum_squares[column] - s * s / n, 0.0) / (n - 1)


class RegionPartition:
    """Cell-level sufficient statistics, sharded by jackknife bucket.

    Attributes:
        experiments: the experiments, in table order.
        columns: metric columns summarized.
        pairs: (numerator, denominator) column pairs with cross sums.
        cell_codes: ``(C, k)`` variant codes per observed cell (-1 = not triggered).
        counts: ``(C, B)`` unit counts.
        sums, sum_squares: ``(C, B, M)`` per-column sums.
        cross: ``(C, B, P)`` per-pair sums of numerator*denominator.
    """

    def __init__(
        self,
        experiments: Sequence[ExperimentSpec],
        columns: Sequence[str],
        pairs: Sequence[tuple[str, str]],
        cell_codes: np.ndarray,
        counts: np.ndarray,
        sums: np.ndarray,
        sum_squares: np.ndarray,
        cross: np.ndarray,
    ):
        self.experiments = tuple(experiments)
        self.columns = tuple(columns)
        self.pairs = tuple(tuple(p) for p in pairs)
        self.cell_codes = cell_codes
        self.counts = counts
        self.sums = sums
        self.sum_squares = sum_squares
        self.cross = cross
        for a in (cell_codes, counts, sums, sum_squares, cross):
            a.setflags(write=False)
        self._col = {c: i for i, c in enumerate(self.columns)}
        self._pair = {p: i for i, p in enumerate(self.pairs)}
        self._cell = {tuple(int(x) for x in row): i for i, row in enumerate(cell_codes)}
        self._totals = None
        self._region_counts = None

    # ------------------------------------------------------------------ shape
    @property
    def k(self) -> int:
        return len(self.experiments)

    @property
    def n_buckets(self) -> int:
        return self.counts.shape[1]

    @property
    def n_cells(self) -> int:
        return self.cell_codes.shape[0]

    def _whole(self):
        if self._totals is None:
            self._totals = (
                self.counts.sum(axis=1),
                self.sums.sum(axis=1),
                self.sum_squares.sum(axis=1),
                self.cross.sum(axis=1),
            )
        return self._totals

    # ---------------------------------------------------------------- regions
    def cell_state(self, i: int) -> TriggerState:
        return tuple(int(c >= 0) for c in self.cell_codes[i])

    @property
    def states(self) -> list[TriggerState]:
        """Observed trigger states, sorted."""
        return sorted({self.cell_state(i) for i in range(self.n_cells)})

    @property
    def region_counts(self) -> dict[TriggerState, int]:
        if self._region_counts is None:
            counts = self._whole()[0]
            out: dict[TriggerState, int] = {}
            for i in range(self.n_cells):
                s = self.cell_state(i)
                out[s] = out.get(s, 0) + int(counts[i])
            self._region_counts = dict(sorted(out.items()))
        return dict(self._region_counts)

    def region_count(self, state: Sequence[int]) -> int:
        return self.region_counts.get(tuple(int(b) for b in state), 0)

    @property
    def n_plus(self) -> int:
        """Units that triggered at least one experiment."""
        return sum(n for s, n in self.region_counts.items() if any(s))

    @property
    def n_units(self) -> int:
        return int(self.counts.sum())

    # ------------------------------------------------------------------ cells
    def labels(self, codes: Sequence[int]) -> tuple:
        return tuple(
            NOT_TRIGGERED if c < 0 else e.variants[c] for e, c in zip(self.experiments, codes)
        )

    def codes_of(self, labels: Sequence) -> tuple[int, ...]:
        return tuple(
            -1 if v is NOT_TRIGGERED else e.index(v) for e, v in zip(self.experiments, labels)
        )

    def cells(self, state: Sequence[int] | None = None) -> list[tuple]:
        """Observed cell labels, optionally restricted to one region."""
        out = []
        for i, row in enumerate(self.cell_codes):
            if state is None or self.cell_state(i) == tuple(state):
                out.append(self.labels(row))
        return out

    def cell_index(self, codes: Sequence[int]) -> int | None:
        return self._cell.get(tuple(int(c) for c in codes))

    def cell_totals(self, codes: Sequence[int]) -> tuple[int, np.ndarray, np.ndarray, np.ndarray]:
        """Whole-cell ``(count, sums, sum_squares, cross)``; zeros if never observed."""
        i = self.cell_index(codes)
        if i is None:
            m, p = len(self.columns), len(self.pairs)
            return 0, np.zeros(m), np.zeros(m), np.zeros(p)
        n, s, ss, x = self._whole()
        return int(n[i]), s[i], ss[i], x[i]

    def cell(self, labels: Sequence) -> CellStats:
        codes = self.codes_of(labels)
        n, s, ss, x = self.cell_totals(codes)
        i = self.cell_index(codes)
        b = self.n_buckets
        if i is None:
            bc = np.zeros(b, dtype=np.int64)
            bs = {c: np.zeros(b) for c in self.columns}
            bss = {c: np.zeros(b) for c in self.columns}
        else:
            bc = self.counts[i]
            bs = {c: self.sums[i, :, j] for c, j in self._col.items()}
            bss = {c: self.sum_squares[i, :, j] for c, j in self._col.items()}
        return CellStats(
            count=n,
            sums={c: float(s[j]) for c, j in self._col.items()},
            sum_squares={c: float(ss[j]) for c, j in self._col.items()},
            cross_sums={p: float(x[j]) for p, j in self._pair.items()},
            bucket_counts=bc,
            bucket_sums=bs,
            bucket_sum_squares=bss,
        )

    def column_index(self, column: str) -> int:
        return self._col[column]

    def pair_index(self, pair: tuple[str, str]) -> int:
        return self._pair[tuple(pair)]

    # -------------------------------------------------------------- buckets
    def leave_out(self, bucket: int) -> "RegionPartition":
        """Partition with one bucket removed, collapsed to a single shard."""
        keep = np.ones(self.n_buckets, dtype=bool)
        keep[bucket] = False
        return self._collapse(keep)

    def collapsed(self) -> "RegionPartition":
        return self._collapse(np.ones(self.n_buckets, dtype=bool))

    def _collapse(self, keep: np.ndarray) -> "RegionPartition":
        return RegionPartition(
            self.experiments,
            self.columns,
            self.pairs,
            self.cell_codes,
            self.counts[:, keep].sum(axis=1, keepdims=True),
            self.sums[:, keep].sum(axis=1, keepdims=True),
            self.sum_squares[:, keep].sum(axis=1, keepdims=True),
            self.cross[:, keep].sum(axis=1, keepdims=True),
        )

    def merge(self, other: "RegionPartition") -> "RegionPartition":
        """Sum two partitions built over disjoint row shards."""
        if (self.experiments, self.columns, self.pairs, self.n_buckets) != (
            other.experiments,
            other.columns,
            other.pairs,
            other.n_buckets,
        ):
            raise ValueError("partitions are not compatible")
        keys = sorted(set(self._cell) | set(other._cell), key=_cell_sort_key)
        shape = (len(keys), self.n_buckets)
        m, p = len(self.columns), len(self.pairs)
        counts = np.zeros(shape, dtype=np.int64)
        sums = np.zeros(shape + (m,))
        sumsq = np.zeros(shape + (m,))
        cross = np.zeros(shape + (p,))
        for part in (self, other):
            for row, key in enumerate(keys):
                i = part._cell.get(key)
                if i is not None:
                    counts[row] += part.counts[i]
                    sums[row] += part.sums[i]
                    sumsq[row] += part.sum_squares[i]
                    cross[row] += part.cross[i]
        codes = np.array(keys, dtype=np.int16).reshape(len(keys), self.k)
        return RegionPartition(
            self.experiments, self.columns, self.pairs, codes, counts, sums, sumsq, cross
        )

    # ---------------------------------------------------------------- export
    def to_csv(self) -> str:
        """One row per (region, cell, column, bucket): count, sum, sum_of_squares."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["region", "cell", "column", "bucket", "count", "sum", "sum_of_squares"])
        for i, codes in enumerate(self.cell_codes):
            region = region_label(self.cell_state(i))
            cell = format_cell(self.labels(codes))
            for col, j in self._col.items():
                for b in range(self.n_buckets):
                    w.writerow(
                        [
                            region,
                            cell,
                            col,
                            b,
                            int(self.counts[i, b]),
                            format(float(self.sums[i, b, j]), ".17g"),
                            format(float(self.sum_squares[i, b, j]), ".17g"),
                        ]
                    )
        return buf.getvalue()

    def __eq__(self, other) -> bool:
        if not isinstance(other, RegionPartition):
            return NotImplemented
        return (
            self.experiments == other.experiments
            and self.columns == other.columns
            and np.array_equal(self.cell_codes, other.cell_codes)
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.sums, other.sums)
            and np.array_equal(self.sum_squares, other.sum_squares)
            and np.array_equal(self.cross, other.cross)
        )


def format_cell(labels: Iterable) -> str:
    return "(" + ", ".join(str(v) for v in labels) + ")"


def _cell_sort_key(codes: Sequence[int]):
    # declared variant order, with "not triggered" after every variant
    return tuple(10**6 if c < 0 else c for c in codes)


def build_partition(
    table: UnitTable,
    n_buckets: int | None = None,
    buckets: np.ndarray | None = None,
) -> RegionPartition:
    """Single pass over the table into region/cell/bucket statistics.

    Args:
        table: validated unit table.
        n_buckets: jackknife bucket count B; defaults to the config's value.
        buckets: explicit bucket index per row, overriding hash assignment
            (used e.g. for leave-one-unit-out with B = N).
    """
    config = table.config
    k = config.k
    columns = config.metric_columns
    pairs = config.ratio_pairs
    if buckets is not None:
        buckets = np.asarray(buckets, dtype=np.int64)
        if buckets.shape != (len(table),):
            raise ValueError("one bucket per row is required")
        if buckets.size and buckets.min() < 0:
            raise ValueError("bucket indices must be nonnegative")
        observed = int(buckets.max()) + 1 if buckets.size else 0
        n_buckets = max(n_buckets or 0, observed, 2)
    else:
        n_buckets = n_buckets or config.jackknife_buckets
        buckets = table.bucket_ids(n_buckets)

    m, p = len(columns), len(pairs)
    if len(table) == 0:
        empty = np.zeros((0, n_buckets))
        return RegionPartition(
            config.experiments,
            columns,
            pairs,
            np.zeros((0, k), dtype=np.int16),
            np.zeros((0, n_buckets), dtype=np.int64),
            np.zeros((0, n_buckets, m)),
            np.zeros((0, n_buckets, m)),
            empty.reshape(0, n_buckets, p) if p else np.zeros((0, n_buckets, 0)),
        )

    # mixed-radix key with "not triggered" as digit 0
    radix = np.array([e.n_variants + 1 for e in config.experiments], dtype=np.int64)
    strides = np.concatenate([[1], np.cumprod(radix[:-1])])
    keys = ((table.codes.astype(np.int64) + 1) * strides).sum(axis=1)
    uniq, inverse = np.unique(keys, return_inverse=True)
    cell_codes = ((uniq[:, None] // strides) % radix - 1).astype(np.int16)
    order = sorted(range(len(uniq)), key=lambda i: _cell_sort_key(cell_codes[i]))
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[order] = np.arange(len(uniq))
    cell_codes = cell_codes[order]
    n_cells = len(uniq)

    # Accumulate in unit_id order: floating-point sums then do not depend on
    # the row order of the input, so permuted tables give identical partitions.
    canon = np.argsort(table.unit_ids.astype(str), kind="stable")
    flat = (rank[inverse] * n_buckets + buckets)[canon]
    size = n_cells * n_buckets
    counts = np.bincount(flat, minlength=size).reshape(n_cells, n_buckets)
    sums = np.empty((n_cells, n_buckets, m))
    sumsq = np.empty((n_cells, n_buckets, m))
    for j, c in enumerate(columns):
        v = table.values[c][canon]
        sums[:, :, j] = np.bincount(flat, weights=v, minlength=size).reshape(n_cells, n_buckets)
        sumsq[:, :, j] = np.bincount(flat, weights=v * v, minlength=size).reshape(
            n_cells, n_buckets
        )
    cross = np.empty((n_cells, n_buckets, p))
    for j, (num, den) in enumerate(pairs):
        v = (table.values[num] * table.values[den])[canon]
        cross[:, :, j] = np.bincount(flat, weights=v, minlength=size).reshape(n_cells, n_buckets)
    return RegionPartition(
        config.experiments, columns, pairs, cell_codes, counts.astype(np.int64), sums, sumsq, cross
    )


def region_weights(
    partition: RegionPartition, regions: Iterable[Sequence[int]] | None = None
) -> dict[TriggerState, float]:
    """Weights proportional to region sizes over a subset of triggered regions.

    Args:
        partition: the partition.
        regions: trigger states to weight; defaults to every observed
            triggered region. The all-false state is not allowed.

    Raises:
        EmptySupportError: the subset holds no units.
    """
    counts = partition.region_counts
    if regions is None:
        regions = [s for s in counts if any(s)]
    regions = [tuple(int(b) for b in s) for s in regions]
    for s in regions:
        if len(s) != partition.k:
            raise ValueError(f"trigger state {s} has wrong length")
        if not any(s):
            raise ValueError("the never-triggered region carries no estimation weight")
    total = sum(counts.get(s, 0) for s in regions)
    if total == 0:
        raise EmptySupportError(
            "no units in regions " + ", ".join(region_label(s) for s in regions)
        )
    return {s: counts.get(s, 0) / total for s in regions}
