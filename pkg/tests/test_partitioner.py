import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mea.data_model import NOT_TRIGGERED, UnitRecord
from mea.datasets import handex_config
from mea.errors import EmptySupportError
from mea.partitioner import (
    assign_bucket,
    build_partition,
    format_cell,
    region_label,
    region_weights,
    trigger_state,
)
from mea.simulator import preset, simulate_population

from conftest import table_from_rows
from oracles import random_rows

NT = NOT_TRIGGERED


@pytest.mark.parametrize(
    "variants, state",
    [(("t1", NT), (1, 0)), (("c1", "t2"), (1, 1)), ((NT, NT), (0, 0))],
)
def test_trigger_state(variants, state):
    assert trigger_state(UnitRecord("u", variants, {})) == state


def test_region_label():
    assert region_label((1, 0)) == "R10"
    assert region_label((0, 1, 1)) == "R011"


def test_handex_region_counts(handex):
    part = build_partition(handex)
    assert part.region_counts == {(1, 1): 8, (1, 0): 6, (0, 1): 6}
    assert part.n_plus == 20
    assert part.n_units == 20


def test_handex_cell_means(handex):
    part = build_partition(handex)
    expected = {
        ("t1", "t2"): (2, 10),
        ("c1", "c2"): (2, 4),
        ("t1", "c2"): (2, 7),
        ("c1", "t2"): (2, 6),
        ("t1", NT): (3, 5),
        ("c1", NT): (3, 3),
        (NT, "t2"): (4, 9),
        (NT, "c2"): (2, 5),
    }
    assert len(part.cells()) == 8
    for labels, (n, mean) in expected.items():
        cell = part.cell(labels)
        assert cell.count == n
        assert cell.mean("m1") == pytest.approx(mean, abs=1e-12)
        assert cell.sum_squares["m1"] >= cell.sums["m1"] ** 2 / n - 1e-9


def test_unobserved_cell_is_empty(handex):
    part = build_partition(handex.take(np.arange(8)))
    cell = part.cell(("t1", NT))
    assert cell.count == 0 and cell.bucket_counts.sum() == 0


def test_cells_sorted_with_marker_last(handex):
    part = build_partition(handex)
    assert part.cells((1, 0)) == [("c1", NT), ("t1", NT)]
    assert format_cell(("t1", NT)) == "(t1, nan)"


def test_handex_weights(handex):
    part = build_partition(handex)
    assert region_weights(part) == pytest.approx({(1, 1): 0.4, (1, 0): 0.3, (0, 1): 0.3}, abs=1e-15)
    sub = region_weights(part, [(1, 1), (0, 1)])
    assert sub == pytest.approx({(1, 1): 8 / 14, (0, 1): 6 / 14}, abs=1e-15)


def test_weights_errors(handex):
    only_r10 = build_partition(handex.take(np.arange(8, 14)))
    assert region_weights(only_r10) == {(1, 0): 1.0}
    with pytest.raises(EmptySupportError):
        region_weights(only_r10, [(0, 1)])
    with pytest.raises(ValueError):
        region_weights(build_partition(handex), [(0, 0)])


def test_empty_table_gives_empty_partition(handex):
    part = build_partition(handex.take(np.array([], dtype=int)))
    assert part.n_plus == 0 and part.n_cells == 0 and part.region_counts == {}


def test_assign_bucket_is_crc32():
    assert assign_bucket("u01", 20) == zlib.crc32(b"u01") % 20
    assert assign_bucket("user-42", 7) == assign_bucket("user-42", 7)
    with pytest.raises(ValueError):
        assign_bucket("x", 1)


def test_bucket_uniformity():
    rng = np.random.default_rng(7)
    ids = [f"{x:016x}" for x in rng.integers(0, 2**63, size=100_000)]
    counts = np.bincount([assign_bucket(u, 20) for u in ids], minlength=20)
    assert counts.min() >= 4500 and counts.max() <= 5500


def test_bucket_shards_sum_to_whole(handex):
    part = build_partition(handex, n_buckets=5)
    for labels in part.cells():
        cell = part.cell(labels)
        assert cell.bucket_counts.sum() == cell.count
        assert math.isclose(cell.bucket_sums["m1"].sum(), cell.sums["m1"], rel_tol=1e-9)
        assert math.isclose(
            cell.bucket_sum_squares["m1"].sum(), cell.sum_squares["m1"], rel_tol=1e-9
        )


def test_leave_out_removes_exactly_one_bucket(handex):
    part = build_partition(handex, n_buckets=4)
    buckets = handex.bucket_ids(4)
    for b in range(4):
        expected = build_partition(handex.take(buckets != b), n_buckets=4)
        lo = part.leave_out(b)
        assert lo.region_counts == expected.region_counts
        for labels in expected.cells():
            assert lo.cell(labels).count == expected.cell(labels).count
            assert lo.cell(labels).sums["m1"] == pytest.approx(expected.cell(labels).sums["m1"])


def test_explicit_buckets(handex):
    part = build_partition(handex, buckets=np.arange(20))
    assert part.n_buckets == 20
    with pytest.raises(ValueError):
        build_partition(handex, buckets=np.arange(3))
    with pytest.raises(ValueError):
        build_partition(handex, buckets=-np.ones(20, dtype=int))


def test_merge_of_halves_equals_whole(handex):
    whole = build_partition(handex)
    a = build_partition(handex.take(np.arange(10)))
    b = build_partition(handex.take(np.arange(10, 20)))
    assert a.merge(b) == whole


def test_partition_csv_export(handex):
    text = build_partition(handex, n_buckets=2).to_csv()
    lines = text.splitlines()
    assert lines[0] == "region,cell,column,bucket,count,sum,sum_of_squares"
    assert len(lines) == 1 + 8 * 2
    assert build_partition(handex, n_buckets=2).to_csv() == text


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 120), seed=st.integers(0, 2**31), k=st.integers(1, 3))
def test_partition_exhaustive_and_order_invariant(n, seed, k):
    rng = np.random.default_rng(seed)
    variants = [["a", "b", "c"][: 2 + (j % 2)] for j in range(k)]
    rows = random_rows(rng, n, variants)
    table = table_from_rows(rows, variants)
    part = build_partition(table)
    assert int(part.counts.sum()) == n
    assert sum(part.region_counts.values()) == n
    w = region_weights(part)
    assert math.isclose(math.fsum(w.values()), 1.0, abs_tol=1e-12)
    perm = rng.permutation(n)
    assert build_partition(table.take(perm)) == part


def test_appendix_b_region_proportions():
    cfg = preset("appendix-b")
    table = simulate_population(cfg)
    part = build_partition(table)
    n = cfg.n_units
    props = {s: c / n for s, c in part.region_counts.items()}
    props[(0, 0)] = (n - len(table)) / n
    for state, target in {(1, 1): 0.20, (1, 0): 0.30, (0, 1): 0.20, (0, 0): 0.30}.items():
        assert abs(props[state] - target) < 0.01
