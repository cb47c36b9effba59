"""Independent reference implementations used as test oracles.

Nothing here touches the partitioner or the estimator: every function
works on plain Python rows ``(unit_id, labels, value)`` where ``labels`` is
a tuple holding a variant name or ``None`` for "not triggered".
"""

from __future__ import annotations

import math
from collections import defaultdict
from fractions import Fraction

import numpy as np

from mea.data_model import NOT_TRIGGERED


def rows_of(table, column):
    out = []
    for i in range(len(table)):
        rec = table.record(i)
        labels = tuple(None if v is NOT_TRIGGERED else v for v in rec.variants)
        out.append((rec.unit_id, labels, rec.values[column]))
    return out


def _state(labels):
    return tuple(int(v is not None) for v in labels)


def _mean(xs):
    return math.fsum(xs) / len(xs)


def _regions(rows):
    by_region = defaultdict(list)
    for uid, labels, y in rows:
        by_region[_state(labels)].append((labels, y))
    return by_region


class Missing(Exception):
    pass


def _weighted(rows, support_of, cells_of):
    """Shared core: support predicate and (target, baseline) cell labels per state."""
    regions = _regions(rows)
    support = [s for s in regions if any(s) and support_of(s)]
    if not support:
        return None
    parts = []
    for s in support:
        t_cell, c_cell = cells_of(s)
        yt = [y for labels, y in regions[s] if labels == t_cell]
        yc = [y for labels, y in regions[s] if labels == c_cell]
        if not yt or not yc:
            raise Missing(s)
        parts.append((len(regions[s]), _mean(yt) - _mean(yc)))
    total = sum(n for n, _ in parts)
    return math.fsum(n * d for n, d in parts) / total


def combination_oracle(rows, target, baseline):
    """Weighted cell-mean contrast over regions where the launch changes something."""

    def support_of(s):
        return any(b and t != c for b, t, c in zip(s, target, baseline))

    def cells_of(s):
        return (
            tuple(t if b else None for b, t in zip(s, target)),
            tuple(c if b else None for b, c in zip(s, baseline)),
        )

    return _weighted(rows, support_of, cells_of)


def scenario_oracle(rows, baselines, scenario, j, target, baseline=None):
    """Effect of experiment ``j`` with others fixed per ``scenario`` (baseline if absent)."""
    baseline = baseline if baseline is not None else baselines[j]
    fixed = [scenario.get(i, baselines[i]) for i in range(len(baselines))]

    def support_of(s):
        return bool(s[j]) and target != baseline

    def cells_of(s):
        t = [v if b else None for b, v in zip(s, fixed)]
        c = list(t)
        t[j], c[j] = target, baseline
        return tuple(t), tuple(c)

    return _weighted(rows, support_of, cells_of)


def leave_one_out_jackknife(rows, estimator):
    n = len(rows)
    thetas = [estimator(rows[:i] + rows[i + 1 :]) for i in range(n)]
    mean = math.fsum(thetas) / n
    return (n - 1) / n * math.fsum((t - mean) ** 2 for t in thetas)


def expected_counts(obs):
    """Textbook expected counts with explicit loops."""
    obs = [list(map(float, r)) for r in obs]
    rows = [sum(r) for r in obs]
    cols = [sum(r[j] for r in obs) for j in range(len(obs[0]))]
    n = sum(rows)
    return [[rows[i] * cols[j] / n for j in range(len(cols))] for i in range(len(rows))]


def chi2_brute(obs):
    e = expected_counts(obs)
    stat = math.fsum(
        (o - ex) ** 2 / ex for ro, re in zip(obs, e) for o, ex in zip(ro, re)
    )
    return stat, (len(obs) - 1) * (len(obs[0]) - 1)


def chi2_sf_mpmath(x, dof, dps=50):
    import mpmath

    with mpmath.workdps(dps):
        return float(mpmath.gammainc(mpmath.mpf(dof) / 2, mpmath.mpf(x) / 2, mpmath.inf, regularized=True))


def binary_ratio_exact(k):
    return Fraction(3**k - 1, 2**k * (2**k - 1))


def enumerate_ratio(k, ell, r, sigma2=1.0, n_plus=1000.0):
    """Var_mea / Var_fac by summing over every nonzero stratum."""
    import itertools

    weights = {}
    for s in itertools.product((0, 1), repeat=k):
        if any(s):
            weights[s] = r ** sum(s) * (1 - r) ** (k - sum(s))
    z = sum(weights.values())
    var_mea = 2.0 / n_plus * sum(w / z * sigma2 * ell ** sum(s) for s, w in weights.items())
    var_fac = 2.0 * sigma2 * ell**k / n_plus
    return var_mea / var_fac


def random_rows(rng: np.random.Generator, n: int, variants, trigger_p=0.6, scale=3.0):
    """Rows with random triggering, arms and values for oracle fixtures."""
    rows = []
    for i in range(n):
        labels = tuple(
            (vs[rng.integers(len(vs))] if rng.random() < trigger_p else None) for vs in variants
        )
        if all(v is None for v in labels):
            labels = (variants[0][rng.integers(len(variants[0]))],) + labels[1:]
        y = float(np.round(rng.normal(0, scale) + sum(len(v or "") for v in labels), 6))
        rows.append((f"r{i:04d}", labels, y))
    return rows
