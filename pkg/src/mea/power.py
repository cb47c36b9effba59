"""Variance of combination effects: post-stratified analysis vs coordinated factorial.

A coordinated factorial randomizes all ``N+`` triggered units over the full
grid of ``prod(l_j)`` cells. Post-stratified analysis only needs the cells
of the experiments a stratum actually triggered, which gives

    Var_fac = 2 sigma^2 prod_j l_j / N+
    Var_mea = (2 / N+) sum_{s != 0} w_s sigma_s^2 prod_{j: s_j = 1} l_j

and, for equal variant counts ``l``, independent triggering at rate ``r``
and homoscedastic cells,

    Var_mea / Var_fac = ((1 + (l - 1) r)^k - (1 - r)^k) / (l^k (1 - (1 - r)^k)).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .errors import WeightSumError

__all__ = [
    "PowerParams",
    "factorial_variance",
    "mea_variance",
    "variance_ratio",
    "binary_ratio",
    "independent_trigger_weights",
    "ratio_table",
]


@dataclass(frozen=True)
class PowerParams:
    """Design parameters.

    ``ell`` is either one variant count shared by all experiments or a list
    with one count per experiment. ``stratum_variances`` optionally overrides
    ``sigma2`` per trigger state.
    """

    k: int
    ell: int | Sequence[int]
    sigma2: float
    n_plus: float
    r: float = 0.5
    stratum_variances: Mapping[tuple, float] | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if any(l < 2 for l in self.ells):
            raise ValueError("every experiment needs at least 2 variants")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        if self.n_plus <= 0:
            raise ValueError("N+ must be positive")
        if not 0.0 < self.r <= 1.0:
            raise ValueError("trigger rate must lie in (0, 1]")

    @property
    def ells(self) -> tuple[int, ...]:
        if isinstance(self.ell, int):
            return (self.ell,) * self.k
        ells = tuple(int(x) for x in self.ell)
        if len(ells) != self.k:
            raise ValueError("need one variant count per experiment")
        return ells


def factorial_variance(p: PowerParams) -> float:
    return 2.0 * p.sigma2 * math.prod(p.ells) / p.n_plus


def mea_variance(p: PowerParams, weights: Mapping[tuple, float]) -> float:
    """Variance over the nonzero strata given their weights.

    Raises:
        WeightSumError: weights do not sum to one within 1e-9, or a weight is
            attached to the zero stratum.
    """
    total = 0.0
    wsum = 0.0
    ells = p.ells
    for s, w in weights.items():
        s = tuple(int(b) for b in s)
        if len(s) != p.k:
            raise ValueError(f"stratum {s} has wrong length")
        if not any(s):
            raise WeightSumError("the zero stratum carries no weight")
        sigma2 = p.sigma2
        if p.stratum_variances is not None:
            sigma2 = p.stratum_variances.get(s, p.sigma2)
        cells = math.prod(l for l, b in zip(ells, s) if b)
        total += w * sigma2 * cells
        wsum += w
    if abs(wsum - 1.0) > 1e-9:
        raise WeightSumError(f"weights sum to {wsum}, not 1")
    return 2.0 * total / p.n_plus


def independent_trigger_weights(k: int, r: float) -> dict[tuple, float]:
    """``w_s = r^d (1 - r)^(k - d) / (1 - (1 - r)^k)`` with ``d`` the degree of ``s``."""
    norm = -math.expm1(k * math.log1p(-r)) if r < 1 else 1.0
    out = {}
    for s in itertools.product((0, 1), repeat=k):
        d = sum(s)
        if d == 0:
            continue
        out[s] = r**d * (1.0 - r) ** (k - d) / norm
    return out


def variance_ratio(k: int, ell: int, r: float) -> float:
    """Closed-form ``Var_mea / Var_fac`` under equal variant counts and trigger rates.

    Evaluated in log space so that k up to 64 (and beyond) does not overflow.
    """
    if k < 1 or ell < 2 or not 0.0 < r <= 1.0:
        raise ValueError("need k >= 1, ell >= 2 and 0 < r <= 1")
    if r == 1.0:
        return 1.0
    a = 1.0 + (ell - 1) * r  # (1 + (l-1) r)
    b = 1.0 - r
    # ((a^k - b^k) / l^k) / (1 - b^k) = (a/l)^k (1 - (b/a)^k) / (1 - b^k)
    lead = math.exp(k * math.log(a / ell))
    num = -math.expm1(k * math.log(b / a))
    den = -math.expm1(k * math.log(b))
    return lead * num / den


def binary_ratio(k: int) -> float:
    """``(3^k - 1) / (2^k (2^k - 1))``, evaluated exactly then rounded once."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return float(Fraction(3**k - 1, 2**k * (2**k - 1)))


def ratio_table(ks: Sequence[int], ell: int, r: float) -> list[dict]:
    """Rows of ``k``, variance ratio and sample-size multiplier ``1 / ratio``."""
    rows = []
    for k in ks:
        ratio = variance_ratio(k, ell, r)
        rows.append({"k": k, "ell": ell, "rate": r, "ratio": ratio, "multiplier": 1.0 / ratio})
    return rows
