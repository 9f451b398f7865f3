"""Exact non-parametric estimators for the 2-period binary setting.

With one binary confounder L, binary treatment A measured at visits 0 and
1, and survival indicators Y1 (death in [0,1)) and Y2 (death in [1,2)),
both the IPW approach and the emulated-trials approach reduce to closed
form expressions in the path counts of the data. These serve as an
independent ground-truth oracle: the IPW and trial-based values are
algebraically identical, and saturated model fits from the main pipelines
must reproduce them exactly.

Everything here is coded directly from the closed forms, deliberately
sharing no code with the model-based estimators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, PositivityError


@dataclass(frozen=True)
class TreeCounts:
    """Path counts of the 2-period data, organized as a tree.

    Indices are in the order the variables occur: [l0], [l0,a0],
    [l0,a0,y1], then among survivors of period 1: [l0,a0,l1],
    [l0,a0,l1,a1], [l0,a0,l1,a1,y2].
    """

    n: int
    n_l0: np.ndarray            # (2,)
    n_l0a0: np.ndarray          # (2, 2)
    n_y1: np.ndarray            # (2, 2, 2) count with Y1 = y1
    n0_l1: np.ndarray           # (2, 2, 2) survivors with L1 = l1
    n0_l1a1: np.ndarray         # (2, 2, 2, 2)
    n0_y2: np.ndarray           # (2, 2, 2, 2, 2) survivors with Y2 = y2

    def __post_init__(self):
        for name, arr in (("n_l0", self.n_l0), ("n_l0a0", self.n_l0a0),
                          ("n_y1", self.n_y1), ("n0_l1", self.n0_l1),
                          ("n0_l1a1", self.n0_l1a1), ("n0_y2", self.n0_y2)):
            if np.any(np.asarray(arr) < 0):
                raise DataError(f"negative count in {name}")
        if self.n <= 0:
            raise DataError("tree counts need n > 0")
        checks = [
            ("n_l0 vs n", self.n_l0.sum(), self.n),
            ("n_l0a0 vs n_l0", self.n_l0a0.sum(axis=1), self.n_l0),
            ("n_y1 vs n_l0a0", self.n_y1.sum(axis=2), self.n_l0a0),
            ("n0_l1 vs survivors", self.n0_l1.sum(axis=2), self.n_y1[:, :, 0]),
            ("n0_l1a1 vs n0_l1", self.n0_l1a1.sum(axis=3), self.n0_l1),
            ("n0_y2 vs n0_l1a1", self.n0_y2.sum(axis=4), self.n0_l1a1),
        ]
        for name, got, want in checks:
            if not np.array_equal(np.asarray(got), np.asarray(want)):
                raise DataError(f"tree counts inconsistent: {name}")


def tree_counts(records) -> TreeCounts:
    """Tabulate 2-period records into a count tree.

    Each record is (l0, a0, y1, l1, a1, y2); for period-1 deaths (y1 = 1)
    the last three entries must be None. All values are binary.
    """
    n_l0 = np.zeros(2, dtype=np.int64)
    n_l0a0 = np.zeros((2, 2), dtype=np.int64)
    n_y1 = np.zeros((2, 2, 2), dtype=np.int64)
    n0_l1 = np.zeros((2, 2, 2), dtype=np.int64)
    n0_l1a1 = np.zeros((2, 2, 2, 2), dtype=np.int64)
    n0_y2 = np.zeros((2, 2, 2, 2, 2), dtype=np.int64)
    n = 0
    for rec in records:
        l0, a0, y1, l1, a1, y2 = rec
        if y1 == 1:
            if not (l1 is None and a1 is None and y2 is None):
                raise DataError(f"record {rec}: period-2 values after a "
                                f"period-1 death")
            vals = (l0, a0, y1)
        else:
            vals = (l0, a0, y1, l1, a1, y2)
        if any(v not in (0, 1) for v in vals):
            raise DataError(f"record {rec}: non-binary value")
        n += 1
        n_l0[l0] += 1
        n_l0a0[l0, a0] += 1
        n_y1[l0, a0, y1] += 1
        if y1 == 0:
            n0_l1[l0, a0, l1] += 1
            n0_l1a1[l0, a0, l1, a1] += 1
            n0_y2[l0, a0, l1, a1, y2] += 1
    if n == 0:
        raise DataError("tree_counts: no records")
    return TreeCounts(n, n_l0, n_l0a0, n_y1, n0_l1, n0_l1a1, n0_y2)


def _require(count, stratum: str) -> float:
    if count <= 0:
        raise PositivityError(stratum)
    return float(count)


def np_msm_surv1(c: TreeCounts, a: int) -> float:
    """IPW estimate of Pr(Y1 = 0) had everyone received A0 = a.

    Survivors with A0 = a are weighted by the inverse of the propensity
    n_{l0,a} / n_{l0} within their L0 stratum.
    """
    total = 0.0
    for l0 in (0, 1):
        prop = (_require(c.n_l0a0[l0, a], f"L0={l0},A0={a}")
                / _require(c.n_l0[l0], f"L0={l0}"))
        total += c.n_y1[l0, a, 0] / prop
    return total / c.n


def np_seq_surv1(c: TreeCounts, a: int) -> float:
    """Trial-0 estimate of Pr(Y1 = 0 | A0 = a), standardized over L0."""
    total = 0.0
    for l0 in (0, 1):
        cond = c.n_y1[l0, a, 0] / _require(c.n_l0a0[l0, a], f"L0={l0},A0={a}")
        total += cond * c.n_l0[l0] / _require(c.n, "all")
    return total


def np_trial1_surv(c: TreeCounts, a: int) -> float:
    """Trial-1 estimate of Pr(Y2 = 0 | survived period 1, untreated at 0).

    The trial starting at time 1 enrolls the untreated survivors; the L1
    strata are mixed with their shares among those survivors.
    """
    survivors = _require(c.n0_l1[0, 0].sum() + c.n0_l1[1, 0].sum(),
                         "untreated survivors at time 1")
    total = 0.0
    for l1 in (0, 1):
        den = _require(c.n0_l1a1[0, 0, l1, a] + c.n0_l1a1[1, 0, l1, a],
                       f"L1={l1},A1={a} among untreated survivors")
        num = c.n0_y2[0, 0, l1, a, 0] + c.n0_y2[1, 0, l1, a, 0]
        share = (c.n0_l1[0, 0, l1] + c.n0_l1[1, 0, l1]) / survivors
        total += (num / den) * share
    return total


def np_trial1_standardized(c: TreeCounts, a: int) -> float:
    """Trial-1 estimate standardized to the time-0 distribution of L."""
    total = 0.0
    for l1 in (0, 1):
        den = _require(c.n0_l1a1[0, 0, l1, a] + c.n0_l1a1[1, 0, l1, a],
                       f"L1={l1},A1={a} among untreated survivors")
        num = c.n0_y2[0, 0, l1, a, 0] + c.n0_y2[1, 0, l1, a, 0]
        total += (num / den) * c.n_l0[l1] / _require(c.n, "all")
    return total


def np_msm_surv2(c: TreeCounts, a: int) -> float:
    """IPW estimate of Pr(Y2 = 0) under sustained treatment level a.

    Period-2 survivors consistent with the regime are weighted by the
    inverse of the product of the two visit-specific propensities, one
    contribution per (L0, L1) combination.
    """
    total = 0.0
    for l0 in (0, 1):
        w0 = (_require(c.n_l0[l0], f"L0={l0}")
              / _require(c.n_l0a0[l0, a], f"L0={l0},A0={a}"))
        for l1 in (0, 1):
            w1 = (c.n0_l1[l0, a, l1]
                  / _require(c.n0_l1a1[l0, a, l1, a],
                             f"L0={l0},A0={a},L1={l1},A1={a}"))
            total += c.n0_y2[l0, a, l1, a, 0] * w0 * w1
    return total / c.n


def np_seq_surv2(c: TreeCounts, a: int) -> float:
    """Chained sequential-trials estimate of Pr(Y2 = 0) under level a.

    Within each L0 stratum, the conditional period-2 survival among the
    artificially uncensored (weighted for the censoring) is multiplied by
    the period-1 survival, then standardized over L0.
    """
    total = 0.0
    for l0 in (0, 1):
        surv0 = _require(c.n_y1[l0, a, 0], f"L0={l0},A0={a} survivors")
        inner = 0.0
        for l1 in (0, 1):
            w1 = (c.n0_l1[l0, a, l1]
                  / _require(c.n0_l1a1[l0, a, l1, a],
                             f"L0={l0},A0={a},L1={l1},A1={a}"))
            inner += c.n0_y2[l0, a, l1, a, 0] * w1
        cond2 = inner / surv0
        surv1 = surv0 / _require(c.n_l0a0[l0, a], f"L0={l0},A0={a}")
        total += cond2 * surv1 * c.n_l0[l0] / _require(c.n, "all")
    return total


def all_strata_positive(c: TreeCounts) -> bool:
    """True when every denominator used by the six estimators is positive."""
    for a in (0, 1):
        for l0 in (0, 1):
            if c.n_l0[l0] <= 0 or c.n_l0a0[l0, a] <= 0:
                return False
            if c.n_y1[l0, a, 0] <= 0:
                return False
            for l1 in (0, 1):
                if c.n0_l1a1[l0, a, l1, a] <= 0:
                    return False
    return True


def random_tree_counts(rng: np.random.Generator, n: int = 400,
                       max_tries: int = 1000) -> TreeCounts:
    """Random 2-period data tabulated into counts, with all strata occupied.

    Rejection-samples datasets of n subjects until every stratum needed by
    the estimators is non-empty.
    """
    for _ in range(max_tries):
        l0 = rng.integers(0, 2, n)
        a0 = rng.integers(0, 2, n)
        y1 = (rng.random(n) < 0.25).astype(int)
        l1 = rng.integers(0, 2, n)
        a1 = rng.integers(0, 2, n)
        y2 = (rng.random(n) < 0.25).astype(int)
        records = []
        for i in range(n):
            if y1[i] == 1:
                records.append((int(l0[i]), int(a0[i]), 1, None, None, None))
            else:
                records.append((int(l0[i]), int(a0[i]), 0, int(l1[i]),
                                int(a1[i]), int(y2[i])))
        counts = tree_counts(records)
        if all_strata_positive(counts):
            return counts
    raise DataError(f"random_tree_counts: no positivity-respecting sample "
                    f"in {max_tries} tries at n={n}")


def combine_inverse_variance(estimates, sample_sizes) -> float:
    """Inverse-variance-weighted pooling of proportion estimates.

    Uses the binomial variance p(1-p)/m per estimate; illustrative only
    (degenerate estimates at 0 or 1 are rejected).
    """
    est = np.asarray(estimates, dtype=float)
    m = np.asarray(sample_sizes, dtype=float)
    if len(est) != len(m) or len(est) == 0:
        raise DataError("combine_inverse_variance: mismatched or empty inputs")
    var = est * (1.0 - est) / m
    if np.any(var <= 0):
        raise DataError("combine_inverse_variance: degenerate proportion "
                        "(0 or 1) has zero estimated variance")
    w = 1.0 / var
    return float(np.sum(w * est) / np.sum(w))
