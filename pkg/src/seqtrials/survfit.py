"""Weighted survival fitters on counting-process data.

Implements the Kaplan-Meier product-limit estimator, a weighted Cox
proportional hazards fitter (Breslow ties and baseline), and a weighted
Aalen additive hazards fitter with unsmoothed cumulative coefficients,
plus survival-curve reconstruction from the fitted models.

All fitters accept either a sequence of :class:`~seqtrials.cohort.IntervalRow`
or a :class:`CountingProcessData` bundle of arrays. Risk sets are swept
incrementally over sorted event times, so fitting is O(N p^2 + E p^3).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cohort import IntervalRow
from .errors import DataError, NumericalError, SeparationError

COX_SCORE_TOL = 1e-8
COX_MAX_ITER = 50


@dataclass(frozen=True)
class CountingProcessData:
    """Array form of interval rows: intervals [t_in, t_out), event at t_out."""

    t_in: np.ndarray
    t_out: np.ndarray
    event: np.ndarray
    covariates: np.ndarray          # n x p, may have p = 0
    weights: np.ndarray
    subject_ids: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.t_in)
        if not (len(self.t_out) == len(self.event) == len(self.weights)
                == self.covariates.shape[0] == n):
            raise DataError("counting-process arrays have inconsistent lengths")
        if np.any(self.t_in >= self.t_out):
            raise DataError("intervals must satisfy t_in < t_out")
        if np.any(self.weights < 0):
            raise DataError("case weights must be non-negative")

    @classmethod
    def from_rows(cls, rows) -> "CountingProcessData":
        rows = list(rows)
        if not rows:
            raise DataError("no interval rows supplied")
        return cls(
            t_in=np.array([r.t_in for r in rows], dtype=float),
            t_out=np.array([r.t_out for r in rows], dtype=float),
            event=np.array([r.event for r in rows], dtype=np.int64),
            covariates=np.array([r.covariates for r in rows], dtype=float),
            weights=np.array([r.weight for r in rows], dtype=float),
            subject_ids=np.array([r.subject_id for r in rows]),
        )


def _as_cpdata(rows) -> CountingProcessData:
    if isinstance(rows, CountingProcessData):
        return rows
    return CountingProcessData.from_rows(rows)


@dataclass(frozen=True)
class SurvivalCurve:
    """Right-continuous step function S(t) on [0, t_max], S(0) = 1."""

    times: np.ndarray               # ascending, first entry 0.0
    values: np.ndarray
    extended_flat: bool = False     # horizons past the last jump were requested
    n_clamped: int = 0              # values clamped into [0, 1]

    def at(self, t) -> np.ndarray | float:
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.searchsorted(self.times, t_arr, side="right") - 1
        idx = np.clip(idx, 0, len(self.times) - 1)
        out = self.values[idx]
        return float(out[0]) if np.isscalar(t) or np.ndim(t) == 0 else out


@dataclass(frozen=True)
class CoxFit:
    """Weighted Cox PH fit: log hazard ratios + Breslow cumulative baseline."""

    log_hazard_ratios: np.ndarray
    baseline_times: np.ndarray
    baseline_increments: np.ndarray
    converged: bool
    n_iterations: int
    log_likelihood: float
    column_names: tuple[str, ...] | None = None
    information: np.ndarray | None = None


@dataclass(frozen=True)
class AalenFit:
    """Aalen additive hazards fit: cumulative coefficients B(t), B(0) = 0.

    Column 0 of ``increments`` is the baseline; columns 1.. follow the
    covariate order of the design. ``n_skipped`` counts event times at which
    the weighted at-risk design was rank deficient and the increment was
    computed as the minimum-norm least-squares solution.
    """

    times: np.ndarray
    increments: np.ndarray          # m x (1 + p)
    n_skipped: int
    column_names: tuple[str, ...] | None = None

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.increments, axis=0)


def _subject_level(data: CountingProcessData):
    """Reduce interval rows to one (time, status, weight) triple per subject."""
    if data.subject_ids is None:
        return data.t_out, data.event.astype(bool), data.weights
    order = np.argsort(data.subject_ids, kind="stable")
    sid = data.subject_ids[order]
    boundaries = np.r_[True, sid[1:] != sid[:-1]]
    # last row of each subject carries the exit time and event flag
    last = np.r_[boundaries[1:], True]
    return data.t_out[order][last], data.event[order][last].astype(bool), \
        data.weights[order][last]


def kaplan_meier(rows, weights=None) -> SurvivalCurve:
    """Product-limit estimator; tied events handled simultaneously.

    ``rows`` may be interval rows, a CountingProcessData, or a (times,
    status) pair of arrays.
    """
    if isinstance(rows, tuple) and len(rows) == 2:
        times = np.asarray(rows[0], dtype=float)
        status = np.asarray(rows[1]).astype(bool)
        w = np.ones(len(times)) if weights is None else np.asarray(weights, float)
    else:
        data = _as_cpdata(rows)
        times, status, w = _subject_level(data)
    if len(times) == 0:
        raise DataError("kaplan_meier: empty input")

    order = np.argsort(times, kind="stable")
    times, status, w = times[order], status[order], w[order]
    event_times = np.unique(times[status])
    total_w = w.sum()
    # weighted at-risk just before each event time: subjects with time >= te
    cum_w = np.concatenate([[0.0], np.cumsum(w)])
    exited = cum_w[np.searchsorted(times, event_times, side="left")]
    at_risk = total_w - exited
    ev_w = np.zeros(len(event_times))
    idx = np.searchsorted(event_times, times[status])
    np.add.at(ev_w, idx, w[status])
    factors = 1.0 - ev_w / at_risk
    surv = np.cumprod(factors)
    return SurvivalCurve(np.concatenate([[0.0], event_times]),
                         np.concatenate([[1.0], surv]))


class _RiskSetSweep:
    """Shared bookkeeping for sweeping risk sets over ascending event times.

    A row is at risk at event time t iff t_in < t <= t_out.
    """

    def __init__(self, data: CountingProcessData):
        self.data = data
        ev = data.event.astype(bool)
        self.event_times = np.unique(data.t_out[ev])
        if len(self.event_times) == 0:
            raise DataError("no events in the data")
        self.entry_order = np.argsort(data.t_in, kind="stable")
        self.exit_order = np.argsort(data.t_out, kind="stable")
        self.t_in_sorted = data.t_in[self.entry_order]
        self.t_out_sorted = data.t_out[self.exit_order]
        # event rows grouped by event time
        ev_idx = np.flatnonzero(ev)
        by_time = np.argsort(data.t_out[ev_idx], kind="stable")
        self.event_rows = ev_idx[by_time]
        self.event_row_starts = np.searchsorted(
            data.t_out[self.event_rows], self.event_times, side="left")
        self.event_row_stops = np.searchsorted(
            data.t_out[self.event_rows], self.event_times, side="right")

    def sweep(self, add_block, remove_block, at_event):
        """Walk event times; callbacks receive row-index arrays."""
        ei = xi = 0
        for j, te in enumerate(self.event_times):
            new_ei = np.searchsorted(self.t_in_sorted, te, side="left")
            if new_ei > ei:
                add_block(self.entry_order[ei:new_ei])
                ei = new_ei
            new_xi = np.searchsorted(self.t_out_sorted, te, side="left")
            if new_xi > xi:
                remove_block(self.exit_order[xi:new_xi])
                xi = new_xi
            rows = self.event_rows[self.event_row_starts[j]:self.event_row_stops[j]]
            at_event(j, te, rows)


def fit_weighted_aalen(rows, column_names=None) -> AalenFit:
    """Aalen's least-squares estimator of cumulative coefficient increments.

    At each event time t, dB(t) solves (X'WX) dB = X'W dN over the at-risk
    design X (leading column of ones). At rank-deficient event times the
    minimum-norm solution is used and the occurrence counted.
    """
    data = _as_cpdata(rows)
    X = np.column_stack([np.ones(len(data.t_in)), data.covariates])
    w = data.weights
    Xw = X * w[:, None]
    p = X.shape[1]
    sweep = _RiskSetSweep(data)

    A = np.zeros((p, p))
    times: list[float] = []
    incs: list[np.ndarray] = []
    skipped = 0

    def add(idx):
        A[...] += X[idx].T @ Xw[idx]

    def remove(idx):
        A[...] -= X[idx].T @ Xw[idx]

    def at_event(j, te, rows_at):
        nonlocal skipped
        b = Xw[rows_at].sum(axis=0)
        try:
            L = np.linalg.cholesky(A)
            dmax = np.sqrt(max(A[np.diag_indices(p)].max(), 0.0))
            if L[np.diag_indices(p)].min() <= 1e-8 * max(dmax, 1e-300):
                raise np.linalg.LinAlgError
            z = np.linalg.solve(L, b)
            incs.append(np.linalg.solve(L.T, z))
        except np.linalg.LinAlgError:
            # rank-deficient at-risk design (e.g. a covariate identically
            # zero before its visit): minimum-norm least-squares solution,
            # which zeroes the unidentified directions
            skipped += 1
            incs.append(np.linalg.lstsq(A, b, rcond=1e-10)[0])
        times.append(te)

    sweep.sweep(add, remove, at_event)
    if not times:
        raise NumericalError("Aalen fit failed: no usable event times")
    names = tuple(column_names) if column_names is not None else None
    return AalenFit(np.array(times), np.array(incs), skipped, names)


def _cox_pass(data, X, w, beta, sweep, want_baseline=False):
    """One sweep: log-likelihood, score, information (Breslow ties)."""
    p = X.shape[1]
    eta = X @ beta
    r = w * np.exp(eta)
    Xr = X * r[:, None]
    s0 = 0.0
    s1 = np.zeros(p)
    s2 = np.zeros((p, p))
    ll = 0.0
    score = np.zeros(p)
    info = np.zeros((p, p))
    base_inc = [] if want_baseline else None
    xbar_list = [] if want_baseline else None

    state = {"s0": s0, "s1": s1, "s2": s2}

    def add(idx):
        state["s0"] += r[idx].sum()
        state["s1"] += Xr[idx].sum(axis=0)
        state["s2"] += X[idx].T @ Xr[idx]

    def remove(idx):
        state["s0"] -= r[idx].sum()
        state["s1"] -= Xr[idx].sum(axis=0)
        state["s2"] -= X[idx].T @ Xr[idx]

    def at_event(j, te, rows_at):
        nonlocal ll, score, info
        dw = w[rows_at].sum()
        if dw == 0.0 or state["s0"] <= 0.0:
            if want_baseline:
                base_inc.append(0.0)
                xbar_list.append(np.zeros(p))
            return
        xbar = state["s1"] / state["s0"]
        ll += float(w[rows_at] @ eta[rows_at]) - dw * np.log(state["s0"])
        score += (w[rows_at, None] * X[rows_at]).sum(axis=0) - dw * xbar
        info += dw * (state["s2"] / state["s0"] - np.outer(xbar, xbar))
        if want_baseline:
            base_inc.append(dw / state["s0"])
            xbar_list.append(xbar)

    sweep.sweep(add, remove, at_event)
    if want_baseline:
        return ll, score, info, np.array(base_inc), np.array(xbar_list)
    return ll, score, info


def fit_weighted_cox(rows, column_names=None) -> CoxFit:
    """Newton-Raphson maximizer of the weighted Cox partial likelihood.

    Breslow tie handling; convergence at max |score| <= 1e-8 within 50
    iterations; the cumulative baseline is the weighted Breslow estimator
    at the optimum.
    """
    data = _as_cpdata(rows)
    X = data.covariates
    if X.shape[1] == 0:
        raise DataError("fit_weighted_cox requires at least one covariate")
    w = data.weights
    sweep = _RiskSetSweep(data)
    p = X.shape[1]
    beta = np.zeros(p)
    ll, score, info = _cox_pass(data, X, w, beta, sweep)
    converged = False
    it = 0
    for it in range(1, COX_MAX_ITER + 1):
        if np.max(np.abs(score)) <= COX_SCORE_TOL:
            converged = True
            break
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise SeparationError("Cox information matrix is singular; a "
                                  "covariate level may have no events") from None
        factor = 1.0
        for _ in range(30):
            cand = beta + factor * step
            ll_c, score_c, info_c = _cox_pass(data, X, w, cand, sweep)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            factor /= 2.0
        beta, ll, score, info = cand, ll_c, score_c, info_c
        if np.max(np.abs(beta)) > 30.0 and np.max(np.abs(score)) > COX_SCORE_TOL:
            raise SeparationError("monotone partial likelihood: coefficients "
                                  "diverging (max |coef| > 30)")
    if not converged and np.max(np.abs(score)) <= COX_SCORE_TOL:
        converged = True
    if not converged:
        raise NumericalError(f"Cox fit did not converge in {COX_MAX_ITER} "
                             f"iterations (max |score| = {np.max(np.abs(score)):.3g})")
    _, _, info, base_inc, _ = _cox_pass(data, X, w, beta, sweep, want_baseline=True)
    names = tuple(column_names) if column_names is not None else None
    return CoxFit(beta, sweep.event_times.copy(), base_inc, converged, it, ll,
                  names, info)


def cox_robust_variance(fit: CoxFit, rows, cluster_ids=None) -> np.ndarray:
    """Sandwich covariance of the Cox coefficients, clustered by subject.

    Uses score residuals aggregated within clusters: V = I^-1 M I^-1 with
    M the sum of outer products of cluster score sums.
    """
    data = _as_cpdata(rows)
    if cluster_ids is None:
        cluster_ids = data.subject_ids
    if cluster_ids is None:
        raise DataError("cluster ids required for the robust variance")
    X = data.covariates
    w = data.weights
    beta = fit.log_hazard_ratios
    sweep = _RiskSetSweep(data)
    _, _, info, base_inc, xbar = _cox_pass(data, X, w, beta, sweep,
                                           want_baseline=True)
    et = sweep.event_times
    # prefix sums of dH0 and dH0 * xbar over event times
    cum_h = np.concatenate([[0.0], np.cumsum(base_inc)])
    cum_hx = np.vstack([np.zeros(X.shape[1]), np.cumsum(base_inc[:, None] * xbar,
                                                        axis=0)])
    lo = np.searchsorted(et, data.t_in, side="right")
    hi = np.searchsorted(et, data.t_out, side="right")
    dh = cum_h[hi] - cum_h[lo]
    dhx = cum_hx[hi] - cum_hx[lo]
    r = w * np.exp(X @ beta)
    resid = -(r[:, None] * (X * dh[:, None] - dhx))
    ev = data.event.astype(bool)
    ev_time_idx = np.searchsorted(et, data.t_out[ev])
    resid[ev] += w[ev, None] * (X[ev] - xbar[ev_time_idx])
    # cluster sums
    order = np.argsort(cluster_ids, kind="stable")
    sorted_ids = np.asarray(cluster_ids)[order]
    starts = np.r_[0, np.flatnonzero(sorted_ids[1:] != sorted_ids[:-1]) + 1]
    sums = np.add.reduceat(resid[order], starts, axis=0)
    meat = sums.T @ sums
    inv_info = np.linalg.inv(info)
    return inv_info @ meat @ inv_info


def _interval_index(jump_times: np.ndarray, n_intervals: int) -> np.ndarray:
    """Map jump times to the visit interval whose covariates apply.

    A jump at t belongs to the interval of the most recent visit strictly
    before t, so an event at an exact visit time k falls in [k-1, k).
    """
    idx = np.ceil(jump_times).astype(int) - 1
    idx = np.maximum(idx, 0)
    if np.any(idx >= n_intervals):
        raise DataError("covariate path does not cover all requested jump times")
    return idx


def _curve_from_cumhaz(jump_times, cum_inc, horizons, discrete):
    horizons = np.asarray(horizons, dtype=float)
    t_grid = np.unique(np.concatenate([[0.0], jump_times, horizons]))
    if discrete:
        surv_at_jump = np.cumprod(1.0 - cum_inc)
    else:
        surv_at_jump = np.exp(-np.cumsum(cum_inc))
    full = np.concatenate([[1.0], surv_at_jump])
    pos = np.searchsorted(np.concatenate([[0.0], jump_times]), t_grid, side="right") - 1
    values = full[pos]
    n_clamped = int(np.sum((values < 0.0) | (values > 1.0)))
    values = np.clip(values, 0.0, 1.0)
    extended = bool(len(jump_times) and horizons.max() > jump_times.max())
    return SurvivalCurve(t_grid, values, extended_flat=extended,
                         n_clamped=n_clamped)


def survival_from_cox(fit: CoxFit, covariate_path: np.ndarray,
                      horizons) -> SurvivalCurve:
    """Conditional survival under a visit-piecewise covariate path.

    S(tau) = exp{-sum over baseline jumps <= tau of e^{x' beta} dH0}.
    """
    path = np.atleast_2d(np.asarray(covariate_path, dtype=float))
    horizons = np.asarray(horizons, dtype=float)
    keep = fit.baseline_times <= horizons.max()
    jt = fit.baseline_times[keep]
    idx = _interval_index(jt, path.shape[0])
    inc = np.exp(path[idx] @ fit.log_hazard_ratios) * fit.baseline_increments[keep]
    return _curve_from_cumhaz(jt, inc, horizons, discrete=False)


def survival_from_aalen(fit: AalenFit, covariate_path: np.ndarray,
                        horizons, discrete: bool = False) -> SurvivalCurve:
    """Conditional survival from cumulative Aalen coefficients.

    Default is the exponential transform S(tau) = exp{-sum x' dB}; with
    ``discrete=True`` the product-limit transform prod(1 - x' dB) is used
    instead (exact on discrete-time data). S is clamped to [0, 1] and the
    clamp count is reported on the curve.
    """
    path = np.atleast_2d(np.asarray(covariate_path, dtype=float))
    horizons = np.asarray(horizons, dtype=float)
    keep = fit.times <= horizons.max()
    jt = fit.times[keep]
    idx = _interval_index(jt, path.shape[0])
    design = np.column_stack([np.ones(len(jt)), path[idx]])
    inc = np.einsum("ij,ij->i", design, fit.increments[keep])
    return _curve_from_cumhaz(jt, inc, horizons, discrete=discrete)
