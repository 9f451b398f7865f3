"""Stabilized inverse-probability weights.

Three weight families share the same multiplicative structure (a running
product over visits of numerator/denominator probability ratios):

  - IPTW for the MSM-IPTW pipeline,
  - IPACW for the artificial censoring of the sequential-trials pipeline,
  - IPCW for loss-to-follow-up censoring.

All probability models are weighted logistic regressions fitted pooled
across visits (and trials) with a separate intercept per visit; per-visit
fitting is available behind ``WeightModelSpec.pooled``.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .cohort import Cohort, SubjectHistory
from .errors import DataError
from .glm import fit_weighted_logistic, predict_prob

# builder signature: (subject, baseline_k, visit_m) -> covariate vector
WeightCovariateFn = Callable[[SubjectHistory, int, int], Sequence[float]]

_SCOPE_ORDER = {"none": 0, "baseline": 1, "current": 2, "custom": 99}


@dataclass(frozen=True)
class CovariateSpec:
    """Covariates entering one side (numerator or denominator) of a weight model."""

    builder: WeightCovariateFn | None
    per_visit_slopes: bool = False
    scope: str = "custom"

    def vector(self, subject: SubjectHistory, baseline_k: int, m: int) -> tuple:
        if self.builder is None:
            return ()
        return tuple(self.builder(subject, baseline_k, m))


def no_covariates() -> CovariateSpec:
    """Treatment-history-only side: visit intercepts, no covariates."""
    return CovariateSpec(None, scope="none")


def baseline_covariates(per_visit_slopes: bool = False,
                        indices: Sequence[int] | None = None) -> CovariateSpec:
    """Covariates observed at the baseline visit (L_0, or L_k in trial k)."""
    def build(subject, baseline_k, m):
        covs = subject.visits[baseline_k].covariates
        return covs if indices is None else tuple(covs[i] for i in indices)
    return CovariateSpec(build, per_visit_slopes, scope="baseline")


def current_covariates(indices: Sequence[int] | None = None) -> CovariateSpec:
    """Covariates observed at the current visit (time-dependent L_m)."""
    def build(subject, baseline_k, m):
        covs = subject.visits[m].covariates
        return covs if indices is None else tuple(covs[i] for i in indices)
    return CovariateSpec(build, scope="current")


@dataclass(frozen=True)
class WeightModelSpec:
    """Numerator/denominator model structure for stabilized weights."""

    numerator: CovariateSpec
    denominator: CovariateSpec
    pooled: bool = True
    absorbing: bool = True

    def __post_init__(self):
        num, den = _SCOPE_ORDER[self.numerator.scope], _SCOPE_ORDER[self.denominator.scope]
        if num != 99 and den != 99 and num > den:
            raise DataError("stabilization requires the numerator covariate set "
                            "to be contained in the denominator covariate set")


@dataclass(frozen=True)
class WeightEntry:
    """Weights for one subject (or subject-trial) over its follow-up intervals.

    ``weights[j]`` applies on the j-th interval of follow-up and equals the
    running product of per-visit factors up to and including visit j.
    """

    key: object
    factors_num: np.ndarray
    factors_den: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class WeightSeries:
    kind: str
    entries: dict

    def weight_for(self, key) -> np.ndarray:
        return self.entries[key].weights

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """All (interval_index, weight) pairs pooled across entries."""
        idx, vals = [], []
        for e in self.entries.values():
            idx.append(np.arange(len(e.weights)))
            vals.append(e.weights)
        return np.concatenate(idx), np.concatenate(vals)


def entry_from_factors(key, factors_num, factors_den) -> WeightEntry:
    num = np.asarray(factors_num, dtype=float)
    den = np.asarray(factors_den, dtype=float)
    if np.any(den <= 0.0) or np.any(num <= 0.0):
        raise DataError(f"weight factors must be strictly positive ({key})")
    return WeightEntry(key, num, den, np.cumprod(num / den))


def combine(a: WeightSeries, b: WeightSeries) -> WeightSeries:
    """Elementwise product of two aligned weight series (e.g. IPTW x IPCW)."""
    entries = {}
    for key, ea in a.entries.items():
        eb = b.entries[key]
        n = min(len(ea.weights), len(eb.weights))
        entries[key] = WeightEntry(key, ea.factors_num[:n] * eb.factors_num[:n],
                                   ea.factors_den[:n] * eb.factors_den[:n],
                                   ea.weights[:n] * eb.weights[:n])
    return WeightSeries(f"{a.kind}*{b.kind}", entries)


class _VisitModel:
    """Pooled (or per-visit) logistic model for a binary per-visit outcome.

    Pooled fits get one intercept column per visit; covariates either share
    a single slope across visits or get per-visit slopes.
    """

    def __init__(self, spec: CovariateSpec, pooled: bool):
        self.spec = spec
        self.pooled = pooled
        self._fits = {}
        self._masks = {}
        self._visits: list[int] = []

    def _design_row(self, subject, baseline_k, m):
        covs = self.spec.vector(subject, baseline_k, m)
        if not self.pooled:
            return (1.0, *covs)
        dummies = [1.0 if m == v else 0.0 for v in self._visits]
        if self.spec.per_visit_slopes:
            slopes = []
            for v in self._visits:
                slopes.extend(covs if m == v else (0.0,) * len(covs))
            return (*dummies, *slopes)
        return (*dummies, *covs)

    def fit(self, rows: list[tuple[SubjectHistory, int, int, int]]):
        """rows: (subject, baseline_k, visit_m, outcome)."""
        if not rows:
            raise DataError("weight model: empty at-risk stratum, nothing to fit")
        self._visits = sorted({m for (_, _, m, _) in rows})
        if self.pooled:
            X = np.array([self._design_row(s, bk, m) for (s, bk, m, _) in rows])
            y = np.array([out for (_, _, _, out) in rows], dtype=float)
            # drop structurally zero columns (a covariate slope can be
            # inactive at some visits)
            mask = np.any(X != 0.0, axis=0)
            self._masks[None] = mask
            self._fits[None] = fit_weighted_logistic(X[:, mask], y)
        else:
            for v in self._visits:
                sub = [r for r in rows if r[2] == v]
                X = np.array([self._design_row(s, bk, m) for (s, bk, m, _) in sub])
                y = np.array([out for (_, _, _, out) in sub], dtype=float)
                mask = np.any(X != 0.0, axis=0)
                self._masks[v] = mask
                self._fits[v] = fit_weighted_logistic(X[:, mask], y)
        return self

    def prob_one(self, subject, baseline_k, m) -> float:
        if m not in self._visits:
            raise DataError(f"weight model: visit {m} unseen during fitting")
        key = None if self.pooled else m
        row = np.array(self._design_row(subject, baseline_k, m))
        return predict_prob(self._fits[key], row[self._masks[key]])

    def prob_of(self, subject, baseline_k, m, observed: int) -> float:
        p1 = self.prob_one(subject, baseline_k, m)
        return p1 if observed == 1 else 1.0 - p1


def _treatment_model_rows(cohort: Cohort, absorbing: bool):
    return _person_visit_rows(cohort.subjects, absorbing)


def _person_visit_rows(subjects, absorbing: bool):
    """Person-visit rows entering the treatment models.

    Under absorbing treatment only visits with no prior treatment are
    modelled; factors for visits after initiation equal 1 exactly.
    """
    rows = []
    for s in subjects:
        a = s.treatment_path()
        for v in s.visits:
            if absorbing and v.k > 0 and a[v.k - 1] == 1:
                continue
            rows.append((s, 0, v.k, int(a[v.k])))
    return rows


def compute_iptw(cohort: Cohort, spec: WeightModelSpec) -> WeightSeries:
    """Stabilized inverse probability of treatment weights, per subject.

    SW on interval [k, k+1) is the product over visits j <= k of
    P_num(A_j = a_j) / P_den(A_j = a_j), with factors equal to 1 after
    treatment initiation when treatment is absorbing.
    """
    model_rows = _treatment_model_rows(cohort, spec.absorbing)
    num_model = _VisitModel(spec.numerator, spec.pooled).fit(model_rows)
    den_model = _VisitModel(spec.denominator, spec.pooled).fit(model_rows)

    entries = {}
    for s in cohort.subjects:
        a = s.treatment_path()
        f_num = np.ones(s.n_visits)
        f_den = np.ones(s.n_visits)
        for v in s.visits:
            if spec.absorbing and v.k > 0 and a[v.k - 1] == 1:
                continue    # Pr(A_k=1 | treated at k-1) = 1 in both models
            f_num[v.k] = num_model.prob_of(s, 0, v.k, int(a[v.k]))
            f_den[v.k] = den_model.prob_of(s, 0, v.k, int(a[v.k]))
        entries[s.subject_id] = entry_from_factors(s.subject_id, f_num, f_den)
    return WeightSeries("iptw", entries)


def compute_ipacw(trials, spec: WeightModelSpec) -> WeightSeries:
    """Inverse probability of artificial-censoring weights per subject-trial.

    ``trials`` is the output of the sequential-trials expansion: objects
    with attributes ``subject``, ``trial_k``, ``initiator`` and
    ``n_intervals`` (follow-up intervals on the trial timescale).

    The weight is 1 on the first trial interval. For non-initiators it is
    the running product of P(A=0 | trial-baseline covariates) over
    P(A=0 | current covariates), among the still-untreated. Initiators have
    weight 1 under absorbing treatment; otherwise a symmetric pair of
    models for remaining on treatment is used.
    """
    trials = _group_subject_trials(trials)
    # every subject is eligible for trial 0, so the trials recover the cohort
    subjects = {tr.subject.subject_id: tr.subject for tr in trials}
    cohort_subjects = tuple(subjects[k] for k in sorted(subjects))
    den_rows = _person_visit_rows(cohort_subjects, absorbing=True)
    den_model = _VisitModel(spec.denominator, spec.pooled).fit(den_rows)

    # numerator rows: non-initiator person-visits stacked across trials,
    # covariates taken at the trial baseline
    num_rows = []
    for tr in trials:
        if tr.initiator:
            continue
        a = tr.subject.treatment_path()
        for j in range(1, tr.n_intervals + 1):
            m = tr.trial_k + j
            if m >= tr.subject.n_visits:
                break
            num_rows.append((tr.subject, tr.trial_k, m, int(a[m])))
    num_model = (_VisitModel(spec.numerator, spec.pooled).fit(num_rows)
                 if num_rows else None)

    if not spec.absorbing:
        stay_rows = _stay_on_treatment_rows(cohort_subjects)
        den_model_1 = _VisitModel(spec.denominator, spec.pooled).fit(stay_rows)
        num_rows_1 = []
        for tr in trials:
            if not tr.initiator:
                continue
            a = tr.subject.treatment_path()
            for j in range(1, tr.n_intervals + 1):
                m = tr.trial_k + j
                if m >= tr.subject.n_visits:
                    break
                num_rows_1.append((tr.subject, tr.trial_k, m, int(a[m])))
        num_model_1 = (_VisitModel(spec.numerator, spec.pooled).fit(num_rows_1)
                       if num_rows_1 else None)

    entries = {}
    for tr in trials:
        key = (tr.subject.subject_id, tr.trial_k)
        f_num = np.ones(tr.n_intervals)
        f_den = np.ones(tr.n_intervals)
        if tr.initiator and spec.absorbing:
            entries[key] = entry_from_factors(key, f_num, f_den)
            continue
        nm, dm = ((num_model, den_model) if not tr.initiator
                  else (num_model_1, den_model_1))
        a = tr.subject.treatment_path()
        for j in range(1, tr.n_intervals):
            m = tr.trial_k + j
            observed = int(a[m])
            f_num[j] = nm.prob_of(tr.subject, tr.trial_k, m, observed)
            f_den[j] = dm.prob_of(tr.subject, tr.trial_k, m, observed)
        entries[key] = entry_from_factors(key, f_num, f_den)
    return WeightSeries("ipacw", entries)


@dataclass(frozen=True)
class _SubjectTrial:
    subject: SubjectHistory
    trial_k: int
    initiator: int
    n_intervals: int


def _group_subject_trials(trials):
    """Collapse per-interval trial rows into one record per subject-trial.

    Accepts either pre-grouped objects (with an ``n_intervals`` attribute)
    or flat rows carrying ``s_in``/``s_out`` intervals.
    """
    trials = list(trials)
    if not trials:
        raise DataError("compute_ipacw: no trial rows")
    if hasattr(trials[0], "n_intervals"):
        return trials
    groups = {}
    for r in trials:
        key = (r.subject_id, r.trial)
        if key not in groups:
            groups[key] = _SubjectTrial(r.subject, r.trial, r.initiator, 1)
        else:
            g = groups[key]
            groups[key] = replace(g, n_intervals=g.n_intervals + 1)
    return [groups[k] for k in sorted(groups)]


def _stay_on_treatment_rows(subjects):
    rows = []
    for s in subjects:
        a = s.treatment_path()
        for v in s.visits:
            if v.k > 0 and a[v.k - 1] == 1:
                rows.append((s, 0, v.k, int(a[v.k])))
    return rows


def compute_ipcw(cohort: Cohort, spec: WeightModelSpec) -> WeightSeries:
    """Stabilized weights for censoring due to loss-to-follow-up.

    The outcome at visit k is the indicator of being lost to follow-up
    before the next visit (censoring strictly before tau_max). If the
    cohort has no loss-to-follow-up at all, every weight is exactly 1.
    """
    rows = []
    any_censoring = False
    for s in cohort.subjects:
        ltfu_visit = _ltfu_visit(s, cohort.tau_max)
        for v in s.visits:
            c = int(ltfu_visit == v.k)
            any_censoring = any_censoring or c == 1
            rows.append((s, 0, v.k, c))
    if not any_censoring:
        entries = {
            s.subject_id: entry_from_factors(s.subject_id, np.ones(s.n_visits),
                                             np.ones(s.n_visits))
            for s in cohort.subjects
        }
        return WeightSeries("ipcw", entries)

    num_model = _VisitModel(spec.numerator, spec.pooled).fit(rows)
    den_model = _VisitModel(spec.denominator, spec.pooled).fit(rows)
    entries = {}
    for s in cohort.subjects:
        ltfu_visit = _ltfu_visit(s, cohort.tau_max)
        f_num = np.ones(s.n_visits)
        f_den = np.ones(s.n_visits)
        for v in s.visits:
            # weights reweight uncensored person-time: uncensored probability
            f_num[v.k] = 1.0 - num_model.prob_one(s, 0, v.k)
            f_den[v.k] = 1.0 - den_model.prob_one(s, 0, v.k)
        entries[s.subject_id] = entry_from_factors(s.subject_id, f_num, f_den)
    return WeightSeries("ipcw", entries)


def _ltfu_visit(subject: SubjectHistory, tau_max: float) -> int | None:
    if subject.status == 0 and subject.t_end < tau_max:
        return subject.n_visits - 1
    return None


def nearest_rank_percentile(values: np.ndarray, percentile: float) -> float:
    """Nearest-rank empirical percentile (deterministic, no interpolation)."""
    if not 0.0 < percentile <= 100.0:
        raise DataError(f"percentile must be in (0, 100], got {percentile}")
    s = np.sort(np.asarray(values, dtype=float))
    rank = int(np.ceil(percentile / 100.0 * len(s)))
    return float(s[max(rank, 1) - 1])


def truncate_weights(series: WeightSeries, percentile: float) -> WeightSeries:
    """Cap weights at the pooled nearest-rank percentile across all
    (subject, interval) values; weights below the cap are unchanged."""
    _, vals = series.flat()
    if len(vals) == 0:
        raise DataError("truncate_weights: empty weight series")
    cap = nearest_rank_percentile(vals, percentile)
    entries = {
        key: replace(e, weights=np.minimum(e.weights, cap))
        for key, e in series.entries.items()
    }
    return WeightSeries(series.kind, entries)


@dataclass(frozen=True)
class IntervalDiagnostics:
    interval: int
    max: float
    mean: float
    p99: float
    n_rows: int


def weight_diagnostics(series: WeightSeries) -> list[IntervalDiagnostics]:
    """Per-interval weight summaries (interval = time since trial start for
    sequential-trials weights, visit index otherwise)."""
    idx, vals = series.flat()
    out = []
    for interval in np.unique(idx):
        v = vals[idx == interval]
        out.append(IntervalDiagnostics(int(interval), float(v.max()),
                                       float(v.mean()),
                                       nearest_rank_percentile(v, 99.0), len(v)))
    return out


def diagnostics_csv(diags: list[IntervalDiagnostics]) -> str:
    lines = ["interval,max,mean,p99,n_rows"]
    for d in diags:
        lines.append(f"{d.interval},{d.max!r},{d.mean!r},{d.p99!r},{d.n_rows}")
    return "\n".join(lines) + "\n"
