"""End-to-end causal survival pipelines.

Two estimation strategies for the effect of sustained treatment initiation
versus no initiation, both returning marginal survival curves and a risk
difference curve:

  - ``run_msm_iptw``: a marginal structural model fitted to the full cohort
    with stabilized inverse probability of treatment weights;
  - ``run_sequential_trials``: an emulated trial starting at every visit,
    with artificial censoring at treatment deviation corrected by inverse
    probability of artificial-censoring weights, pooled into one model on
    the time-since-trial-start timescale.

Both standardize conditional survival over a reference population (by
default the subjects at risk at time 0) by averaging an always-treated and
a never-treated copy of each member.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .cohort import Cohort, IntervalRow, SubjectHistory
from .errors import DataError, NumericalError, SeqTrialsError
from .survfit import (AalenFit, CoxFit, SurvivalCurve, _interval_index,
                      cox_robust_variance, fit_weighted_aalen,
                      fit_weighted_cox)
from .weights import (WeightModelSpec, WeightSeries, combine, compute_ipcw,
                      compute_iptw, compute_ipacw, truncate_weights,
                      weight_diagnostics)

FAMILIES = ("cox", "aalen")
G_FORMS = ("current", "duration", "visit_lags")


@dataclass(frozen=True)
class MsmSpec:
    """Marginal structural model structure.

    ``g_form`` chooses how treatment history enters the hazard:
    ``current`` (treatment level at the most recent visit), ``duration``
    (cumulative number of treated visits), or ``visit_lags`` (one column
    per visit index j holding A_j, zero before visit j exists).

    ``conditioning`` names baseline covariates included in the model; the
    marginal curves then come from standardization over the reference
    population. ``interactions`` adds treatment-by-conditioning product
    columns (sequential pipeline only), which saturates the model on
    binary data.
    """

    family: str = "aalen"
    g_form: str = "visit_lags"
    conditioning: tuple[str, ...] = ()
    horizons: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0)
    interactions: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown model family {self.family!r}")
        if self.g_form not in G_FORMS:
            raise DataError(f"unknown treatment-history form {self.g_form!r}")
        if not self.horizons or min(self.horizons) <= 0:
            raise DataError("horizons must be positive")


@dataclass(frozen=True)
class TrialRow:
    """One interval of one subject's follow-up within one emulated trial.

    ``s_in``/``s_out`` are on the trial timescale (time since trial start).
    ``artificial_censor`` flags that follow-up ends at ``s_out`` because
    the subject deviated from their trial-baseline treatment at the next
    visit.
    """

    subject_id: str
    trial: int
    initiator: int
    baseline_covariates: tuple[float, ...]
    s_in: float
    s_out: float
    event: int
    artificial_censor: int
    weight: float = 1.0
    subject: SubjectHistory = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class MarginalResults:
    """Marginal survival and risk-difference estimates at the horizons."""

    horizons: np.ndarray
    s1: SurvivalCurve
    s0: SurvivalCurve
    rd: np.ndarray
    population: str
    rd_lower: np.ndarray | None = None
    rd_upper: np.ndarray | None = None
    n_failed_replicates: int = 0
    fit: object = field(default=None, repr=False, compare=False)
    diagnostics: list = field(default=None, repr=False, compare=False)

    def rd_at(self, tau: float) -> float:
        i = int(np.argmin(np.abs(self.horizons - tau)))
        if abs(self.horizons[i] - tau) > 1e-9:
            raise DataError(f"horizon {tau} was not estimated")
        return float(self.rd[i])

    def to_csv(self) -> str:
        lines = ["tau,S1,S0,RD,RD_lo,RD_hi"]
        for i, tau in enumerate(self.horizons):
            lo = repr(float(self.rd_lower[i])) if self.rd_lower is not None else ""
            hi = repr(float(self.rd_upper[i])) if self.rd_upper is not None else ""
            lines.append(f"{float(tau)!r},{float(self.s1.at(tau))!r},"
                         f"{float(self.s0.at(tau))!r},{float(self.rd[i])!r},"
                         f"{lo},{hi}")
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        out = {
            "population": self.population,
            "horizons": [float(t) for t in self.horizons],
            "S1": [float(self.s1.at(t)) for t in self.horizons],
            "S0": [float(self.s0.at(t)) for t in self.horizons],
            "RD": [float(r) for r in self.rd],
        }
        if self.rd_lower is not None:
            out["RD_lo"] = [float(r) for r in self.rd_lower]
            out["RD_hi"] = [float(r) for r in self.rd_upper]
            out["n_failed_replicates"] = self.n_failed_replicates
        return out


def _n_intervals(cohort: Cohort) -> int:
    return int(np.ceil(cohort.tau_max))


def _conditioning_indices(cohort: Cohort, names: tuple[str, ...]) -> list[int]:
    missing = [n for n in names if n not in cohort.covariate_names]
    if missing:
        raise DataError(f"conditioning covariates {missing} not in cohort "
                        f"covariates {list(cohort.covariate_names)}")
    return [cohort.covariate_names.index(n) for n in names]


def _treatment_columns(a_path: np.ndarray, k: int, g_form: str,
                       n_intervals: int) -> tuple[float, ...]:
    """Treatment-history covariates for the interval starting at visit k."""
    if g_form == "current":
        return (float(a_path[k]),)
    if g_form == "duration":
        return (float(np.sum(a_path[:k + 1])),)
    # visit_lags: column j holds A_j, zero-filled before visit j exists
    cols = np.zeros(n_intervals)
    upto = min(k + 1, len(a_path))
    cols[:upto] = a_path[:upto]
    return tuple(cols)


def _treatment_column_names(g_form: str, n_intervals: int) -> list[str]:
    if g_form == "current":
        return ["A_current"]
    if g_form == "duration":
        return ["A_duration"]
    return [f"A_{j}" for j in range(n_intervals)]


def _counterfactual_path(always: bool, g_form: str, n_intervals: int,
                         extra: tuple[float, ...]) -> np.ndarray:
    """Interval-by-covariate matrix for an always/never-treated copy."""
    path = np.zeros((n_intervals, len(_treatment_column_names(g_form, n_intervals))
                     + len(extra)))
    for k in range(n_intervals):
        if always:
            a = np.ones(k + 1, dtype=np.int64)
            cols = _treatment_columns(a, k, g_form, n_intervals)
        else:
            cols = _treatment_columns(np.zeros(k + 1, dtype=np.int64), k,
                                      g_form, n_intervals)
        path[k] = (*cols, *extra)
    return path


def _check_horizons(msm_spec: MsmSpec, limit: float) -> np.ndarray:
    horizons = np.asarray(msm_spec.horizons, dtype=float)
    if horizons.max() > limit + 1e-12:
        raise DataError(f"horizon {horizons.max()} exceeds the identifiable "
                        f"follow-up {limit}")
    return horizons


def _average_curve(fit, base_path, member_cols, V, horizons,
                   discrete, coarse_grid=False) -> SurvivalCurve:
    """Population-average survival under a shared covariate path.

    ``base_path`` (intervals x p) holds the covariates common to all
    members (member-specific columns zeroed); member i adds V[i] in the
    columns ``member_cols``. Conditional survival is computed for all
    members at once and averaged.

    With ``coarse_grid`` (continuous hazards only) the averaged curve is
    evaluated at the horizons instead of every hazard jump time. Survival
    under a cumulative hazard depends only on the coefficient sums up to
    the evaluation point, so values at the horizons are unchanged; this
    shrinks the members x times workspace for large populations.
    """
    member_cols = np.asarray(list(member_cols), dtype=int)
    n_members = V.shape[0]
    if isinstance(fit, AalenFit):
        keep = fit.times <= horizons.max()
        jt = fit.times[keep]
        B = fit.increments[keep]
        idx = _interval_index(jt, base_path.shape[0])
        design = np.column_stack([np.ones(len(jt)), base_path[idx]])
        inc_base = np.einsum("ij,ij->i", design, B)
        Bm = B[:, 1 + member_cols].T if len(member_cols) else None
    else:
        keep = fit.baseline_times <= horizons.max()
        jt = fit.baseline_times[keep]
        idx = _interval_index(jt, base_path.shape[0])
        beta = fit.log_hazard_ratios
        inc_base = np.exp(base_path[idx] @ beta) * fit.baseline_increments[keep]
    if coarse_grid and not discrete:
        grid = np.unique(horizons)
        pos = np.searchsorted(jt, grid, side="right")
        cum_base = np.concatenate([[0.0], np.cumsum(inc_base)])[pos]
        n_clamped = 0
        value_sum = np.zeros(len(grid))
        if isinstance(fit, AalenFit):
            cum_m = (np.concatenate([np.zeros((1, len(member_cols))),
                                     np.cumsum(Bm.T, axis=0)])[pos].T
                     if Bm is not None else None)
            chunk = max(1, int(5e7) // max(len(grid), 1))
            for lo in range(0, n_members, chunk):
                Vc = V[lo:lo + chunk]
                cum = (cum_base[None, :] + Vc @ cum_m if cum_m is not None
                       else np.broadcast_to(cum_base, (len(Vc), len(grid))))
                surv = np.exp(-cum)
                n_clamped += int(np.sum(surv > 1.0))
                value_sum += np.clip(surv, 0.0, 1.0).sum(axis=0)
        else:
            mult = (np.exp(V @ beta[member_cols]) if len(member_cols)
                    else np.ones(n_members))
            surv = np.exp(-mult[:, None] * cum_base[None, :])
            n_clamped = int(np.sum(surv > 1.0))
            value_sum = np.clip(surv, 0.0, 1.0).sum(axis=0)
        t_grid = np.concatenate([[0.0], grid])
        values = np.concatenate([[1.0], value_sum / n_members])
        extended = bool(len(jt) and horizons.max() > jt.max())
        return SurvivalCurve(t_grid, values, extended_flat=extended,
                             n_clamped=n_clamped)
    # chunk over members to bound the members x jump-times workspace
    chunk = max(1, int(5e7) // max(len(jt), 1))
    value_sum = np.zeros(1 + len(jt))
    n_clamped = 0
    for lo in range(0, n_members, chunk):
        Vc = V[lo:lo + chunk]
        if isinstance(fit, AalenFit):
            inc = (inc_base[None, :] + Vc @ Bm if Bm is not None
                   else np.broadcast_to(inc_base, (len(Vc), len(jt))))
            surv = (np.cumprod(1.0 - inc, axis=1) if discrete
                    else np.exp(-np.cumsum(inc, axis=1)))
        else:
            mult = (np.exp(Vc @ beta[member_cols]) if len(member_cols)
                    else np.ones(len(Vc)))
            surv = np.exp(-np.cumsum(mult[:, None] * inc_base[None, :], axis=1))
        full = np.hstack([np.ones((len(Vc), 1)), surv])
        n_clamped += int(np.sum((full < 0.0) | (full > 1.0)))
        value_sum += np.clip(full, 0.0, 1.0).sum(axis=0)
    values = value_sum / n_members
    t_grid = np.unique(np.concatenate([[0.0], jt, horizons]))
    pos = np.searchsorted(np.concatenate([[0.0], jt]), t_grid,
                          side="right") - 1
    extended = bool(len(jt) and horizons.max() > jt.max())
    return SurvivalCurve(t_grid, values[pos], extended_flat=extended,
                         n_clamped=n_clamped)


def standardize(fit, msm_spec: MsmSpec, population, n_intervals: int,
                sequential: bool = False, discrete: bool = False,
                n_trial_dummies: int = 0, population_tag: str = "C0",
                coarse_grid: bool = False) -> MarginalResults:
    """Average conditional survival over a reference population.

    ``population`` is a matrix (or list) of conditioning covariate vectors,
    one row per member. Two copies of each member are built, one treated
    from time 0 onward and one never treated; the marginal curve is the
    plain average of the conditional curves and the risk difference is the
    difference of the averages.
    """
    horizons = np.asarray(msm_spec.horizons, dtype=float)
    pop = np.atleast_2d(np.asarray(population, dtype=float))
    if pop.shape[1] == 0:
        pop = np.zeros((1, 0))      # no conditioning: all members identical
    c = pop.shape[1]
    curves = {}
    for always in (True, False):
        a = 1.0 if always else 0.0
        if sequential:
            p = 1 + c + (c if msm_spec.interactions else 0) + n_trial_dummies
            base_path = np.zeros((n_intervals, p))
            base_path[:, 0] = a
            member_cols = list(range(1, 1 + c))
            V = pop
            if msm_spec.interactions:
                member_cols += list(range(1 + c, 1 + 2 * c))
                V = np.hstack([pop, a * pop])
        else:
            treat = _counterfactual_path(always, msm_spec.g_form,
                                         n_intervals, ())
            base_path = np.hstack([treat, np.zeros((n_intervals, c))])
            member_cols = list(range(treat.shape[1], treat.shape[1] + c))
            V = pop
        curves[always] = _average_curve(fit, base_path, member_cols, V,
                                        horizons, discrete,
                                        coarse_grid=coarse_grid)
    s1, s0 = curves[True], curves[False]
    rd = np.array([s1.at(t) - s0.at(t) for t in horizons])
    return MarginalResults(horizons, s1, s0, rd, population_tag, fit=fit)


def run_msm_iptw(cohort: Cohort, msm_spec: MsmSpec,
                 weight_spec: WeightModelSpec,
                 truncation_percentile: float | None = None,
                 ipcw_spec: WeightModelSpec | None = None,
                 discrete_survival: bool = False,
                 coarse_grid: bool = False) -> MarginalResults:
    """MSM with inverse probability of treatment weighting.

    Fits the weight models, attaches the stabilized weight of interval
    [k, k+1) to each counting-process row, fits the weighted hazard model,
    and standardizes over the cohort's time-0 population.
    """
    horizons = _check_horizons(msm_spec, cohort.tau_max)
    n_int = _n_intervals(cohort)
    cond_idx = _conditioning_indices(cohort, msm_spec.conditioning)

    series = compute_iptw(cohort, weight_spec)
    if ipcw_spec is not None:
        series = combine(series, compute_ipcw(cohort, ipcw_spec))
    diags = weight_diagnostics(series)
    if truncation_percentile is not None:
        series = truncate_weights(series, truncation_percentile)

    rows = []
    for s in cohort.subjects:
        a = s.treatment_path()
        w = series.weight_for(s.subject_id)
        base = tuple(s.visits[0].covariates[i] for i in cond_idx)
        last = s.n_visits - 1
        for v in s.visits:
            covs = (*_treatment_columns(a, v.k, msm_spec.g_form, n_int), *base)
            rows.append(IntervalRow(s.subject_id, float(v.k),
                                    min(v.k + 1.0, s.t_end),
                                    int(s.status == 1 and v.k == last),
                                    covs, weight=float(w[v.k])))
    names = (_treatment_column_names(msm_spec.g_form, n_int)
             + list(msm_spec.conditioning))
    fit = (fit_weighted_aalen(rows, column_names=names)
           if msm_spec.family == "aalen"
           else fit_weighted_cox(rows, column_names=names))

    population = cohort.baseline_covariates()[:, cond_idx]
    res = standardize(fit, msm_spec, population, n_int,
                      discrete=discrete_survival, coarse_grid=coarse_grid)
    return dataclasses.replace(res, diagnostics=diags)


def expand_sequential_trials(cohort: Cohort) -> list[TrialRow]:
    """Emulated-trial expansion: one trial starts at every visit.

    A subject enters trial k if they are at risk at visit k and untreated
    through visit k-1; the trial-baseline treatment A_k splits them into
    initiators and non-initiators. Follow-up on the trial timescale runs
    to the earliest of the event, the end of observation, or artificial
    censoring at the first visit where treatment deviates from its
    trial-baseline level. Later trials have less possible follow-up.
    """
    rows: list[TrialRow] = []
    for s in cohort.subjects:
        a = s.treatment_path()
        last = s.n_visits - 1
        for k in range(s.n_visits):
            if k > 0 and np.any(a[:k] == 1):
                break     # treated before k: ineligible for this and later trials
            init = int(a[k])
            base = s.visits[k].covariates
            for m in range(k, s.n_visits):
                if m > k and a[m] != init:
                    # deviation at visit m: censor there; flag the last row
                    prev = rows[-1]
                    rows[-1] = dataclasses.replace(prev, artificial_censor=1)
                    break
                rows.append(TrialRow(s.subject_id, k, init, base,
                                     float(m - k), min(m + 1.0, s.t_end) - k,
                                     int(s.status == 1 and m == last), 0,
                                     subject=s))
    return rows


def _sequential_design(row: TrialRow, cond_idx: list[int],
                       interactions: bool, trial_levels: list[int]):
    extra = tuple(row.baseline_covariates[i] for i in cond_idx)
    inter = tuple(row.initiator * x for x in extra) if interactions else ()
    dummies = tuple(1.0 if row.trial == t else 0.0 for t in trial_levels)
    return (float(row.initiator), *extra, *inter, *dummies)


def run_sequential_trials(cohort: Cohort, msm_spec: MsmSpec,
                          weight_spec: WeightModelSpec,
                          standardization_population=None,
                          stratified_baseline: bool = False,
                          baseline_trial: int = 0,
                          truncation_percentile: float | None = None,
                          ipcw_spec: WeightModelSpec | None = None,
                          discrete_survival: bool = False,
                          include_trials=None) -> MarginalResults:
    """Pooled sequential-trials analysis.

    One weighted hazard model is fitted to the stacked trial data on the
    time-since-trial-start timescale, with a common baseline across trials
    (or, with ``stratified_baseline``, a trial-specific shift represented
    by trial indicator columns). Covariates are the initiator indicator
    and the trial-baseline values of the conditioning covariates. The
    standardization population defaults to the subjects at risk at time 0.
    ``include_trials`` restricts the analysis to the given trial indices
    (e.g. [0] for a single-trial analysis).
    """
    cond_idx = _conditioning_indices(cohort, msm_spec.conditioning)
    n_int = _n_intervals(cohort)
    if stratified_baseline:
        if baseline_trial < 0 or baseline_trial >= n_int:
            raise DataError(f"baseline_trial {baseline_trial} out of range")
        limit = cohort.tau_max - baseline_trial
    else:
        limit = cohort.tau_max
    horizons = _check_horizons(msm_spec, limit)

    trial_rows = expand_sequential_trials(cohort)
    if include_trials is not None:
        wanted = set(include_trials)
        trial_rows = [r for r in trial_rows if r.trial in wanted]
        if not trial_rows:
            raise DataError(f"no trial rows left after restricting to "
                            f"trials {sorted(wanted)}")
    series = compute_ipacw(trial_rows, weight_spec)
    if ipcw_spec is not None:
        series = combine(series, _ipcw_on_trial_timescale(
            cohort, trial_rows, ipcw_spec))
    diags = weight_diagnostics(series)
    if truncation_percentile is not None:
        series = truncate_weights(series, truncation_percentile)

    trial_levels = sorted({r.trial for r in trial_rows})
    dummy_levels = [t for t in trial_levels if t != baseline_trial] \
        if stratified_baseline else []
    rows = []
    for r in trial_rows:
        w = series.weight_for((r.subject_id, r.trial))[int(round(r.s_in))]
        covs = _sequential_design(r, cond_idx, msm_spec.interactions,
                                  dummy_levels)
        rows.append(IntervalRow(f"{r.subject_id}|{r.trial}", r.s_in, r.s_out,
                                r.event, covs, weight=float(w)))
    names = (["initiator"] + list(msm_spec.conditioning)
             + [f"initiator:{n}" for n in
                (msm_spec.conditioning if msm_spec.interactions else ())]
             + [f"trial_{t}" for t in dummy_levels])
    fit = (fit_weighted_aalen(rows, column_names=names)
           if msm_spec.family == "aalen"
           else fit_weighted_cox(rows, column_names=names))

    if standardization_population is None:
        population = cohort.baseline_covariates()[:, cond_idx]
        tag = "C0"
    else:
        population = np.atleast_2d(np.asarray(standardization_population,
                                              dtype=float))
        tag = "user"
    res = standardize(fit, msm_spec, population, n_int, sequential=True,
                      discrete=discrete_survival,
                      n_trial_dummies=len(dummy_levels), population_tag=tag)
    return dataclasses.replace(res, diagnostics=diags)


def _ipcw_on_trial_timescale(cohort: Cohort, trial_rows, ipcw_spec):
    """Map per-subject censoring factors onto subject-trial intervals."""
    base = compute_ipcw(cohort, ipcw_spec)
    from .weights import WeightEntry, entry_from_factors
    groups = {}
    for r in trial_rows:
        key = (r.subject_id, r.trial)
        groups[key] = max(groups.get(key, 0), int(round(r.s_in)) + 1)
    entries = {}
    for (sid, k), n_int in groups.items():
        e = base.entries[sid]
        entries[(sid, k)] = entry_from_factors(
            (sid, k), e.factors_num[k:k + n_int], e.factors_den[k:k + n_int])
    return WeightSeries("ipcw", entries)


def test_trial_homogeneity(trial_rows, series: WeightSeries,
                           conditioning_indices=None) -> tuple[float, float]:
    """Wald test that the initiator effect is common across trials.

    Fits a pooled weighted Cox model with initiator-by-trial interaction
    terms and tests the interactions jointly, using a sandwich variance
    clustered by subject (subjects appear in several trials).
    Returns (chi-square statistic, p-value).
    """
    trial_rows = list(trial_rows)
    trials_with_events = sorted({r.trial for r in trial_rows if r.event})
    if len(trials_with_events) < 2:
        raise DataError("homogeneity test requires at least 2 trials with events")
    cond_idx = (list(range(len(trial_rows[0].baseline_covariates)))
                if conditioning_indices is None else list(conditioning_indices))
    ref = trials_with_events[0]
    inter_levels = trials_with_events[1:]
    rows, clusters = [], []
    for r in trial_rows:
        extra = tuple(r.baseline_covariates[i] for i in cond_idx)
        inter = tuple(float(r.initiator) if r.trial == t else 0.0
                      for t in inter_levels)
        covs = (float(r.initiator), *extra, *inter)
        w = series.weight_for((r.subject_id, r.trial))[int(round(r.s_in))]
        rows.append(IntervalRow(f"{r.subject_id}|{r.trial}", r.s_in, r.s_out,
                                r.event, covs, weight=float(w)))
        clusters.append(r.subject_id)
    names = (["initiator"] + [f"x{i}" for i in cond_idx]
             + [f"initiator:trial_{t}" for t in inter_levels])
    fit = fit_weighted_cox(rows, column_names=names)
    V = cox_robust_variance(fit, rows, cluster_ids=np.array(clusters))
    q = len(inter_levels)
    c = fit.log_hazard_ratios[-q:]
    Vq = V[-q:, -q:]
    try:
        stat = float(c @ np.linalg.solve(Vq, c))
    except np.linalg.LinAlgError:
        raise NumericalError("singular interaction covariance in the "
                             "homogeneity test") from None
    pvalue = float(stats.chi2.sf(stat, df=q))
    return stat, pvalue


def _resample_cohort(cohort: Cohort, rng: np.random.Generator) -> Cohort:
    idx = rng.integers(0, cohort.n, size=cohort.n)
    subjects = []
    for i, j in enumerate(idx):
        s = cohort.subjects[j]
        sid = f"{s.subject_id}#{i}"
        visits = tuple(dataclasses.replace(v, subject_id=sid) for v in s.visits)
        subjects.append(dataclasses.replace(s, subject_id=sid, visits=visits))
    return Cohort(tuple(subjects), cohort.covariate_names, cohort.tau_max)


PIPELINES = {"msm-iptw": run_msm_iptw, "sequential": run_sequential_trials}


def bootstrap_ci(cohort: Cohort, pipeline: str, msm_spec: MsmSpec,
                 weight_spec: WeightModelSpec, B: int, seed: int,
                 level: float = 0.95, **pipeline_kwargs) -> MarginalResults:
    """Subject-level nonparametric bootstrap with full-pipeline refits.

    Every replicate resamples subjects with replacement and reruns weight
    fitting, expansion, model fitting and standardization. Percentile
    intervals are attached to the point estimates from the original data.
    Replicates where a fitter fails are dropped and counted; more than 20%
    failures is an error.
    """
    if B < 2:
        raise DataError("bootstrap needs B >= 2 replicates")
    if pipeline not in PIPELINES:
        raise DataError(f"unknown pipeline {pipeline!r}")
    run = PIPELINES[pipeline]
    point = run(cohort, msm_spec, weight_spec, **pipeline_kwargs)
    rng = np.random.default_rng(seed)
    draws, failed = [], 0
    for _ in range(B):
        boot = _resample_cohort(cohort, rng)
        try:
            draws.append(run(boot, msm_spec, weight_spec, **pipeline_kwargs).rd)
        except SeqTrialsError:
            failed += 1
    if failed > 0.2 * B:
        raise NumericalError(f"bootstrap: {failed} of {B} replicates failed")
    arr = np.array(draws)
    alpha = 100.0 * (1.0 - level) / 2.0
    lo = np.percentile(arr, alpha, axis=0)
    hi = np.percentile(arr, 100.0 - alpha, axis=0)
    return dataclasses.replace(point, rd_lower=lo, rd_upper=hi,
                               n_failed_replicates=failed)
