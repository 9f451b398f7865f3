"""Stabilized inverse-probability weight machinery."""

import dataclasses

import numpy as np
import pytest

from seqtrials import DataError
from seqtrials.cohort import SubjectHistory
from seqtrials.estimators import expand_sequential_trials
from seqtrials.simgen import SCENARIOS, default_weight_spec, generate_cohort
from seqtrials.survfit import IntervalRow, fit_weighted_cox
from seqtrials.weights import (WeightModelSpec, WeightSeries,
                               baseline_covariates, compute_ipacw,
                               compute_ipcw, compute_iptw, current_covariates,
                               diagnostics_csv, entry_from_factors,
                               nearest_rank_percentile, no_covariates,
                               truncate_weights, weight_diagnostics)


def test_entry_is_running_product_of_factor_ratios():
    e = entry_from_factors("a", (0.5, 0.5), (0.4, 0.8))
    assert e.weights.tolist() == [1.25, 0.78125]
    e = entry_from_factors("b", (1.0, 1.0, 1.0), (0.75, 1.0, 2.0 / 3.0))
    assert e.weights[0] == pytest.approx(4.0 / 3.0, abs=1e-15)
    assert e.weights[2] == pytest.approx(2.0, abs=1e-15)
    e = entry_from_factors("c", (0.9,), (0.8,))
    assert e.weights[0] == 1.125


def test_entry_rejects_nonpositive_factors():
    with pytest.raises(DataError):
        entry_from_factors("a", (0.5, 0.0), (0.5, 0.5))
    with pytest.raises(DataError):
        entry_from_factors("a", (0.5,), (-0.1,))


def _series(weight_lists):
    entries = {}
    for i, ws in enumerate(weight_lists):
        entries[f"s{i}"] = entry_from_factors(f"s{i}", np.asarray(ws, float),
                                              np.ones(len(ws)))
    return WeightSeries("iptw", entries)


def test_recursive_product_identity():
    cohort = generate_cohort(SCENARIOS[1], 300, 5)
    series = compute_iptw(cohort, default_weight_spec("msm_iptw"))
    for e in series.entries.values():
        for j in range(1, len(e.weights)):
            want = e.weights[j - 1] * e.factors_num[j] / e.factors_den[j]
            assert e.weights[j] == pytest.approx(want, rel=1e-12)


def test_absorbing_treatment_freezes_weights_after_initiation():
    cohort = generate_cohort(SCENARIOS[1], 500, 9)
    series = compute_iptw(cohort, default_weight_spec("msm_iptw"))
    for s in cohort.subjects:
        a = s.treatment_path()
        if not np.any(a == 1):
            continue
        first = int(np.argmax(a == 1))
        w = series.weight_for(s.subject_id)
        assert np.allclose(w[first:], w[first], atol=1e-15)


def test_numerator_equal_denominator_gives_unit_weights():
    cohort = generate_cohort(SCENARIOS[1], 400, 3)
    spec = WeightModelSpec(current_covariates(), current_covariates())
    series = compute_iptw(cohort, spec)
    _, vals = series.flat()
    assert np.allclose(vals, 1.0, atol=1e-12)


def test_stabilization_requires_nested_covariate_sets():
    with pytest.raises(DataError):
        WeightModelSpec(current_covariates(), baseline_covariates())
    with pytest.raises(DataError):
        WeightModelSpec(baseline_covariates(), no_covariates())


def test_weights_near_one_when_treatment_ignores_covariates():
    params = dataclasses.replace(SCENARIOS[1], gamma_L=0.0)
    cohort = generate_cohort(params, 5000, 21)
    series = compute_iptw(cohort, default_weight_spec("msm_iptw"))
    idx, vals = series.flat()
    assert vals.max() < 1.5
    for interval in np.unique(idx):
        assert np.mean(vals[idx == interval]) == pytest.approx(1.0, abs=0.02)


def test_mean_stabilized_weight_near_one(cohort_scenario1_n5000):
    series = compute_iptw(cohort_scenario1_n5000,
                          default_weight_spec("msm_iptw"))
    idx, vals = series.flat()
    for interval in np.unique(idx):
        assert np.mean(vals[idx == interval]) == pytest.approx(1.0, abs=0.1)


def test_ipacw_first_interval_and_initiators_are_one():
    cohort = generate_cohort(SCENARIOS[1], 500, 13)
    trials = expand_sequential_trials(cohort)
    series = compute_ipacw(trials, default_weight_spec("seq_trials"))
    initiators = {(r.subject_id, r.trial) for r in trials if r.initiator}
    for key, e in series.entries.items():
        assert e.weights[0] == 1.0
        if key in initiators:
            assert np.all(e.weights == 1.0)


def test_ipcw_is_one_without_dropout():
    cohort = generate_cohort(SCENARIOS[1], 400, 5)
    spec = WeightModelSpec(no_covariates(), current_covariates())
    series = compute_ipcw(cohort, spec)
    _, vals = series.flat()
    assert np.all(vals == 1.0)


def _with_random_dropout(cohort, rng_seed, frac=0.25):
    rng = np.random.default_rng(rng_seed)
    subjects = []
    for s in cohort.subjects:
        if s.n_visits >= 3 and rng.random() < frac:
            c = int(rng.integers(1, s.n_visits - 1))
            subjects.append(SubjectHistory(s.subject_id, s.visits[:c + 1],
                                           c + 0.5, 0))
        else:
            subjects.append(s)
    return dataclasses.replace(cohort, subjects=tuple(subjects))


def test_ipcw_under_random_dropout_is_stable():
    cohort = _with_random_dropout(generate_cohort(SCENARIOS[1], 4000, 31), 7)
    spec = WeightModelSpec(no_covariates(), current_covariates())
    series = compute_ipcw(cohort, spec)
    idx, vals = series.flat()
    assert np.all(vals > 0)
    assert vals.max() < 1.5
    for interval in np.unique(idx):
        assert np.mean(vals[idx == interval]) == pytest.approx(1.0, abs=0.05)


def test_nearest_rank_percentile():
    vals = np.array([1.0, 1.0, 1.0, 1.0, 100.0])
    assert nearest_rank_percentile(vals, 80.0) == 1.0
    assert nearest_rank_percentile(vals, 100.0) == 100.0
    assert nearest_rank_percentile(np.array([3.0]), 50.0) == 3.0
    with pytest.raises(DataError):
        nearest_rank_percentile(vals, 0.0)
    with pytest.raises(DataError):
        nearest_rank_percentile(vals, 101.0)


def test_truncation_caps_at_pooled_percentile():
    series = _series([[1.0], [1.0], [1.0], [1.0], [100.0]])
    capped = truncate_weights(series, 80.0)
    _, vals = capped.flat()
    assert np.all(vals == 1.0)
    identity = truncate_weights(series, 100.0)
    _, vals = identity.flat()
    assert sorted(vals) == [1.0, 1.0, 1.0, 1.0, 100.0]
    equal = truncate_weights(_series([[2.0], [2.0]]), 50.0)
    _, vals = equal.flat()
    assert np.all(vals == 2.0)


def test_diagnostics_summaries_and_csv():
    series = _series([[1.0, 1.0], [1.0, 1.0]])
    diags = weight_diagnostics(series)
    assert [d.interval for d in diags] == [0, 1]
    for d in diags:
        assert d.max == d.mean == d.p99 == 1.0
        assert d.n_rows == 2
    text = diagnostics_csv(diags)
    assert text.splitlines()[0] == "interval,max,mean,p99,n_rows"
    assert len(text.splitlines()) == 3

    single = weight_diagnostics(_series([[4.0]]))
    assert single[0].max == 4.0 and single[0].n_rows == 1


def _cox_treatment_beta(cohort, series):
    rows = []
    for s in cohort.subjects:
        w = series.weight_for(s.subject_id)
        a = s.treatment_path()
        t_prev = 0.0
        for k in range(s.n_visits):
            t_out = min(float(k + 1), s.t_end)
            event = int(s.status == 1 and t_out == s.t_end)
            rows.append(IntervalRow(s.subject_id, t_prev, t_out, event,
                                    (float(a[k]),), float(w[k])))
            t_prev = t_out
            if t_out == s.t_end:
                break
    return fit_weighted_cox(rows).log_hazard_ratios[0]


def test_stabilization_leaves_cox_effect_nearly_unchanged(
        cohort_scenario1_n5000):
    # marginal numerator: stabilization rescales the weights without
    # changing the population the weighted estimating equations target
    cohort = cohort_scenario1_n5000
    stabilized = compute_iptw(cohort, default_weight_spec("msm_iptw_uncond"))
    unstabilized = WeightSeries("iptw", {
        key: entry_from_factors(key, np.ones(len(e.factors_den)),
                                e.factors_den)
        for key, e in stabilized.entries.items()})
    b_st = _cox_treatment_beta(cohort, stabilized)
    b_un = _cox_treatment_beta(cohort, unstabilized)
    assert b_st == pytest.approx(b_un, abs=0.02)
