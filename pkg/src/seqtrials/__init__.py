"""Causal survival analysis with longitudinal treatments.

Implements and compares two approaches to estimating the effect of
sustained treatment initiation on survival from observational data with
time-dependent confounding: marginal structural models fitted by inverse
probability of treatment weighting, and an emulated sequence of trials
starting at every visit with artificial censoring at treatment deviation.
"""

from .cohort import (Cohort, IntervalRow, SubjectHistory, VisitRecord,
                     administratively_censor, load_cohort, save_cohort,
                     to_interval_rows)
from .errors import (DataError, NumericalError, PositivityError,
                     SeparationError, SeqTrialsError, SingularDesignError)
from .estimators import (MarginalResults, MsmSpec, TrialRow, bootstrap_ci,
                         expand_sequential_trials, run_msm_iptw,
                         run_sequential_trials, standardize,
                         test_trial_homogeneity)
from .glm import LogisticFit, fit_weighted_logistic, predict_prob
from .oracle import (TreeCounts, combine_inverse_variance, np_msm_surv1,
                     np_msm_surv2, np_seq_surv1, np_seq_surv2,
                     np_trial1_standardized, np_trial1_surv, tree_counts)
from .simgen import (SCENARIOS, PerformanceTable, ScenarioParams, TruthCurves,
                     analyze_cohort, default_msm_spec, default_weight_spec,
                     generate_cohort, generate_truth, run_scenario)
from .survfit import (AalenFit, CoxFit, SurvivalCurve, cox_robust_variance,
                      fit_weighted_aalen, fit_weighted_cox, kaplan_meier,
                      survival_from_aalen, survival_from_cox)
from .weights import (WeightModelSpec, WeightSeries, baseline_covariates,
                      compute_ipacw, compute_ipcw, compute_iptw,
                      current_covariates, no_covariates, truncate_weights,
                      weight_diagnostics)

__version__ = "0.1.0"
