"""Shared fixtures: cached truth curves and Monte-Carlo scenario runs.

The expensive acceptance inputs are computed once per session. Two tiers
are supported: the default smoke tier (fast, widened tolerance where the
acceptance criteria allow it) and a full tier enabled by setting the
environment variable SEQTRIALS_ACCEPT_FULL=1 (1000 repetitions, strict
tolerances, tens of minutes).
"""

from __future__ import annotations

import os

import numpy as np
import pytest

from seqtrials import SCENARIOS, generate_cohort, generate_truth, run_scenario

FULL_TIER = os.environ.get("SEQTRIALS_ACCEPT_FULL") == "1"
TRUTH_N = int(os.environ.get("SEQTRIALS_TRUTH_N", "1000000"))
HORIZONS = (1.0, 2.0, 3.0, 4.0, 5.0)

REPS_SCENARIO1 = 1000 if FULL_TIER else 200
REPS_SCENARIO2 = 1000 if FULL_TIER else 600
MEAN_RD_TOL = 0.010 if FULL_TIER else 0.015


@pytest.fixture(scope="session")
def truth_scenario1():
    return generate_truth(SCENARIOS[1], HORIZONS, n_large=TRUTH_N)


@pytest.fixture(scope="session")
def truth_scenario2():
    return generate_truth(SCENARIOS[2], HORIZONS, n_large=TRUTH_N)


@pytest.fixture(scope="session")
def table_scenario1(truth_scenario1):
    return run_scenario(SCENARIOS[1], n=1000, reps=REPS_SCENARIO1,
                        methods=("msm_iptw", "seq_trials"), rng_seed=1,
                        horizons=HORIZONS, truth=truth_scenario1)


@pytest.fixture(scope="session")
def table_scenario2(truth_scenario2):
    return run_scenario(SCENARIOS[2], n=1000, reps=REPS_SCENARIO2,
                        methods=("msm_iptw", "seq_trials"), rng_seed=1,
                        horizons=HORIZONS, truth=truth_scenario2)


@pytest.fixture(scope="session")
def cohort_scenario1_n1000():
    return generate_cohort(SCENARIOS[1], 1000, 17)


@pytest.fixture(scope="session")
def cohort_scenario1_n5000():
    return generate_cohort(SCENARIOS[1], 5000, 29)
