"""Cohort loading, validation, and counting-process conversion."""

import io

import numpy as np
import pytest

from seqtrials import DataError
from seqtrials.cohort import (Cohort, IntervalRow, SubjectHistory, VisitRecord,
                              administratively_censor, load_cohort,
                              save_cohort, to_interval_rows)


def _load(visits_text, subjects_text, tau_max=5.0):
    return load_cohort(io.StringIO(visits_text), io.StringIO(subjects_text),
                       tau_max)


VISITS_OK = ("id,k,A,L\n"
             "a,0,0,1.5\na,1,1,0.5\na,2,1,-0.5\na,3,1,0.25\na,4,1,0.0\n")
SUBJECTS_OK = "id,t_end,status\na,5.0,0\n"


def test_minimal_cohort_loads():
    cohort = _load(VISITS_OK, SUBJECTS_OK)
    assert cohort.n == 1
    assert cohort.subjects[0].n_visits == 5
    assert cohort.covariate_names == ("L",)


def test_event_subject_and_visit_after_t_end():
    visits = "id,k,A,L\nb,0,0,1.0\nb,1,0,1.0\nb,2,1,1.0\n"
    cohort = _load(visits, "id,t_end,status\nb,2.3,1\n")
    assert cohort.subjects[0].t_end == 2.3
    bad = visits + "b,3,1,1.0\n"
    with pytest.raises(DataError, match="t_end"):
        _load(bad, "id,t_end,status\nb,2.3,1\n")


def test_administrative_censoring_truncates():
    s = SubjectHistory("c", tuple(VisitRecord("c", k, 0, (0.0,))
                                  for k in range(7)), 7.1, 1)
    censored = administratively_censor(s, 5.0)
    assert censored.t_end == 5.0
    assert censored.status == 0
    assert censored.n_visits == 5


def test_loader_applies_administrative_censoring():
    visits = "id,k,A,L\nd,0,0,1.0\nd,1,0,1.0\n"
    cohort = _load(visits, "id,t_end,status\nd,7.1,1\n", tau_max=5.0)
    assert cohort.subjects[0].t_end == 5.0
    assert cohort.subjects[0].status == 0


@pytest.mark.parametrize("visits,subjects,pattern", [
    ("id,k,A,L\ne,0,0,1.0\ne,0,1,1.0\n", "id,t_end,status\ne,2.0,0\n",
     "duplicate visit"),
    ("id,k,A,L\ne,0,0,1.0\ne,2,1,1.0\n", "id,t_end,status\ne,3.0,0\n",
     "gap"),
    ("id,k,A,L\ne,0,2,1.0\n", "id,t_end,status\ne,2.0,0\n", "non-binary"),
    ("id,k,A,L\ne,0,0,oops\n", "id,t_end,status\ne,2.0,0\n", "malformed"),
    ("id,k,A,L\ne,0,0,1.0\n", "id,t_end,status\ne,2.0,5\n", "status"),
    ("id,k,A,L\ne,0,0,1.0\n", "id,t_end,status\nf,2.0,0\n", "no subjects.csv|no visits"),
    ("id,k\n", "id,t_end,status\n", "expected header"),
])
def test_loader_rejects_malformed_input(visits, subjects, pattern):
    with pytest.raises(DataError, match=pattern):
        _load(visits, subjects)


def test_round_trip_save_load():
    cohort = _load(VISITS_OK + "b,0,1,0.125\n",
                   SUBJECTS_OK + "b,0.75,1\n")
    v, s = io.StringIO(), io.StringIO()
    save_cohort(cohort, v, s)
    v.seek(0), s.seek(0)
    again = load_cohort(v, s, cohort.tau_max)
    assert again == cohort


def test_interval_rows_event_attribution():
    visits = "id,k,A,L\ng,0,0,1.0\ng,1,0,1.0\ng,2,0,1.0\ng,3,1,1.0\n"
    cohort = _load(visits, "id,t_end,status\ng,3.4,1\n")
    rows = to_interval_rows(cohort)
    assert [(r.t_in, r.t_out, r.event) for r in rows] == [
        (0.0, 1.0, 0), (1.0, 2.0, 0), (2.0, 3.0, 0), (3.0, 3.4, 1)]


def test_interval_rows_event_exactly_at_visit_time():
    visits = "id,k,A,L\nh,0,0,1.0\nh,1,0,1.0\nh,2,0,1.0\n"
    cohort = _load(visits, "id,t_end,status\nh,3.0,1\n")
    rows = to_interval_rows(cohort)
    assert len(rows) == 3
    assert rows[-1].t_out == 3.0 and rows[-1].event == 1


def test_interval_rows_full_survivors():
    lines = ["id,k,A,L"]
    subj = ["id,t_end,status"]
    for i in range(4):
        for k in range(5):
            lines.append(f"s{i},{k},0,0.0")
        subj.append(f"s{i},5.0,0")
    cohort = _load("\n".join(lines) + "\n", "\n".join(subj) + "\n")
    rows = to_interval_rows(cohort)
    assert len(rows) == 20
    assert all(r.event == 0 for r in rows)


def test_interval_lengths_sum_to_t_end():
    visits = "id,k,A,L\nj,0,0,1.0\nj,1,1,2.0\nj,2,1,1.0\n"
    cohort = _load(visits, "id,t_end,status\nj,2.6,1\n")
    rows = to_interval_rows(cohort)
    assert sum(r.t_out - r.t_in for r in rows) == pytest.approx(2.6, abs=1e-12)


def test_interval_rows_sorted_and_deterministic():
    visits = ("id,k,A,L\nz,0,0,1.0\nz,1,0,1.0\n"
              "a,0,1,2.0\n")
    cohort = _load(visits, "id,t_end,status\nz,2.0,0\na,1.0,1\n")
    rows = to_interval_rows(cohort)
    keys = [(r.subject_id, r.t_in) for r in rows]
    assert keys == sorted(keys)
    assert rows == to_interval_rows(cohort)


def test_interval_row_rejects_empty_interval():
    with pytest.raises(DataError):
        IntervalRow("x", 1.0, 1.0, 0, ())


def test_cohort_rejects_duplicates_and_bad_tau():
    s = SubjectHistory("a", (VisitRecord("a", 0, 0, (0.0,)),), 1.0, 0)
    with pytest.raises(DataError, match="duplicate"):
        Cohort((s, s), ("L",), 5.0)
    with pytest.raises(DataError, match="tau_max"):
        Cohort((s,), ("L",), 0.0)
    with pytest.raises(DataError, match="exceeds"):
        Cohort((SubjectHistory("b", (VisitRecord("b", 0, 0, (0.0,)),), 9.0, 0),),
               ("L",), 5.0)


def test_subject_history_paths():
    s = SubjectHistory("a", (VisitRecord("a", 0, 0, (1.0, 2.0)),
                             VisitRecord("a", 1, 1, (3.0, 4.0))), 2.0, 0)
    assert np.array_equal(s.treatment_path(), np.array([0, 1]))
    assert np.array_equal(s.covariate_matrix(),
                          np.array([[1.0, 2.0], [3.0, 4.0]]))
