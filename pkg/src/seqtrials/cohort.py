"""Longitudinal cohort data model and counting-process conversion.

A cohort is a collection of subjects, each with a sequence of visits at
integer times k = 0, 1, 2, ... carrying a binary treatment indicator and a
covariate vector, plus an end of follow-up (event or censoring). Fitters
consume the cohort in counting-process form: one interval row per visit,
covariates constant within the interval.

Conventions:
  - visit times are exactly the integers 0, 1, 2, ...;
  - an event at exactly a visit time k belongs to the preceding interval
    [k-1, k);
  - administrative censoring at ``tau_max`` truncates follow-up and forces
    the censoring status.
"""

from __future__ import annotations

import csv
import io
import os
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class VisitRecord:
    """One subject-visit: treatment and covariates observed at time k."""

    subject_id: str
    k: int
    treatment: int
    covariates: tuple[float, ...]


@dataclass(frozen=True)
class SubjectHistory:
    """One individual's visit sequence plus outcome.

    ``t_end`` is the observed end of follow-up (event or censoring time) on
    the visit timescale; ``status`` is 1 for an event, 0 for censoring.
    """

    subject_id: str
    visits: tuple[VisitRecord, ...]
    t_end: float
    status: int

    def __post_init__(self):
        if self.status not in (0, 1):
            raise DataError(f"subject {self.subject_id}: status must be 0 or 1, "
                            f"got {self.status}")
        if not self.visits:
            raise DataError(f"subject {self.subject_id}: no visits")
        ks = [v.k for v in self.visits]
        if ks != list(range(len(ks))):
            raise DataError(f"subject {self.subject_id}: visit indices must be "
                            f"consecutive starting at 0, got {ks}")
        if self.t_end <= ks[-1]:
            raise DataError(f"subject {self.subject_id}: visit after t_end "
                            f"(visit k={ks[-1]}, t_end={self.t_end})")
        widths = {len(v.covariates) for v in self.visits}
        if len(widths) != 1:
            raise DataError(f"subject {self.subject_id}: inconsistent covariate "
                            f"vector lengths {sorted(widths)}")
        for v in self.visits:
            if v.treatment not in (0, 1):
                raise DataError(f"subject {self.subject_id}: non-binary treatment "
                                f"{v.treatment} at visit {v.k}")

    @property
    def n_visits(self) -> int:
        return len(self.visits)

    def treatment_path(self) -> np.ndarray:
        return np.array([v.treatment for v in self.visits], dtype=np.int64)

    def covariate_matrix(self) -> np.ndarray:
        return np.array([v.covariates for v in self.visits], dtype=float)


@dataclass(frozen=True)
class Cohort:
    """Validated collection of subject histories."""

    subjects: tuple[SubjectHistory, ...]
    covariate_names: tuple[str, ...]
    tau_max: float

    def __post_init__(self):
        if self.tau_max <= 0:
            raise DataError(f"tau_max must be positive, got {self.tau_max}")
        seen = set()
        for s in self.subjects:
            if s.subject_id in seen:
                raise DataError(f"duplicate subject_id {s.subject_id!r}")
            seen.add(s.subject_id)
            if s.t_end > self.tau_max:
                raise DataError(f"subject {s.subject_id}: t_end={s.t_end} exceeds "
                                f"tau_max={self.tau_max}; apply administrative "
                                f"censoring first")
            if s.visits and len(s.visits[0].covariates) != len(self.covariate_names):
                raise DataError(f"subject {s.subject_id}: covariate vector length "
                                f"{len(s.visits[0].covariates)} != "
                                f"{len(self.covariate_names)} names")

    @property
    def n(self) -> int:
        return len(self.subjects)

    def baseline_covariates(self) -> np.ndarray:
        """n x p matrix of covariates observed at visit 0."""
        return np.array([s.visits[0].covariates for s in self.subjects], dtype=float)


@dataclass(frozen=True)
class IntervalRow:
    """One counting-process interval [t_in, t_out) with constant covariates."""

    subject_id: str
    t_in: float
    t_out: float
    event: int
    covariates: tuple[float, ...]
    weight: float = 1.0

    def __post_init__(self):
        if not self.t_in < self.t_out:
            raise DataError(f"subject {self.subject_id}: empty interval "
                            f"[{self.t_in}, {self.t_out})")


def administratively_censor(subject: SubjectHistory, tau_max: float) -> SubjectHistory:
    """Truncate follow-up at tau_max, dropping visits at k >= tau_max."""
    if subject.t_end <= tau_max:
        return subject
    visits = tuple(v for v in subject.visits if v.k < tau_max)
    return SubjectHistory(subject.subject_id, visits, float(tau_max), 0)


def load_cohort(visits_file, subjects_file, tau_max: float) -> Cohort:
    """Load and validate a cohort from two CSV sources.

    ``visits_file`` has header ``id,k,A,<cov1>,...,<covp>``; ``subjects_file``
    has header ``id,t_end,status``. Both arguments accept a path or an open
    text stream. Administrative censoring at ``tau_max`` is applied.
    """
    visit_rows, covariate_names = _read_visits(visits_file)
    outcome_rows = _read_subjects(subjects_file)

    subjects = []
    for sid, (t_end, status, line_no) in outcome_rows.items():
        if sid not in visit_rows:
            raise DataError(f"subject {sid} (subjects.csv line {line_no}): "
                            f"no visits recorded")
        visits = tuple(visit_rows.pop(sid))
        try:
            subj = SubjectHistory(sid, visits, t_end, status)
        except DataError as exc:
            raise DataError(f"{exc} (subjects.csv line {line_no})") from None
        subjects.append(administratively_censor(subj, tau_max))
    if visit_rows:
        sid = next(iter(visit_rows))
        raise DataError(f"subject {sid}: visits present but no subjects.csv row")
    return Cohort(tuple(subjects), covariate_names, float(tau_max))


def save_cohort(cohort: Cohort, visits_file, subjects_file) -> None:
    """Serialize a cohort to the two-CSV format read by :func:`load_cohort`."""
    with _open_w(visits_file) as fh:
        fh.write("id,k,A," + ",".join(cohort.covariate_names) + "\n")
        for s in cohort.subjects:
            for v in s.visits:
                covs = ",".join(repr(c) for c in v.covariates)
                fh.write(f"{s.subject_id},{v.k},{v.treatment},{covs}\n")
    with _open_w(subjects_file) as fh:
        fh.write("id,t_end,status\n")
        for s in cohort.subjects:
            fh.write(f"{s.subject_id},{s.t_end!r},{s.status}\n")


CovariateBuilder = Callable[[SubjectHistory, int], Sequence[float]]


def observed_covariates(subject: SubjectHistory, k: int) -> tuple[float, ...]:
    """Default builder: covariates as observed at visit k."""
    return subject.visits[k].covariates


def to_interval_rows(cohort: Cohort,
                     covariate_builder: CovariateBuilder = observed_covariates,
                     ) -> list[IntervalRow]:
    """Convert a cohort to counting-process intervals.

    Each subject yields one row per visit, covering [k, min(k+1, t_end));
    the final row carries the event flag iff status == 1. Output is sorted
    by subject_id then t_in.
    """
    rows: list[IntervalRow] = []
    for s in sorted(cohort.subjects, key=lambda s: s.subject_id):
        last = s.n_visits - 1
        for v in s.visits:
            t_out = min(v.k + 1.0, s.t_end)
            event = int(s.status == 1 and v.k == last)
            rows.append(IntervalRow(s.subject_id, float(v.k), t_out, event,
                                    tuple(covariate_builder(s, v.k))))
    return rows


def _open_r(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    return _noclose(source)


def _open_w(target):
    if isinstance(target, (str, os.PathLike)):
        return open(target, "w", newline="", encoding="utf-8")
    return _noclose(target)


class _noclose:
    """Context wrapper that leaves caller-owned streams open."""

    def __init__(self, stream):
        self._stream = stream

    def __enter__(self):
        return self._stream

    def __exit__(self, *exc):
        return False


def _read_visits(source):
    with _open_r(source) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["id", "k", "A"]:
            raise DataError("visits file: expected header id,k,A,<covariates>")
        covariate_names = tuple(header[3:])
        per_subject: dict[str, list[VisitRecord]] = {}
        seen: set[tuple[str, int]] = set()
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"visits file line {line_no}: expected "
                                f"{len(header)} fields, got {len(row)}")
            sid = row[0]
            try:
                k = int(row[1])
                a = int(row[2])
                covs = tuple(float(x) for x in row[3:])
            except ValueError as exc:
                raise DataError(f"subject {sid} (visits file line {line_no}): "
                                f"malformed numeric field: {exc}") from None
            if k < 0:
                raise DataError(f"subject {sid} (visits file line {line_no}): "
                                f"negative visit index {k}")
            if a not in (0, 1):
                raise DataError(f"subject {sid} (visits file line {line_no}): "
                                f"non-binary treatment {row[2]}")
            if (sid, k) in seen:
                raise DataError(f"subject {sid} (visits file line {line_no}): "
                                f"duplicate visit k={k}")
            seen.add((sid, k))
            per_subject.setdefault(sid, []).append(VisitRecord(sid, k, a, covs))
    for sid, visits in per_subject.items():
        visits.sort(key=lambda v: v.k)
        ks = [v.k for v in visits]
        if ks != list(range(len(ks))):
            raise DataError(f"subject {sid}: gap in visit indices {ks}")
    return per_subject, covariate_names


def _read_subjects(source):
    with _open_r(source) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "t_end", "status"]:
            raise DataError("subjects file: expected header id,t_end,status")
        out: dict[str, tuple[float, int, int]] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"subjects file line {line_no}: expected 3 fields")
            sid = row[0]
            if sid in out:
                raise DataError(f"subject {sid} (subjects file line {line_no}): "
                                f"duplicate subject row")
            try:
                t_end = float(row[1])
                status = int(row[2])
            except ValueError as exc:
                raise DataError(f"subject {sid} (subjects file line {line_no}): "
                                f"malformed numeric field: {exc}") from None
            out[sid] = (t_end, status, line_no)
    return out
