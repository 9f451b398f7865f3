"""Simulation engine: data-generating mechanisms, truth oracle, scenario runner.

Cohorts follow a longitudinal mechanism with a shared frailty U, an
autoregressive confounder L, absorbing treatment assigned by a logistic
model in the current L, and event times from a conditional additive hazard
that is constant within visit intervals. The truth oracle generates a
large forced-arm trial (everyone always treated vs never treated) and reads
the true marginal curves off Kaplan-Meier estimates.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .cohort import Cohort, SubjectHistory, VisitRecord
from .errors import DataError, NumericalError, SeqTrialsError
from .estimators import MsmSpec, run_msm_iptw, run_sequential_trials
from .survfit import kaplan_meier
from .weights import (WeightModelSpec, baseline_covariates, current_covariates,
                      no_covariates)

DEFAULT_HORIZONS = (1.0, 2.0, 3.0, 4.0, 5.0)
METHODS = ("msm_iptw", "msm_iptw_uncond", "seq_trials")


@dataclass(frozen=True)
class ScenarioParams:
    """Parameters of the longitudinal data-generating mechanism.

    U ~ N(0, u_variance); L_0 ~ N(U, 1);
    L_k ~ N(delta0 + delta_L L_{k-1} + delta_A A_{k-1} + delta_T k + U, 1);
    logit P(A_k=1 | untreated, L_k) = gamma0 + gamma_A A_{k-1} + gamma_L L_k
    with treatment absorbing; hazard on [k, k+1) is
    max(0, alpha0 + alpha_A A_k + alpha_L L_k + alpha_U U).
    """

    delta0: float = 0.0
    delta_L: float = 0.8
    delta_A: float = -1.0
    delta_T: float = 0.1
    gamma0: float = -1.0
    gamma_A: float = 0.0
    gamma_L: float = 0.5
    alpha0: float = 0.2
    alpha_A: float = -0.04
    alpha_L: float = 0.015
    alpha_U: float = 0.015
    u_variance: float = 0.1
    n_visits: int = 5
    tau_max: float = 5.0

    def __post_init__(self):
        vals = dataclasses.asdict(self)
        for name, v in vals.items():
            if not np.isfinite(v):
                raise DataError(f"scenario parameter {name} is not finite")
        if self.alpha0 <= 0:
            raise DataError("alpha0 must be positive")
        if self.n_visits < 1 or self.tau_max <= 0:
            raise DataError("need n_visits >= 1 and tau_max > 0")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioParams":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"scenario file is not valid JSON: {exc}") from None
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown scenario parameters: {sorted(unknown)}")
        return cls(**data)


SCENARIOS = {
    1: ScenarioParams(),
    2: ScenarioParams(gamma0=-3.0),
    3: ScenarioParams(gamma_L=3.0),
}


@dataclass(frozen=True)
class GenStats:
    n_clamped_intervals: int
    n_person_intervals: int


def _expit(x):
    return 1.0 / (1.0 + np.exp(-x))


def _simulate_paths(params: ScenarioParams, n: int, rng: np.random.Generator,
                    forced: int | None = None, start: tuple | None = None):
    """Vectorized path simulation; returns (U, L, A, t_event, clamp count).

    ``forced`` pins every A_k (counterfactual arms); ``start`` supplies a
    pre-drawn (U, L_0) pair so arms can share their baseline.
    ``t_event`` is inf when no event occurs under the piecewise-constant
    hazard (a single Exponential(1) draw is inverted through the
    cumulative hazard).
    """
    K = params.n_visits
    if start is None:
        U = rng.normal(0.0, np.sqrt(params.u_variance), n)
        L0 = U + rng.standard_normal(n)
    else:
        U, L0 = start
    L = np.empty((n, K))
    A = np.empty((n, K), dtype=np.int64)
    L[:, 0] = L0
    for k in range(K):
        if k > 0:
            L[:, k] = (params.delta0 + params.delta_L * L[:, k - 1]
                       + params.delta_A * A[:, k - 1] + params.delta_T * k
                       + U + rng.standard_normal(n))
        if forced is not None:
            A[:, k] = forced
        else:
            prev = A[:, k - 1] if k > 0 else np.zeros(n, dtype=np.int64)
            p = _expit(params.gamma0 + params.gamma_A * prev
                       + params.gamma_L * L[:, k])
            draw = rng.random(n) < p
            # absorbing: once treated, stay treated
            A[:, k] = np.where(prev == 1, 1, draw.astype(np.int64))
    raw = (params.alpha0 + params.alpha_A * A + params.alpha_L * L
           + params.alpha_U * U[:, None])
    clamped = int(np.sum(raw < 0.0))
    h = np.maximum(raw, 0.0)
    E = rng.standard_exponential(n)
    t_event = np.full(n, np.inf)
    remaining = E.copy()
    for k in range(K):
        hk = h[:, k]
        with np.errstate(divide="ignore"):
            dt = np.where(hk > 0, remaining / np.where(hk > 0, hk, 1.0), np.inf)
        hit = (t_event == np.inf) & (dt < 1.0)
        t_event[hit] = k + dt[hit]
        remaining = np.where(t_event == np.inf, remaining - hk, remaining)
    return U, L, A, t_event, clamped


def generate_cohort(params: ScenarioParams, n: int, rng_seed: int,
                    return_stats: bool = False):
    """Simulate an observational cohort of n subjects.

    Subjects have a visit at every integer time they are alive before
    tau_max; follow-up ends at the event or at administrative censoring.
    """
    if n < 1:
        raise DataError("generate_cohort needs n >= 1")
    rng = np.random.default_rng(rng_seed)
    U, L, A, t_event, clamped = _simulate_paths(params, n, rng)
    tau = params.tau_max
    width = len(str(n - 1))
    subjects = []
    n_intervals = 0
    for i in range(n):
        sid = f"s{i:0{width}d}"
        te = t_event[i]
        t_end = min(te, tau)
        status = int(te < tau)
        n_vis = min(int(np.ceil(t_end)), params.n_visits)
        visits = tuple(VisitRecord(sid, k, int(A[i, k]), (float(L[i, k]),))
                       for k in range(n_vis))
        n_intervals += n_vis
        subjects.append(SubjectHistory(sid, visits, float(t_end), status))
    cohort = Cohort(tuple(subjects), ("L",), tau)
    if return_stats:
        return cohort, GenStats(clamped, n_intervals)
    return cohort


@dataclass(frozen=True)
class TruthCurves:
    """True marginal curves from a simulated large two-arm trial."""

    horizons: np.ndarray
    s1: np.ndarray
    s0: np.ndarray
    rd: np.ndarray
    n_large: int

    def to_csv(self) -> str:
        lines = ["tau,S1,S0,RD"]
        for i, t in enumerate(self.horizons):
            lines.append(f"{float(t)!r},{float(self.s1[i])!r},"
                         f"{float(self.s0[i])!r},{float(self.rd[i])!r}")
        return "\n".join(lines) + "\n"


def generate_truth(params: ScenarioParams, horizons=DEFAULT_HORIZONS,
                   n_large: int = 1_000_000, rng_seed: int = 2_000_000,
                   ) -> TruthCurves:
    """Marginal survival under always/never treated via forced-arm cloning.

    U and L_0 are drawn once and shared by both arms; covariates then
    evolve under the forced treatment and the true curves are Kaplan-Meier
    estimates within each arm.
    """
    rng = np.random.default_rng(rng_seed)
    U = rng.normal(0.0, np.sqrt(params.u_variance), n_large)
    L0 = U + rng.standard_normal(n_large)
    horizons = np.asarray(horizons, dtype=float)
    surv = {}
    for arm in (1, 0):
        _, _, _, t_event, _ = _simulate_paths(params, n_large, rng,
                                              forced=arm, start=(U, L0))
        t_end = np.minimum(t_event, params.tau_max)
        status = t_event < params.tau_max
        km = kaplan_meier((t_end, status))
        surv[arm] = np.asarray(km.at(horizons))
    return TruthCurves(horizons, surv[1], surv[0], surv[1] - surv[0], n_large)


def default_weight_spec(method: str) -> WeightModelSpec:
    """Weight models used by the scenario runner for each analysis method."""
    if method == "msm_iptw":
        # numerator conditions on L_0 with a separate slope per visit
        return WeightModelSpec(baseline_covariates(per_visit_slopes=True),
                               current_covariates())
    if method == "msm_iptw_uncond":
        return WeightModelSpec(no_covariates(), current_covariates())
    if method == "seq_trials":
        return WeightModelSpec(baseline_covariates(), current_covariates())
    raise DataError(f"unknown method {method!r}")


def default_msm_spec(method: str, family: str = "aalen",
                     horizons=DEFAULT_HORIZONS) -> MsmSpec:
    if method == "msm_iptw":
        return MsmSpec(family, "visit_lags", ("L",), tuple(horizons))
    if method == "msm_iptw_uncond":
        return MsmSpec(family, "visit_lags", (), tuple(horizons))
    if method == "seq_trials":
        return MsmSpec(family, "current", ("L",), tuple(horizons))
    raise DataError(f"unknown method {method!r}")


def analyze_cohort(cohort: Cohort, method: str, family: str = "aalen",
                   horizons=DEFAULT_HORIZONS,
                   truncation_percentile: float | None = None):
    """Run one analysis method on one cohort with the default specs."""
    msm = default_msm_spec(method, family, horizons)
    wspec = default_weight_spec(method)
    if method == "seq_trials":
        return run_sequential_trials(cohort, msm, wspec,
                                     truncation_percentile=truncation_percentile)
    return run_msm_iptw(cohort, msm, wspec,
                        truncation_percentile=truncation_percentile)


@dataclass(frozen=True)
class MethodPerformance:
    method: str
    n_reps_used: int
    n_failed: int
    mean_rd: np.ndarray
    sd_rd: np.ndarray
    bias: np.ndarray
    mc_error: np.ndarray
    mean_s1: np.ndarray
    sd_s1: np.ndarray
    mean_s0: np.ndarray
    sd_s0: np.ndarray
    rd_estimates: np.ndarray = field(repr=False)           # reps x horizons
    s1_estimates: np.ndarray = field(repr=False)
    s0_estimates: np.ndarray = field(repr=False)
    max_weight_by_interval: np.ndarray = field(repr=False)  # reps x intervals


@dataclass(frozen=True)
class PerformanceTable:
    """Aggregated simulation results across repetitions."""

    horizons: np.ndarray
    truth: TruthCurves
    methods: dict
    n: int
    reps: int
    seed: int
    variance_ratio: np.ndarray | None
    n_clamped_intervals: int
    n_person_intervals: int

    def to_csv(self) -> str:
        lines = ["method,tau,mean_rd,sd_rd,bias,mc_error,truth_rd,"
                 "mean_s1,sd_s1,mean_s0,sd_s0,variance_ratio"]
        for name, m in self.methods.items():
            for i, tau in enumerate(self.horizons):
                vr = (repr(float(self.variance_ratio[i]))
                      if self.variance_ratio is not None else "")
                vals = [m.mean_rd[i], m.sd_rd[i], m.bias[i], m.mc_error[i],
                        self.truth.rd[i], m.mean_s1[i], m.sd_s1[i],
                        m.mean_s0[i], m.sd_s0[i]]
                body = ",".join(repr(float(v)) for v in vals)
                lines.append(f"{name},{float(tau)!r},{body},{vr}")
        return "\n".join(lines) + "\n"

    def weights_csv(self) -> str:
        """Per-method, per-interval summary of the per-rep maximum weights."""
        lines = ["method,interval,max,mean,p99,n_rows"]
        for name, m in self.methods.items():
            arr = m.max_weight_by_interval
            for j in range(arr.shape[1]):
                col = arr[:, j]
                col = col[np.isfinite(col)]
                if len(col) == 0:
                    continue
                p99 = float(np.sort(col)[max(int(np.ceil(0.99 * len(col))), 1) - 1])
                lines.append(f"{name},{j},{float(col.max())!r},"
                             f"{float(col.mean())!r},{p99!r},{len(col)}")
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        out = {
            "n": self.n, "reps": self.reps, "seed": self.seed,
            "horizons": [float(t) for t in self.horizons],
            "truth": {"S1": self.truth.s1.tolist(),
                      "S0": self.truth.s0.tolist(),
                      "RD": self.truth.rd.tolist(),
                      "n_large": self.truth.n_large},
            "n_clamped_intervals": self.n_clamped_intervals,
            "n_person_intervals": self.n_person_intervals,
            "methods": {},
        }
        if self.variance_ratio is not None:
            out["variance_ratio"] = self.variance_ratio.tolist()
        for name, m in self.methods.items():
            out["methods"][name] = {
                "n_reps_used": m.n_reps_used, "n_failed": m.n_failed,
                "mean_rd": m.mean_rd.tolist(), "sd_rd": m.sd_rd.tolist(),
                "bias": m.bias.tolist(), "mc_error": m.mc_error.tolist(),
                "mean_s1": m.mean_s1.tolist(), "sd_s1": m.sd_s1.tolist(),
                "mean_s0": m.mean_s0.tolist(), "sd_s0": m.sd_s0.tolist(),
            }
        return out


def run_scenario(params: ScenarioParams, n: int, reps: int,
                 methods=METHODS, rng_seed: int = 1,
                 family: str = "aalen", horizons=DEFAULT_HORIZONS,
                 truth: TruthCurves | None = None,
                 n_truth: int = 1_000_000,
                 truncation_percentile: float | None = None,
                 ) -> PerformanceTable:
    """Monte-Carlo comparison of the analysis methods on one scenario.

    Deterministic given the seed: repetition r uses seed rng_seed + r.
    Per-repetition fitting failures are recorded; more than 5% failures
    for any method aborts the run.
    """
    if reps < 2:
        raise DataError("run_scenario needs reps >= 2")
    horizons = np.asarray(horizons, dtype=float)
    if truth is None:
        truth = generate_truth(params, horizons, n_large=n_truth,
                               rng_seed=rng_seed + 1_000_000)
    n_int = int(np.ceil(params.tau_max))
    H = len(horizons)
    est = {m: {"rd": [], "s1": [], "s0": [], "wmax": []} for m in methods}
    failures = {m: 0 for m in methods}
    clamped = person_intervals = 0
    for r in range(reps):
        cohort, stats = generate_cohort(params, n, rng_seed + r,
                                        return_stats=True)
        clamped += stats.n_clamped_intervals
        person_intervals += stats.n_person_intervals
        for m in methods:
            try:
                res = analyze_cohort(cohort, m, family, horizons,
                                     truncation_percentile)
            except SeqTrialsError:
                failures[m] += 1
                if failures[m] > 0.05 * reps:
                    raise NumericalError(
                        f"method {m}: more than 5% of repetitions failed "
                        f"({failures[m]} of {reps})") from None
                continue
            est[m]["rd"].append(res.rd)
            est[m]["s1"].append([res.s1.at(t) for t in horizons])
            est[m]["s0"].append([res.s0.at(t) for t in horizons])
            wmax = np.full(n_int, np.nan)
            for d in res.diagnostics:
                if d.interval < n_int:
                    wmax[d.interval] = d.max
            est[m]["wmax"].append(wmax)

    tables = {}
    for m in methods:
        rd = np.array(est[m]["rd"])
        if len(rd) < 2:
            raise NumericalError(f"method {m}: fewer than 2 usable repetitions")
        s1 = np.array(est[m]["s1"])
        s0 = np.array(est[m]["s0"])
        sd = rd.std(axis=0, ddof=1)
        tables[m] = MethodPerformance(
            m, len(rd), failures[m],
            rd.mean(axis=0), sd, rd.mean(axis=0) - truth.rd,
            sd / np.sqrt(len(rd)),
            s1.mean(axis=0), s1.std(axis=0, ddof=1),
            s0.mean(axis=0), s0.std(axis=0, ddof=1),
            rd, s1, s0, np.array(est[m]["wmax"]))
    vr = None
    if "msm_iptw" in tables and "seq_trials" in tables:
        v_msm = tables["msm_iptw"].sd_rd ** 2
        v_seq = tables["seq_trials"].sd_rd ** 2
        vr = v_msm / v_seq
    return PerformanceTable(horizons, truth, tables, n, reps, rng_seed, vr,
                            clamped, person_intervals)
