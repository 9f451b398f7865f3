"""Weighted logistic regression kernel (IRLS with step-halving).

All weight-model fitting in the package runs through
:func:`fit_weighted_logistic`. Case weights enter the Bernoulli
log-likelihood multiplicatively, so a weight of 2 is exactly equivalent to
duplicating the row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SeparationError, SingularDesignError

PROB_CLAMP = 1e-12
SCORE_TOL = 1e-8
LL_RELTOL = 1e-10
MAX_ITER = 100
SEPARATION_COEF = 30.0


@dataclass(frozen=True)
class LogisticFit:
    coefficients: np.ndarray
    converged: bool
    n_iterations: int
    log_likelihood: float


def _check_rank(design: np.ndarray, weights: np.ndarray,
                names: list[str] | None) -> None:
    wd = design * np.sqrt(weights)[:, None]
    p = design.shape[1]
    if np.linalg.matrix_rank(wd) == p:
        return
    # locate the first column dependent on its predecessors
    for j in range(1, p + 1):
        if np.linalg.matrix_rank(wd[:, :j]) < j:
            name = names[j - 1] if names else None
            raise SingularDesignError(j - 1, name)
    raise SingularDesignError(p - 1, names[p - 1] if names else None)


def _loglik(eta: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    # numerically stable: log(1+e^eta) via logaddexp
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def fit_weighted_logistic(design: np.ndarray, outcome: np.ndarray,
                          case_weights: np.ndarray | None = None,
                          column_names: list[str] | None = None,
                          ) -> LogisticFit:
    """Maximize the case-weighted Bernoulli log-likelihood.

    Convergence when the maximum absolute score is <= 1e-8 or the relative
    log-likelihood change is <= 1e-10, capped at 100 iterations.

    Raises :class:`SeparationError` on perfect separation (coefficients
    diverging past 30 without score convergence) and
    :class:`SingularDesignError` on a rank-deficient design.
    """
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(outcome, dtype=float)
    w = (np.ones(len(y)) if case_weights is None
         else np.asarray(case_weights, dtype=float))
    if not (len(y) == len(X) == len(w)):
        raise ValueError("design, outcome and weights must have equal length")
    if np.any(w < 0):
        raise ValueError("case weights must be non-negative")
    pos = w > 0
    if not (np.any(y[pos] == 1) and np.any(y[pos] == 0)):
        raise SeparationError("all positively weighted outcomes are in one class")
    _check_rank(X[pos], w[pos], column_names)

    beta = np.zeros(X.shape[1])
    eta = X @ beta
    ll = _loglik(eta, y, w)
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        p = 1.0 / (1.0 + np.exp(-eta))
        score = X.T @ (w * (y - p))
        if np.max(np.abs(score)) <= SCORE_TOL:
            converged = True
            break
        wirls = w * p * (1.0 - p)
        info = (X * wirls[:, None]).T @ X
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise SeparationError("Fisher information is singular; fitted "
                                  "probabilities have degenerated") from None
        # step-halving on likelihood decrease
        factor = 1.0
        for _ in range(30):
            cand = beta + factor * step
            eta_cand = X @ cand
            ll_cand = _loglik(eta_cand, y, w)
            if ll_cand >= ll - 1e-14 * abs(ll):
                break
            factor /= 2.0
        rel_change = abs(ll_cand - ll) / max(abs(ll), 1.0)
        beta, eta, ll = cand, eta_cand, ll_cand
        if np.max(np.abs(beta)) > SEPARATION_COEF:
            p = 1.0 / (1.0 + np.exp(-eta))
            score = X.T @ (w * (y - p))
            if np.max(np.abs(score)) > SCORE_TOL:
                raise SeparationError(f"coefficients diverging (max |coef| > "
                                      f"{SEPARATION_COEF}); data appear separated")
        if rel_change <= LL_RELTOL:
            p = 1.0 / (1.0 + np.exp(-eta))
            score = X.T @ (w * (y - p))
            converged = bool(np.max(np.abs(score)) <= 1e-6)
            if not converged:
                # the likelihood is concave, so a plateau that leaves the
                # score equations unsolved means the optimum is at infinity
                raise SeparationError("likelihood plateaued without score "
                                      "convergence; data appear separated")
            break
    return LogisticFit(beta, converged, it, ll)


def predict_prob(fit: LogisticFit, design_row: np.ndarray) -> np.ndarray | float:
    """Fitted probability for one design row or a matrix of rows.

    Probabilities are clamped to [1e-12, 1 - 1e-12] so that inverse
    probability ratios stay finite.
    """
    X = np.asarray(design_row, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != len(fit.coefficients):
        raise ValueError(f"design row width {X.shape[1]} does not match fit "
                         f"width {len(fit.coefficients)}")
    p = 1.0 / (1.0 + np.exp(-(X @ fit.coefficients)))
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(p[0]) if single else p
