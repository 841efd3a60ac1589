"""Survival-analysis statistics: concordance, Kaplan-Meier, log-rank,
Breslow baseline hazard, IPCW integrated Brier score, and a Newton-Raphson
Cox proportional-hazards fitter.

All estimators take an :class:`~survfuse.survloss.Outcomes` and plain numpy
arrays; nothing here depends on the neural model, so the module doubles as a
free-standing toolkit for evaluating any risk score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc

from .errors import (
    ConvergenceError,
    DomainError,
    NoEventsError,
    SeparationError,
    ShapeError,
    UndefinedMetricError,
)
from .survloss import Outcomes


# ---------------------------------------------------------------------------
# concordance
# ---------------------------------------------------------------------------

def c_index(risks, outcomes: Outcomes) -> float:
    """Harrell's concordance index.

    A pair (i, j) is comparable when t_i < t_j and subject i had an event;
    it is concordant when risk_i > risk_j. Tied risks count 0.5. Pairs with
    tied times are not comparable, nor are pairs whose earlier subject was
    censored.

    Raises UndefinedMetricError when no pair is comparable.
    """
    r = np.asarray(risks, dtype=np.float64).ravel()
    if r.size != len(outcomes):
        raise ShapeError(f"c_index: {r.size} risks vs {len(outcomes)} outcomes")
    t = outcomes.time
    comparable = (t[:, None] < t[None, :]) & outcomes.event[:, None]
    n_comparable = int(comparable.sum())
    if n_comparable == 0:
        raise UndefinedMetricError("c_index: no comparable pairs")
    concordant = int((comparable & (r[:, None] > r[None, :])).sum())
    tied = int((comparable & (r[:, None] == r[None, :])).sum())
    return (concordant + 0.5 * tied) / n_comparable


# ---------------------------------------------------------------------------
# Kaplan-Meier
# ---------------------------------------------------------------------------

@dataclass
class SurvCurve:
    """Step estimate of a survival function.

    times: ascending distinct event times.
    surv_prob: S(t) immediately after each event time (non-increasing,
        starts <= 1, can reach 0 when the largest time is an event).
    at_risk: number at risk just before each event time.
    n_events: events at each time.
    greenwood_var: Greenwood variance of S at each time (0 once the curve
        is absorbed at S = 0).
    """

    times: np.ndarray
    surv_prob: np.ndarray
    at_risk: np.ndarray
    n_events: np.ndarray
    greenwood_var: np.ndarray = field(default=None, repr=False)

    def evaluate(self, t, left: bool = False) -> np.ndarray:
        """S(t) (right-continuous) or S(t-) when ``left`` is set."""
        t = np.asarray(t, dtype=np.float64)
        side = "left" if left else "right"
        idx = np.searchsorted(self.times, t, side=side)
        padded = np.concatenate(([1.0], self.surv_prob))
        return padded[idx]

    def confidence_bands(self, z: float = 1.959963984540054):
        """Pointwise Greenwood bands S +/- z*sqrt(var), clipped to [0, 1]."""
        se = np.sqrt(np.where(np.isfinite(self.greenwood_var), self.greenwood_var, 0.0))
        lo = np.clip(self.surv_prob - z * se, 0.0, 1.0)
        hi = np.clip(self.surv_prob + z * se, 0.0, 1.0)
        return lo, hi


def kaplan_meier(outcomes: Outcomes) -> SurvCurve:
    """Product-limit survival estimate.

    S(t) = prod_{t_k <= t} (1 - d_k / n_k) over distinct event times t_k;
    censored subjects leave the risk set after their recorded time. With no
    events the curve is identically 1 and carries no step times.
    """
    if len(outcomes) == 0:
        raise DomainError("kaplan_meier: empty outcomes")
    t = outcomes.time
    event_times = np.unique(t[outcomes.event])
    at_risk = np.array([(t >= u).sum() for u in event_times], dtype=np.int64)
    d = np.array(
        [((t == u) & outcomes.event).sum() for u in event_times], dtype=np.int64
    )
    surv = np.cumprod(1.0 - d / at_risk)
    # Greenwood: var(S) = S^2 * sum d/(n(n-d)). Once the curve is absorbed
    # at 0 the inner sum diverges but S^2 wins: the band collapses to 0.
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(at_risk > d, d / (at_risk * (at_risk - d)), np.inf)
        gvar = np.where(surv > 0, surv**2 * np.cumsum(terms), 0.0)
    return SurvCurve(event_times, surv, at_risk, d, gvar)


# ---------------------------------------------------------------------------
# log-rank test
# ---------------------------------------------------------------------------

def logrank_test(group_a: Outcomes, group_b: Outcomes):
    """Two-group log-rank test.

    At each distinct pooled event time the observed events in group A are
    compared with their expectation under a shared hazard, with the
    hypergeometric variance. Returns (chi_square, p_value); the p-value is
    the chi-square(1) tail probability via the regularized incomplete gamma
    function.
    """
    if len(group_a) == 0 or len(group_b) == 0:
        raise UndefinedMetricError("logrank_test: a group is empty")
    t_a, e_a = group_a.time, group_a.event
    t_b, e_b = group_b.time, group_b.event
    pooled_events = np.unique(np.concatenate([t_a[e_a], t_b[e_b]]))
    if pooled_events.size == 0:
        raise UndefinedMetricError("logrank_test: no events in either group")

    observed_minus_expected = 0.0
    variance = 0.0
    for u in pooled_events:
        n_a = int((t_a >= u).sum())
        n_b = int((t_b >= u).sum())
        d_a = int(((t_a == u) & e_a).sum())
        d_b = int(((t_b == u) & e_b).sum())
        n = n_a + n_b
        d = d_a + d_b
        observed_minus_expected += d_a - d * n_a / n
        if n > 1:
            variance += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1)
    if variance == 0.0:
        return 0.0, 1.0
    chi2 = observed_minus_expected**2 / variance
    return float(chi2), chi2_sf(chi2)


def chi2_sf(chi2: float, df: int = 1) -> float:
    """Upper tail of the chi-square distribution, P(X > chi2)."""
    return float(gammaincc(df / 2.0, chi2 / 2.0))


def median_split(risks):
    """Boolean high-risk mask: risk strictly above the median."""
    r = np.asarray(risks, dtype=np.float64).ravel()
    return r > np.median(r)


# ---------------------------------------------------------------------------
# Breslow baseline hazard and induced survival functions
# ---------------------------------------------------------------------------

@dataclass
class BaselineHazard:
    """Cumulative baseline hazard H0 as a right-continuous step function."""

    times: np.ndarray
    increments: np.ndarray

    def cumulative(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.times, t, side="right")
        padded = np.concatenate(([0.0], np.cumsum(self.increments)))
        return padded[idx]


def breslow_baseline(log_hazards, outcomes: Outcomes) -> BaselineHazard:
    """Breslow estimate of the cumulative baseline hazard.

    The jump at event time t_k is d_k / sum_{j: t_j >= t_k} exp(z_j).
    Survival for a subject with log-hazard z is then
    S(t) = exp(-H0(t) * exp(z)).
    """
    z = np.asarray(log_hazards, dtype=np.float64).ravel()
    if z.size != len(outcomes):
        raise ShapeError(f"breslow_baseline: {z.size} scores vs {len(outcomes)} outcomes")
    t = outcomes.time
    event_times = np.unique(t[outcomes.event])
    # shift exponentials for stability; the shift cancels in the ratio below
    shift = z.max() if z.size else 0.0
    w = np.exp(z - shift)
    increments = np.empty(event_times.size)
    for k, u in enumerate(event_times):
        d = int(((t == u) & outcomes.event).sum())
        denom = w[t >= u].sum()
        increments[k] = d / denom * np.exp(-shift)
    return BaselineHazard(event_times, increments)


def cox_survival_fn(baseline: BaselineHazard, log_hazards):
    """Per-subject survival functions S_i(t) = exp(-H0(t) exp(z_i)).

    Returns a callable mapping a 1-D time grid to an (n_subjects, n_times)
    matrix of survival probabilities.
    """
    z = np.asarray(log_hazards, dtype=np.float64).ravel()

    def surv(times):
        h0 = baseline.cumulative(np.asarray(times, dtype=np.float64))
        return np.exp(-np.outer(np.exp(z), h0))

    return surv


# ---------------------------------------------------------------------------
# integrated Brier score (Graf, IPCW)
# ---------------------------------------------------------------------------

@dataclass
class IbsResult:
    value: float
    truncated: bool
    effective_horizon: float
    n_grid: int

    def __float__(self):
        return self.value


def integrated_brier(surv_fn, outcomes: Outcomes, horizon: float,
                     n_grid: int = 100) -> IbsResult:
    """Integrated Brier score with inverse-probability-of-censoring weights.

    ``surv_fn`` maps a 1-D time grid to an (n_subjects, n_times) matrix of
    predicted survival probabilities. At each grid time t the score is

        BS(t) = mean_i [ S_i(t)^2 * 1{T_i <= t, event} / G(T_i-)
                       + (1 - S_i(t))^2 * 1{T_i > t} / G(t) ]

    where G is the Kaplan-Meier estimate of the censoring distribution;
    subjects censored before t contribute zero. BS is averaged over an
    evenly spaced grid of ``n_grid`` points in (0, horizon] by the
    trapezoidal rule. If G reaches 0 inside the grid the average is
    truncated at the last positive point and the result is flagged.
    """
    if horizon <= 0:
        raise DomainError("integrated_brier: horizon must be positive")
    grid = horizon * np.arange(1, n_grid + 1) / n_grid
    censor_km = kaplan_meier(Outcomes(outcomes.time, ~outcomes.event))
    g_at_grid = censor_km.evaluate(grid)

    truncated = False
    if (g_at_grid <= 0).any():
        keep = g_at_grid > 0
        if not keep.any():
            raise DomainError("integrated_brier: censoring survival is 0 on the whole grid")
        grid = grid[keep]
        g_at_grid = g_at_grid[keep]
        truncated = True
    if grid.size < 2:
        raise DomainError("integrated_brier: fewer than 2 usable grid points")

    s = np.asarray(surv_fn(grid), dtype=np.float64)
    if s.shape != (len(outcomes), grid.size):
        raise ShapeError(
            f"integrated_brier: surv_fn returned {s.shape}, "
            f"expected {(len(outcomes), grid.size)}"
        )
    t = outcomes.time
    g_before_event = censor_km.evaluate(t, left=True)

    event_weight = np.where(outcomes.event, 1.0 / g_before_event, 0.0)
    past_event = outcomes.event[:, None] & (t[:, None] <= grid[None, :])
    still_alive = t[:, None] > grid[None, :]
    bs = (
        s**2 * past_event * event_weight[:, None]
        + (1.0 - s) ** 2 * still_alive / g_at_grid[None, :]
    ).mean(axis=0)

    value = float(np.trapezoid(bs, grid) / (grid[-1] - grid[0]))
    return IbsResult(value, truncated, float(grid[-1]), int(grid.size))


# ---------------------------------------------------------------------------
# Cox proportional hazards (clinical baseline)
# ---------------------------------------------------------------------------

@dataclass
class CoxPHModel:
    """Fitted proportional-hazards model over a covariate matrix."""

    coefficients: np.ndarray
    baseline: BaselineHazard
    log_likelihood: float
    n_iter: int
    score_norm: float

    def predict_log_hazard(self, covariates) -> np.ndarray:
        x = np.asarray(covariates, dtype=np.float64)
        return x @ self.coefficients


def _partial_likelihood_terms(x, beta, outcomes):
    """Log partial likelihood, score and negative Hessian (Breslow ties)."""
    n, p = x.shape
    eta = x @ beta
    shift = eta.max()
    w = np.exp(eta - shift)

    order = np.argsort(outcomes.time, kind="stable")
    ts = outcomes.time[order]
    ws = w[order]
    xs = x[order]

    # reverse cumulative sums; tie groups share the value at their first index
    s0 = np.cumsum(ws[::-1])[::-1]
    s1 = np.cumsum((ws[:, None] * xs)[::-1], axis=0)[::-1]
    s2 = np.cumsum((ws[:, None, None] * (xs[:, :, None] * xs[:, None, :]))[::-1], axis=0)[::-1]
    first_of_tie = np.searchsorted(ts, ts, side="left")

    loglik = 0.0
    score = np.zeros(p)
    neg_hess = np.zeros((p, p))
    for pos in np.flatnonzero(outcomes.event[order]):
        j = first_of_tie[pos]
        denom = s0[j]
        mean_x = s1[j] / denom
        loglik += (eta[order][pos] - shift) - np.log(denom)
        score += xs[pos] - mean_x
        neg_hess += s2[j] / denom - np.outer(mean_x, mean_x)
    return loglik, score, neg_hess


def fit_coxph(covariates, outcomes: Outcomes, tol: float = 1e-8,
              max_iter: int = 100) -> CoxPHModel:
    """Newton-Raphson fit of the Cox model on the Breslow partial likelihood.

    Iterates until the score's max absolute component drops to ``tol``,
    halving the step whenever the partial likelihood would decrease.
    Raises SeparationError on a singular Hessian and ConvergenceError
    (carrying the last iterate) at the iteration limit. Constant covariate
    columns are rejected up front: they are unidentifiable.
    """
    x = np.asarray(covariates, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != len(outcomes):
        raise ShapeError(
            f"fit_coxph: covariates {x.shape} vs {len(outcomes)} outcomes"
        )
    constant = np.ptp(x, axis=0) == 0
    if constant.any():
        raise DomainError(
            f"fit_coxph: constant covariate column(s) {np.flatnonzero(constant).tolist()}"
        )
    if outcomes.n_events == 0:
        raise NoEventsError("fit_coxph: no events")

    beta = np.zeros(x.shape[1])
    loglik, score, neg_hess = _partial_likelihood_terms(x, beta, outcomes)
    for iteration in range(1, max_iter + 1):
        if np.abs(score).max() <= tol:
            baseline = breslow_baseline(x @ beta, outcomes)
            return CoxPHModel(beta, baseline, loglik, iteration - 1,
                              float(np.abs(score).max()))
        try:
            step = np.linalg.solve(neg_hess, score)
        except np.linalg.LinAlgError as exc:
            raise SeparationError(
                f"fit_coxph: singular Hessian at iteration {iteration}"
            ) from exc
        if not np.isfinite(step).all():
            raise SeparationError(f"fit_coxph: non-finite step at iteration {iteration}")

        # step halving keeps the partial likelihood non-decreasing
        for _ in range(40):
            candidate = beta + step
            new_loglik, new_score, new_neg_hess = _partial_likelihood_terms(
                x, candidate, outcomes
            )
            if new_loglik >= loglik or np.abs(step).max() < 1e-14:
                break
            step = step / 2.0
        else:
            raise ConvergenceError(
                f"fit_coxph: step halving failed at iteration {iteration}",
                last_iterate=beta,
            )
        beta, loglik, score, neg_hess = candidate, new_loglik, new_score, new_neg_hess

    if np.abs(score).max() <= tol:
        baseline = breslow_baseline(x @ beta, outcomes)
        return CoxPHModel(beta, baseline, loglik, max_iter, float(np.abs(score).max()))
    raise ConvergenceError(
        f"fit_coxph: no convergence in {max_iter} iterations "
        f"(max |score| = {np.abs(score).max():.3e})",
        last_iterate=beta,
    )
