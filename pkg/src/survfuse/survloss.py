"""Cox negative log partial likelihood over a batch, with analytic gradients.

The loss for a batch with log-hazards ``z_i``, event flags ``d_i`` and risk
sets ``R_i = {j : t_j >= t_i}`` (Breslow convention: tied event times share
the full tied risk set) is

    L = - sum_i d_i * ( z_i - log sum_{j in R_i} exp(z_j) ) / sum_i d_i

Censored subjects contribute only through the risk sets of earlier events.
The gradient with respect to each log-hazard is exact:

    dL/dz_k = -( d_k - sum_{i: d_i=1, k in R_i} exp(z_k) / sum_{j in R_i} exp(z_j) ) / sum_i d_i
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NoEventsError, ShapeError
from .numerics import logsumexp


@dataclass(frozen=True)
class Outcomes:
    """Survival outcomes for a group of subjects.

    time: positive, finite follow-up times (event or censoring).
    event: True where the event was observed, False where censored.
    """

    time: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        time = np.asarray(self.time, dtype=np.float64).ravel()
        event = np.asarray(self.event, dtype=bool).ravel()
        if time.shape != event.shape:
            raise ShapeError(
                f"Outcomes: {time.size} times vs {event.size} event flags"
            )
        if time.size and (not np.isfinite(time).all() or (time <= 0).any()):
            raise DomainError("Outcomes: times must be finite and positive")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)

    def __len__(self):
        return self.time.size

    def subset(self, idx) -> "Outcomes":
        return Outcomes(self.time[idx], self.event[idx])

    @property
    def n_events(self) -> int:
        return int(self.event.sum())


@dataclass(frozen=True)
class RiskBatch:
    """Log-hazard predictions paired with the outcomes they were made for."""

    log_hazards: np.ndarray
    outcomes: Outcomes

    def __post_init__(self):
        z = np.asarray(self.log_hazards, dtype=np.float64).ravel()
        if z.size != len(self.outcomes):
            raise ShapeError(
                f"RiskBatch: {z.size} log-hazards vs {len(self.outcomes)} outcomes"
            )
        if z.size and not np.isfinite(z).all():
            raise DomainError("RiskBatch: non-finite log-hazards")
        object.__setattr__(self, "log_hazards", z)

    def __len__(self):
        return len(self.outcomes)


def risk_set(outcomes: Outcomes, i: int) -> np.ndarray:
    """Indices still at risk at subject i's time: {j : t_j >= t_i}.

    Ties are included on both sides, matching the Breslow convention used
    by the loss.
    """
    if not 0 <= i < len(outcomes):
        raise DomainError(f"risk_set: index {i} out of range for n={len(outcomes)}")
    return np.flatnonzero(outcomes.time >= outcomes.time[i])


def hazards(log_hazards) -> np.ndarray:
    """Elementwise exp: hazard = exp(log-hazard)."""
    z = np.asarray(log_hazards, dtype=np.float64).ravel()
    if z.size and not np.isfinite(z).all():
        raise DomainError("hazards: non-finite log-hazards")
    return np.exp(z)


def nll_loss(batch: RiskBatch):
    """Negative log partial likelihood and its gradient over log-hazards.

    Returns (loss, grad). Each event's inner log-sum is evaluated with the
    stabilised logsumexp, so large log-hazards do not overflow. Raises
    NoEventsError when the batch has no observed events (callers skip such
    batches).
    """
    z = batch.log_hazards
    outcomes = batch.outcomes
    n_events = outcomes.n_events
    if n_events == 0:
        raise NoEventsError("nll_loss: batch has no observed events")

    total = 0.0
    grad = -outcomes.event.astype(np.float64)
    for i in np.flatnonzero(outcomes.event):
        members = risk_set(outcomes, i)
        lse = logsumexp(z[members])
        total += z[i] - lse
        # softmax of the risk set distributes this event's mass back
        grad[members] += np.exp(z[members] - lse)
    loss = -total / n_events
    grad /= n_events
    return loss, grad
