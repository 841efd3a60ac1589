import itertools
import math

import numpy as np
import pytest

from survfuse.errors import DomainError, NoEventsError, ShapeError
from survfuse.numerics import grad_check, rng_stream
from survfuse.survloss import Outcomes, RiskBatch, hazards, nll_loss, risk_set


def brute_force_nll(z, times, events):
    """Direct transcription of the averaged partial likelihood: materialize
    every risk set, no logsumexp, no shortcuts."""
    n_events = sum(events)
    total = 0.0
    for i in range(len(z)):
        if not events[i]:
            continue
        denom = 0.0
        for j in range(len(z)):
            if times[j] >= times[i]:
                denom += math.exp(z[j])
        total += z[i] - math.log(denom)
    return -total / n_events


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

def test_outcomes_validation():
    with pytest.raises(ShapeError):
        Outcomes([1.0, 2.0], [True])
    with pytest.raises(DomainError):
        Outcomes([1.0, -2.0], [True, False])
    with pytest.raises(DomainError):
        Outcomes([1.0, np.inf], [True, False])
    o = Outcomes([3.0, 1.0], [True, False])
    assert len(o) == 2 and o.n_events == 1
    assert len(o.subset([1])) == 1


def test_risk_batch_checks_lengths_and_finiteness():
    o = Outcomes([1.0, 2.0], [True, True])
    with pytest.raises(ShapeError):
        RiskBatch([0.0], o)
    with pytest.raises(DomainError):
        RiskBatch([0.0, np.nan], o)
    assert len(RiskBatch([0.0, 1.0], o)) == 2


# ---------------------------------------------------------------------------
# risk sets
# ---------------------------------------------------------------------------

def test_risk_set_earliest_subject_includes_everyone():
    o = Outcomes([5.0, 3.0, 8.0], [True, True, True])
    assert sorted(risk_set(o, 1)) == [0, 1, 2]


def test_risk_set_latest_subject_is_alone():
    o = Outcomes([5.0, 3.0, 8.0], [True, True, True])
    assert list(risk_set(o, 2)) == [2]


def test_risk_set_ties_included_on_both_sides():
    o = Outcomes([4.0, 4.0, 2.0], [True, True, True])
    assert sorted(risk_set(o, 0)) == [0, 1]
    assert sorted(risk_set(o, 1)) == [0, 1]


def test_risk_set_index_out_of_range():
    o = Outcomes([1.0], [True])
    with pytest.raises(DomainError):
        risk_set(o, 5)


# ---------------------------------------------------------------------------
# hazards
# ---------------------------------------------------------------------------

def test_hazards_exp_values():
    assert hazards([0.0]) == pytest.approx([1.0])
    assert hazards([math.log(2.0)]) == pytest.approx([2.0])


def test_hazards_preserves_order():
    rng = rng_stream(11)
    z = np.sort(rng.standard_normal(20))
    h = hazards(z)
    assert (np.diff(h) >= 0).all()


# ---------------------------------------------------------------------------
# loss values
# ---------------------------------------------------------------------------

def test_single_event_loss_is_zero():
    for z in (-3.0, 0.0, 7.5):
        loss, grad = nll_loss(RiskBatch([z], Outcomes([4.0], [True])))
        assert loss == pytest.approx(0.0, abs=1e-15)
        assert grad == pytest.approx([0.0], abs=1e-15)


def test_two_subject_hand_value():
    # earlier event sees both subjects, later event only itself:
    # loss = (log 2 + 0) / 2
    loss, _ = nll_loss(RiskBatch([0.0, 0.0], Outcomes([1.0, 2.0], [True, True])))
    assert loss == pytest.approx(math.log(2.0) / 2.0, abs=1e-15)


def test_no_events_raises():
    with pytest.raises(NoEventsError):
        nll_loss(RiskBatch([0.0, 0.0], Outcomes([1.0, 2.0], [False, False])))


def test_loss_is_nonnegative_and_zero_iff_singleton_risk_sets():
    rng = rng_stream(12)
    for _ in range(50):
        n = int(rng.integers(2, 10))
        times = rng.uniform(1.0, 100.0, n)
        events = rng.uniform(size=n) < 0.7
        if not events.any():
            events[0] = True
        z = rng.standard_normal(n) * 2
        loss, _ = nll_loss(RiskBatch(z, Outcomes(times, events)))
        assert loss >= -1e-12
    # distinct times, only the last subject has an event: its risk set is
    # just itself, so the loss must be exactly 0
    loss, _ = nll_loss(RiskBatch(
        [5.0, 1.0, -2.0], Outcomes([1.0, 2.0, 3.0], [False, False, True])
    ))
    assert loss == pytest.approx(0.0, abs=1e-15)


def test_matches_brute_force_on_exhaustive_small_batches():
    rng = rng_stream(13)
    for n in range(1, 7):
        for pattern in itertools.product([False, True], repeat=n):
            if not any(pattern):
                continue
            for trial in range(3):
                times = rng.uniform(1.0, 50.0, n)
                if trial == 2 and n >= 2:
                    times[1] = times[0]  # exercise the tie rule
                z = rng.standard_normal(n)
                loss, _ = nll_loss(RiskBatch(z, Outcomes(times, list(pattern))))
                expect = brute_force_nll(z, times, list(pattern))
                assert loss == pytest.approx(expect, abs=1e-12)


# ---------------------------------------------------------------------------
# gradient
# ---------------------------------------------------------------------------

def test_gradient_matches_finite_differences():
    worst = 0.0
    for seed in range(30):
        rng = rng_stream(seed, stream=2)
        n = 12
        times = rng.uniform(1.0, 2000.0, n)
        events = rng.uniform(size=n) < 0.7
        if not events.any():
            events[0] = True
        outcomes = Outcomes(times, events)
        z0 = rng.standard_normal(n)

        def f(z):
            loss, _ = nll_loss(RiskBatch(z, outcomes))
            return loss

        _, grad = nll_loss(RiskBatch(z0, outcomes))
        worst = max(worst, grad_check(f, z0, grad, eps=1e-6))
    assert worst <= 1e-8


def test_shift_invariance_of_loss_and_gradient():
    rng = rng_stream(14)
    for _ in range(25):
        n = int(rng.integers(2, 13))
        times = rng.uniform(1.0, 100.0, n)
        events = rng.uniform(size=n) < 0.6
        if not events.any():
            events[int(rng.integers(n))] = True
        outcomes = Outcomes(times, events)
        z = rng.standard_normal(n) * 3
        shift = rng.uniform(-50, 50)
        loss_a, grad_a = nll_loss(RiskBatch(z, outcomes))
        loss_b, grad_b = nll_loss(RiskBatch(z + shift, outcomes))
        assert abs(loss_a - loss_b) < 1e-10
        assert np.abs(grad_a - grad_b).max() < 1e-10


def test_gradient_components_sum_to_zero():
    rng = rng_stream(15)
    for _ in range(25):
        n = int(rng.integers(2, 13))
        times = rng.uniform(1.0, 100.0, n)
        events = rng.uniform(size=n) < 0.6
        if not events.any():
            events[0] = True
        z = rng.standard_normal(n) * 2
        _, grad = nll_loss(RiskBatch(z, Outcomes(times, events)))
        assert abs(grad.sum()) < 1e-10


def test_censored_subjects_only_matter_through_risk_sets():
    # a censored subject later than every event changes nothing
    z = np.array([0.5, -0.2, 1.0])
    base = Outcomes([1.0, 2.0, 3.0], [True, True, False])
    loss_a, grad_a = nll_loss(RiskBatch(z, base))
    # dropping that subject, the two event terms keep the same risk sets
    # except the censored member leaves both denominators
    loss_b, _ = nll_loss(RiskBatch(z[:2], Outcomes([1.0, 2.0], [True, True])))
    assert loss_a != pytest.approx(loss_b)  # it was inside both risk sets
    assert grad_a[2] > 0  # censored subject still absorbs event mass
