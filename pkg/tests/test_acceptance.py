"""Acceptance gate: eight numbered end-to-end criteria, one test each.

Every test prints a single pass/fail line (visible with -s or in captured
output) before asserting, so a red run still shows the full scoreboard.
"""

import itertools
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from survfuse.fusion import (
    AttentionBlock,
    attend,
    attend_backward,
    backward,
    dual_cross_attend,
    dual_cross_attend_backward,
    forward,
    init_params,
    self_attend_aggregate,
    self_attend_aggregate_backward,
)
from survfuse.harness import SynthDesign, TrainConfig, run_cv, synth_cohort
from survfuse.numerics import grad_check, rng_stream
from survfuse.stainprep import (
    estimate_stain_profile,
    normalize_patch,
    od_to_intensity,
)
from survfuse.survloss import Outcomes, RiskBatch, nll_loss
from survfuse.survstats import (
    c_index,
    chi2_sf,
    fit_coxph,
    integrated_brier,
    kaplan_meier,
    logrank_test,
)

MODALITY_CYCLE = ("multimodal", "imaging_genetic", "imaging")


def _report(number: int, name: str, ok: bool, detail: str = ""):
    status = "pass" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[acceptance {number}] {status}: {name}{suffix}", flush=True)


def _patient(rng, n_patches, d_img, n_genes, d_clin=4):
    from types import SimpleNamespace

    return SimpleNamespace(
        patch_embeddings=rng.standard_normal((n_patches, d_img)),
        gene_expr=rng.standard_normal(n_genes),
        clinical=rng.standard_normal(d_clin),
    )


# ---------------------------------------------------------------------------
# 1. gradient suite
# ---------------------------------------------------------------------------

def _standalone_layer_error(rng) -> float:
    worst = 0.0
    d_in, width, n, m = 4, 3, 4, 3

    # plain attention with distinct query/key inputs and a value projection
    block = AttentionBlock(rng.standard_normal((d_in, width)),
                           rng.standard_normal((d_in, width)),
                           rng.standard_normal((d_in, d_in)))
    queries = rng.standard_normal((n, d_in))
    keys = rng.standard_normal((m, d_in))
    probe = rng.standard_normal((n, d_in))
    _, tape = attend(block, queries, keys)
    d_q_in, d_k_in, wg = attend_backward(block, tape, probe)

    def with_weights(name):
        def f(flat):
            w = {k: getattr(block, k) for k in ("w_q", "w_k", "w_v")}
            w[name] = flat.reshape(getattr(block, name).shape)
            out, _ = attend(AttentionBlock(w["w_q"], w["w_k"], w["w_v"]),
                            queries, keys)
            return float((out * probe).sum())
        return f

    for name in ("w_q", "w_k", "w_v"):
        worst = max(worst, grad_check(with_weights(name),
                                      getattr(block, name).ravel(),
                                      wg[name].ravel()))
    worst = max(worst, grad_check(
        lambda flat: float((attend(block, flat.reshape(queries.shape), keys)[0]
                            * probe).sum()),
        queries.ravel(), d_q_in.ravel()))
    worst = max(worst, grad_check(
        lambda flat: float((attend(block, queries, flat.reshape(keys.shape))[0]
                            * probe).sum()),
        keys.ravel(), d_k_in.ravel()))

    # self-attention aggregation: shared input, gradients accumulate
    tokens = rng.standard_normal((n, d_in))
    agg_block = AttentionBlock(rng.standard_normal((d_in, width)),
                               rng.standard_normal((d_in, width)),
                               rng.standard_normal((d_in, d_in)))
    vec_probe = rng.standard_normal((1, d_in))
    _, agg_tape = self_attend_aggregate(tokens, agg_block)
    d_tokens, agg_wg = self_attend_aggregate_backward(agg_block, agg_tape,
                                                      vec_probe)
    worst = max(worst, grad_check(
        lambda flat: float((self_attend_aggregate(flat.reshape(tokens.shape),
                                                  agg_block)[0]
                            * vec_probe).sum()),
        tokens.ravel(), d_tokens.ravel()))
    for name in ("w_q", "w_k"):
        def f(flat, name=name):
            w = {k: getattr(agg_block, k) for k in ("w_q", "w_k", "w_v")}
            w[name] = flat.reshape(getattr(agg_block, name).shape)
            out, _ = self_attend_aggregate(
                tokens, AttentionBlock(w["w_q"], w["w_k"], w["w_v"]))
            return float((out * vec_probe).sum())
        worst = max(worst, grad_check(f, getattr(agg_block, name).ravel(),
                                      agg_wg[name].ravel()))

    # dual cross-attention over raw tokens
    d = 3
    img = rng.standard_normal((n, d))
    gene = rng.standard_normal((m, d))
    big = AttentionBlock(rng.standard_normal((d, width)),
                         rng.standard_normal((d, width)))
    bgi = AttentionBlock(rng.standard_normal((d, width)),
                         rng.standard_normal((d, width)))
    fused_probe = rng.standard_normal((1, 2 * d))
    _, cross_tape = dual_cross_attend(img, gene, big, bgi)
    d_img, d_gene, ig_g, gi_g = dual_cross_attend_backward(
        big, bgi, cross_tape, fused_probe)
    worst = max(worst, grad_check(
        lambda flat: float((dual_cross_attend(flat.reshape(img.shape), gene,
                                              big, bgi)[0] * fused_probe).sum()),
        img.ravel(), d_img.ravel()))
    worst = max(worst, grad_check(
        lambda flat: float((dual_cross_attend(img, flat.reshape(gene.shape),
                                              big, bgi)[0] * fused_probe).sum()),
        gene.ravel(), d_gene.ravel()))
    return worst


def _full_model_error(seed: int) -> float:
    modality = MODALITY_CYCLE[seed % 3]
    rng = rng_stream(40_000 + seed)
    params = init_params(d_img=5, d=3, n_genes=4, seed=seed, modality=modality)
    patient = _patient(rng, n_patches=3, d_img=5, n_genes=4)
    _, tape = forward(params, patient)
    grads = backward(params, tape)
    worst = 0.0
    for name, arr, _ in params.named_arrays():
        original = arr.copy()

        def f(flat, name=name, original=original):
            params.set_array(name, flat.reshape(original.shape))
            try:
                value, _ = forward(params, patient)
            finally:
                params.set_array(name, original)
            return value

        worst = max(worst, grad_check(f, original.ravel(),
                                      np.asarray(grads[name]).ravel()))
    return worst


def _loss_error(rng) -> float:
    n = int(rng.integers(2, 9))
    z = rng.standard_normal(n)
    events = rng.random(n) < 0.7
    if not events.any():
        events[int(rng.integers(n))] = True
    times = rng.integers(1, 5, size=n).astype(np.float64)  # ties likely
    outcomes = Outcomes(times, events)
    _, grad = nll_loss(RiskBatch(z, outcomes))
    return grad_check(lambda v: nll_loss(RiskBatch(v, outcomes))[0],
                      z, grad, eps=1e-6)


def test_1_gradient_suite():
    t0 = time.monotonic()
    worst_layer = 0.0
    worst_loss = 0.0
    for seed in range(100):
        rng = rng_stream(30_000 + seed)
        worst_layer = max(worst_layer, _standalone_layer_error(rng))
        worst_layer = max(worst_layer, _full_model_error(seed))
        worst_loss = max(worst_loss, _loss_error(rng))
    elapsed = time.monotonic() - t0
    ok = worst_layer <= 1e-6 and worst_loss <= 1e-8 and elapsed < 60.0
    _report(1, "gradients match central finite differences", ok,
            f"layers {worst_layer:.2e} <= 1e-6, loss {worst_loss:.2e} <= 1e-8, "
            f"{elapsed:.1f}s < 60s, 100 seeds")
    assert worst_layer <= 1e-6
    assert worst_loss <= 1e-8
    assert elapsed < 60.0


# ---------------------------------------------------------------------------
# 2. attention invariants
# ---------------------------------------------------------------------------

def test_2_attention_invariants():
    worst_row = 0.0
    for seed in range(20):
        rng = rng_stream(31_000 + seed)
        n, m, d_in, width = (int(rng.integers(1, 7)) for _ in range(4))
        block = AttentionBlock(rng.standard_normal((d_in, width)),
                               rng.standard_normal((d_in, width)))
        _, tape = attend(block, rng.standard_normal((n, d_in)),
                         rng.standard_normal((m, d_in)))
        worst_row = max(worst_row,
                        float(np.abs(tape.attn.sum(axis=1) - 1.0).max()))
    rows_ok = worst_row <= 1e-12

    worst_perm = 0.0
    for seed in range(10):
        modality = MODALITY_CYCLE[seed % 3]
        rng = rng_stream(32_000 + seed)
        params = init_params(d_img=6, d=4, n_genes=5, seed=seed,
                             modality=modality)
        patient = _patient(rng, n_patches=7, d_img=6, n_genes=5)
        base, _ = forward(params, patient)
        patient.patch_embeddings = patient.patch_embeddings[
            rng.permutation(7)]
        permuted, _ = forward(params, patient)
        worst_perm = max(worst_perm, abs(base - permuted))
    perm_ok = worst_perm <= 1e-9

    # a single key token must be passed through exactly, and a single
    # self-attended token must come out as exactly its own value row
    rng = rng_stream(33_000)
    one_key = rng.standard_normal((1, 4))
    queries = rng.standard_normal((3, 4))
    block = AttentionBlock(rng.standard_normal((4, 2)),
                           rng.standard_normal((4, 2)))
    out, tape = attend(block, queries, one_key)
    collapse_ok = (np.array_equal(out, np.repeat(one_key, 3, axis=0))
                   and np.array_equal(tape.attn, np.ones((3, 1))))

    token = rng.standard_normal((1, 4))
    vblock = AttentionBlock(rng.standard_normal((4, 2)),
                            rng.standard_normal((4, 2)),
                            rng.standard_normal((4, 4)))
    vec, _ = self_attend_aggregate(token, vblock)
    identity_ok = np.array_equal(vec, token @ vblock.w_v)

    ok = rows_ok and perm_ok and collapse_ok and identity_ok
    _report(2, "attention invariants", ok,
            f"row sums off by {worst_row:.1e} <= 1e-12, patch permutation "
            f"{worst_perm:.1e} <= 1e-9, one-token collapse and identity exact")
    assert rows_ok and perm_ok and collapse_ok and identity_ok


# ---------------------------------------------------------------------------
# 3. loss invariants
# ---------------------------------------------------------------------------

def _brute_nll(z, times, events):
    ev = np.flatnonzero(events)
    total = 0.0
    for i in ev:
        members = np.flatnonzero(times >= times[i])  # ties share the set
        total += z[i] - math.log(np.exp(z[members]).sum())
    return -total / ev.size


def test_3_loss_invariants():
    rng = rng_stream(34_000)

    worst_shift = 0.0
    worst_sum = 0.0
    for _ in range(30):
        n = int(rng.integers(2, 9))
        z = rng.standard_normal(n)
        events = rng.random(n) < 0.7
        if not events.any():
            events[0] = True
        outcomes = Outcomes(rng.permutation(n) + 1.0, events)
        base, grad = nll_loss(RiskBatch(z, outcomes))
        worst_sum = max(worst_sum, abs(float(grad.sum())))
        for c in (-250.0, 37.5, 500.0):
            shifted, _ = nll_loss(RiskBatch(z + c, outcomes))
            worst_shift = max(worst_shift, abs(shifted - base))
    shift_ok = worst_shift <= 1e-10
    sum_ok = worst_sum <= 1e-10

    worst_brute = 0.0
    n_patterns = 0
    for n in range(1, 7):
        for pattern in itertools.product((False, True), repeat=n):
            if not any(pattern):
                continue
            events = np.array(pattern)
            z = rng.standard_normal(n)
            for times in (rng.permutation(n) + 1.0,
                          rng.integers(1, 3, size=n).astype(np.float64)):
                loss, _ = nll_loss(RiskBatch(z, Outcomes(times, events)))
                worst_brute = max(worst_brute,
                                  abs(loss - _brute_nll(z, times, events)))
                n_patterns += 1
    brute_ok = worst_brute <= 1e-12

    ok = shift_ok and sum_ok and brute_ok
    _report(3, "partial-likelihood loss invariants", ok,
            f"shift {worst_shift:.1e} <= 1e-10, grad sum {worst_sum:.1e} "
            f"<= 1e-10, brute force {worst_brute:.1e} <= 1e-12 over "
            f"{n_patterns} event patterns")
    assert shift_ok and sum_ok and brute_ok


# ---------------------------------------------------------------------------
# 4. metric oracles
# ---------------------------------------------------------------------------

def _pairwise_c(risks, times, events):
    num = den = 0.0
    n = len(risks)
    for i in range(n):
        if not events[i]:
            continue
        for j in range(n):
            if j == i:
                continue
            if times[j] > times[i]:
                den += 1.0
                if risks[i] > risks[j]:
                    num += 1.0
                elif risks[i] == risks[j]:
                    num += 0.5
    return num / den


def _km_product(times, events, at_time):
    s = 1.0
    for t in sorted(set(times[events])):
        if t > at_time:
            break
        n_at_risk = int((times >= t).sum())
        d = int(((times == t) & events).sum())
        s *= 1.0 - d / n_at_risk
    return s


def _logrank_tabulate(ta, ea, tb, eb):
    times = np.concatenate([ta, tb])
    events = np.concatenate([ea, eb])
    in_a = np.concatenate([np.ones(len(ta), bool), np.zeros(len(tb), bool)])
    observed = expected = variance = 0.0
    for t in sorted(set(times[events])):
        at_risk = times >= t
        n = int(at_risk.sum())
        n_a = int((at_risk & in_a).sum())
        d = int(((times == t) & events).sum())
        d_a = int(((times == t) & events & in_a).sum())
        observed += d_a
        expected += d * n_a / n
        if n > 1:
            variance += d * (n_a / n) * (1 - n_a / n) * (n - d) / (n - 1)
    return (observed - expected) ** 2 / variance


def test_4_metric_oracles():
    rng = rng_stream(35_000)

    risks = rng.standard_normal(10)
    risks[3] = risks[7]  # tied risks count half
    times = np.array([3.0, 1.0, 4.0, 4.0, 2.0, 6.0, 5.0, 8.0, 2.0, 7.0])
    events = np.array([1, 1, 1, 0, 1, 0, 1, 1, 0, 1], dtype=bool)
    c_err = abs(c_index(risks, Outcomes(times, events))
                - _pairwise_c(risks, times, events))

    km_times = np.array([1.0, 2.0, 2.0, 3.0, 5.0, 5.0, 5.0, 8.0, 9.0, 9.0])
    km_events = np.array([1, 1, 0, 1, 1, 1, 0, 0, 1, 1], dtype=bool)
    curve = kaplan_meier(Outcomes(km_times, km_events))
    km_err = max(
        abs(curve.surv_prob[i] - _km_product(km_times, km_events,
                                             curve.times[i]))
        for i in range(curve.times.size)
    )

    ta = np.array([1.0, 2.0, 3.0])
    ea = np.array([True, True, True])
    tb = np.array([10.0, 10.0, 10.0])
    eb = np.array([False, False, False])
    chi2, p = logrank_test(Outcomes(ta, ea), Outcomes(tb, eb))
    lr_err = abs(chi2 - _logrank_tabulate(ta, ea, tb, eb))
    p_err = abs(p - chi2_sf(chi2))

    ibs_times = np.array([2.0, 4.0, 5.0, 7.0, 9.0])
    ibs_events = np.array([True, False, True, False, True])
    lam = np.array([0.05, 0.1, 0.2, 0.15, 0.08])
    horizon = 8.0
    result = integrated_brier(
        lambda grid: np.exp(-lam[:, None] * grid[None, :]),
        Outcomes(ibs_times, ibs_events), horizon)

    def g(t, left):
        steps = ((4.0, 0.75), (7.0, 0.375))  # censoring survival by hand
        value = 1.0
        for step_t, step_v in steps:
            if (t > step_t) if left else (t >= step_t):
                value = step_v
        return value

    grid = horizon * np.arange(1, 101) / 100
    bs = []
    for t in grid:
        total = 0.0
        for i in range(5):
            s_it = math.exp(-lam[i] * t)
            if ibs_times[i] <= t and ibs_events[i]:
                total += s_it**2 / g(ibs_times[i], left=True)
            elif ibs_times[i] > t:
                total += (1.0 - s_it) ** 2 / g(t, left=False)
        bs.append(total / 5.0)
    ibs_err = abs(float(result) - np.trapezoid(bs, grid) / (grid[-1] - grid[0]))

    tail_err = abs(chi2_sf(3.841) - 0.05)

    ok = (c_err <= 1e-12 and km_err <= 1e-12 and lr_err <= 1e-12
          and p_err <= 1e-12 and ibs_err <= 1e-12 and tail_err <= 1e-3)
    _report(4, "survival metrics match direct-enumeration oracles", ok,
            f"c {c_err:.1e}, km {km_err:.1e}, logrank {lr_err:.1e}, "
            f"ibs {ibs_err:.1e} all <= 1e-12; chi2 tail at 3.841 off by "
            f"{tail_err:.1e} <= 1e-3")
    assert c_err <= 1e-12 and km_err <= 1e-12
    assert lr_err <= 1e-12 and p_err <= 1e-12
    assert ibs_err <= 1e-12 and tail_err <= 1e-3


# ---------------------------------------------------------------------------
# 5. proportional-hazards recovery
# ---------------------------------------------------------------------------

def test_5_coxph_recovery():
    t0 = time.monotonic()
    beta = 0.7
    hits = 0
    censored_fracs = []
    for seed in range(20):
        rng = rng_stream(36_000 + seed)
        x = rng.standard_normal(500)
        event_time = rng.exponential(1.0, 500) / np.exp(beta * x)
        censor_time = rng.exponential(4.0, 500)
        observed = np.minimum(event_time, censor_time)
        events = event_time <= censor_time
        censored_fracs.append(1.0 - events.mean())
        model = fit_coxph(x[:, None], Outcomes(observed, events))
        if abs(model.coefficients[0] - beta) <= 0.15:
            hits += 1
    elapsed = time.monotonic() - t0
    mean_cens = float(np.mean(censored_fracs))
    ok = hits >= 18 and elapsed < 10.0 and 0.1 <= mean_cens <= 0.3
    _report(5, "proportional-hazards fit recovers beta = 0.7", ok,
            f"{hits}/20 within 0.15, ~{mean_cens:.0%} censored, "
            f"{elapsed:.1f}s < 10s")
    assert hits >= 18
    assert elapsed < 10.0
    assert 0.1 <= mean_cens <= 0.3


# ---------------------------------------------------------------------------
# 6. end-to-end synthetic recovery
# ---------------------------------------------------------------------------

def test_6_end_to_end_synthetic_recovery():
    t0 = time.monotonic()
    cohort = synth_cohort(300, seed=2026, design=SynthDesign())
    report = run_cv(cohort, TrainConfig(),
                    modalities=("multimodal", "imaging"), k=5)
    elapsed = time.monotonic() - t0

    mm = report["modalities"]["multimodal"]
    img = report["modalities"]["imaging"]
    mm_mean = mm["summary"]["c_index"]["mean"]
    img_mean = img["summary"]["c_index"]["mean"]
    n_sig = sum(f["logrank_p"] is not None and f["logrank_p"] < 0.01
                for f in mm["folds"])

    ok = (mm_mean >= 0.80 and n_sig >= 4 and mm_mean > img_mean
          and elapsed < 900.0)
    _report(6, "cross-validated training recovers synthetic risk", ok,
            f"multimodal C {mm_mean:.3f} >= 0.80, median-split p < 0.01 on "
            f"{n_sig}/5 folds, imaging C {img_mean:.3f} strictly lower, "
            f"{elapsed:.0f}s < 900s")
    assert mm_mean >= 0.80
    assert n_sig >= 4
    assert mm_mean > img_mean
    assert elapsed < 900.0


# ---------------------------------------------------------------------------
# 7. stain estimation and normalization
# ---------------------------------------------------------------------------

TRUE_H = np.array([0.35, 0.55, 0.85]) / np.linalg.norm([0.35, 0.55, 0.85])
TRUE_E = np.array([0.75, 0.60, 0.25]) / np.linalg.norm([0.75, 0.60, 0.25])


def _two_stain_image(rng, side=160):
    n = side * side
    n_pure = n // 10
    c_h = np.concatenate([
        rng.uniform(0.6, 1.5, n_pure),
        np.zeros(n_pure),
        rng.uniform(0.1, 1.2, n - 2 * n_pure),
    ])
    c_e = np.concatenate([
        np.zeros(n_pure),
        rng.uniform(0.7, 1.5, n_pure),
        rng.uniform(0.1, 1.2, n - 2 * n_pure),
    ])
    od = np.outer(c_h, TRUE_H) + np.outer(c_e, TRUE_E)
    return od_to_intensity(od.reshape((side, side, 3)))


def _angle_deg(u, v):
    cos = abs(float(np.dot(u, v)) / (np.linalg.norm(u) * np.linalg.norm(v)))
    return math.degrees(math.acos(min(cos, 1.0)))


def test_7_stain_recovery_and_normalization():
    rng = rng_stream(37_000)
    img = _two_stain_image(rng)
    profile = estimate_stain_profile(img)
    h_angle = _angle_deg(profile.stain_matrix[:, 0], TRUE_H)
    e_angle = _angle_deg(profile.stain_matrix[:, 1], TRUE_E)
    angles_ok = h_angle <= 2.0 and e_angle <= 2.0

    other = _two_stain_image(rng_stream(37_001))
    # rotate the stains so the round trip actually changes the pixels
    target = estimate_stain_profile(
        np.ascontiguousarray(other[:, :, ::-1]))
    there = normalize_patch(img, profile, target)
    back = normalize_patch(there, target, profile)
    round_trip = int(np.abs(back.astype(int) - img.astype(int)).max())

    again = normalize_patch(there, target, target)
    idempotence = int(np.abs(again.astype(int) - there.astype(int)).max())

    ok = angles_ok and round_trip <= 4 and idempotence <= 2
    _report(7, "stain vectors recovered and normalization stable", ok,
            f"H off {h_angle:.2f} deg, E off {e_angle:.2f} deg <= 2; round "
            f"trip {round_trip} <= 4 levels; idempotence {idempotence} <= 2")
    assert angles_ok
    assert round_trip <= 4
    assert idempotence <= 2


# ---------------------------------------------------------------------------
# 8. byte-identical reruns
# ---------------------------------------------------------------------------

def _run_pipeline(root: Path, monkeypatch):
    from survfuse.cli import main

    root.mkdir(parents=True, exist_ok=True)
    monkeypatch.chdir(root)
    assert main(["synth", "--out", "cohort", "--n", "40", "--seed", "5",
                 "--d-img", "6", "--n-genes", "10"]) == 0
    assert main(["train", "--manifest", "cohort/manifest.csv", "--out",
                 "ckpt", "--seed", "5", "--folds", "2", "--max-epochs", "3",
                 "--d-img", "6", "--d", "4", "--batch-size", "8"]) == 0
    assert main(["evaluate", "--manifest", "cohort/manifest.csv",
                 "--checkpoints", "ckpt", "--out", "eval"]) == 0


def test_8_same_seed_runs_are_byte_identical(tmp_path, monkeypatch):
    _run_pipeline(tmp_path / "one", monkeypatch)
    _run_pipeline(tmp_path / "two", monkeypatch)
    monkeypatch.chdir(tmp_path)

    def listing(root: Path):
        return sorted(
            p.relative_to(root) for p in root.rglob("*")
            if p.is_file() and p.name != "training_log.json"  # wall clock
        )

    one, two = tmp_path / "one", tmp_path / "two"
    files = listing(one)
    same_names = files == listing(two)
    differing = [str(rel) for rel in files
                 if (one / rel).read_bytes() != (two / rel).read_bytes()]
    ok = same_names and not differing
    _report(8, "same-seed pipeline reruns byte-identical", ok,
            f"{len(files)} files compared across synth, train, evaluate"
            + ("" if ok else f"; differing: {differing[:5]}"))
    assert same_names
    assert differing == []
    mm = json.loads((one / "eval" / "evaluation.json").read_text())
    assert mm["schema_version"] == 1
