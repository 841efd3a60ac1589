"""Training and experiment orchestration: cohort containers and manifest
ingestion, feature standardization, AdamW, stratified cross-validation,
early-stopped fold training, a synthetic-cohort generator with known ground
truth, and the cross-validated evaluation report.
"""

from __future__ import annotations

import copy
import csv
import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    CohortError,
    ConfigError,
    DomainError,
    NoEventsError,
    OptimizerStateError,
    ShapeError,
)
from .fusion import MODALITIES, ModelParams, backward, forward, init_params
from .numerics import read_fmat, rng_stream, write_fmat
from .survloss import Outcomes, RiskBatch, nll_loss
from .survstats import (
    breslow_baseline,
    c_index,
    cox_survival_fn,
    fit_coxph,
    integrated_brier,
    logrank_test,
    median_split,
)

SUBTYPES = ("LuminalA", "LuminalB")

MANIFEST_FIXED_COLUMNS = [
    "id", "embeddings_path", "time_days", "event", "subtype",
    "grade", "size_mm", "age_years", "node_status",
]

DAYS_5Y = 1826.0
DAYS_10Y = 3652.0


# ---------------------------------------------------------------------------
# records and cohorts
# ---------------------------------------------------------------------------

@dataclass
class PatientRecord:
    """One subject: patch embeddings, gene vector, clinical tuple, outcome.

    clinical holds (grade 1-3, tumour size mm, age years, node status 0/1)
    in raw units; standardization happens per training split, never here.
    true_risk carries the generator's latent risk for synthetic subjects.
    """

    id: str
    patch_embeddings: np.ndarray
    gene_expr: np.ndarray
    clinical: np.ndarray
    time_days: float
    event: bool
    subtype: str
    true_risk: Optional[float] = None

    def __post_init__(self):
        self.patch_embeddings = np.asarray(self.patch_embeddings, dtype=np.float64)
        self.gene_expr = np.asarray(self.gene_expr, dtype=np.float64).ravel()
        self.clinical = np.asarray(self.clinical, dtype=np.float64).ravel()
        if self.patch_embeddings.ndim != 2 or self.patch_embeddings.shape[0] < 1:
            raise CohortError(f"patient {self.id}: needs at least one patch row")
        if self.clinical.size != 4:
            raise CohortError(f"patient {self.id}: clinical needs 4 values")
        if self.subtype not in SUBTYPES:
            raise CohortError(f"patient {self.id}: unknown subtype {self.subtype!r}")
        if not np.isfinite(self.patch_embeddings).all() \
                or not np.isfinite(self.gene_expr).all() \
                or not np.isfinite(self.clinical).all():
            raise CohortError(f"patient {self.id}: non-finite feature values")
        if not np.isfinite(self.time_days) or self.time_days <= 0:
            raise CohortError(f"patient {self.id}: time must be finite and positive")


@dataclass
class Cohort:
    patients: list
    fold_assignments: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.patients)

    def outcomes(self, idx=None) -> Outcomes:
        pats = self.patients if idx is None else [self.patients[i] for i in idx]
        return Outcomes(
            np.array([p.time_days for p in pats]),
            np.array([p.event for p in pats]),
        )

    def indices_for_fold(self, fold_id: int):
        if self.fold_assignments is None:
            raise CohortError("cohort has no fold assignments")
        folds = np.asarray(self.fold_assignments)
        return np.flatnonzero(folds != fold_id), np.flatnonzero(folds == fold_id)


# ---------------------------------------------------------------------------
# standardization (training split only; validation never contributes)
# ---------------------------------------------------------------------------

@dataclass
class FeatureStats:
    gene_mean: np.ndarray
    gene_sd: np.ndarray
    size_mean: float
    size_sd: float
    age_mean: float
    age_sd: float

    @classmethod
    def fit(cls, records) -> "FeatureStats":
        genes = np.stack([r.gene_expr for r in records])
        sizes = np.array([r.clinical[1] for r in records])
        ages = np.array([r.clinical[2] for r in records])

        def sd(a, axis=None):
            s = a.std(axis=axis)
            return np.where(s == 0, 1.0, s) if axis is not None else (s or 1.0)

        return cls(genes.mean(axis=0), sd(genes, axis=0),
                   float(sizes.mean()), float(sd(sizes)),
                   float(ages.mean()), float(sd(ages)))

    def gene_features(self, record) -> np.ndarray:
        return (record.gene_expr - self.gene_mean) / self.gene_sd

    def clinical_features(self, record) -> np.ndarray:
        grade, size, age, node = record.clinical
        return np.array([
            grade - 2.0,  # grade 1..3 -> -1, 0, 1
            (size - self.size_mean) / self.size_sd,
            (age - self.age_mean) / self.age_sd,
            node,
        ])

    def to_dict(self) -> dict:
        return {
            "gene_mean": self.gene_mean.tolist(),
            "gene_sd": self.gene_sd.tolist(),
            "size_mean": self.size_mean, "size_sd": self.size_sd,
            "age_mean": self.age_mean, "age_sd": self.age_sd,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(np.array(d["gene_mean"]), np.array(d["gene_sd"]),
                   d["size_mean"], d["size_sd"], d["age_mean"], d["age_sd"])


@dataclass
class ModelInputs:
    """Standardized view of one record, shaped for the network."""

    patch_embeddings: np.ndarray
    gene_expr: np.ndarray
    clinical: np.ndarray


def model_inputs(stats: FeatureStats, record: PatientRecord) -> ModelInputs:
    return ModelInputs(record.patch_embeddings,
                       stats.gene_features(record),
                       stats.clinical_features(record))


# ---------------------------------------------------------------------------
# configuration and optimizer
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 12
    max_epochs: int = 150
    patience: int = 5
    weight_decay: float = 0.01
    seed: int = 0
    d_img: int = 16
    d: int = 16
    d_attn: Optional[int] = None

    def __post_init__(self):
        positive = {
            "lr": self.lr, "batch_size": self.batch_size,
            "max_epochs": self.max_epochs, "patience": self.patience,
            "d_img": self.d_img, "d": self.d,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"TrainConfig.{name} must be positive, got {value}")
        if self.weight_decay < 0:
            raise ConfigError("TrainConfig.weight_decay must be nonnegative")
        if self.d_attn is not None and self.d_attn <= 0:
            raise ConfigError("TrainConfig.d_attn must be positive")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "batch_size": self.batch_size,
            "max_epochs": self.max_epochs, "patience": self.patience,
            "weight_decay": self.weight_decay, "seed": self.seed,
            "d_img": self.d_img, "d": self.d, "d_attn": self.d_attn,
        }


@dataclass
class OptimizerState:
    """Per-array Adam moments; shapes mirror the parameter layout."""

    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: ModelParams) -> "OptimizerState":
        m = {name: np.zeros_like(arr) for name, arr, _ in params.named_arrays()}
        v = {name: np.zeros_like(arr) for name, arr, _ in params.named_arrays()}
        return cls(m, v)


def adamw_step(params: ModelParams, grads: dict, state: OptimizerState,
               cfg: TrainConfig):
    """One decoupled-weight-decay Adam update, in place.

    Decay is applied as theta <- theta - lr * wd * theta from the
    pre-update value, separately from the moment-driven step; bias arrays
    and the head bias are exempt.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, theta, decay in params.named_arrays():
        if name not in grads:
            raise OptimizerStateError(f"adamw_step: missing gradient for {name}")
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != theta.shape:
            raise OptimizerStateError(
                f"adamw_step: gradient for {name} has shape {g.shape}, "
                f"parameter has {theta.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if decay and cfg.weight_decay > 0:
            update = update + cfg.lr * cfg.weight_decay * theta
        theta -= update


# ---------------------------------------------------------------------------
# stratified folds
# ---------------------------------------------------------------------------

def stratified_folds(cohort: Cohort, k: int = 5, seed: int = 0) -> np.ndarray:
    """Deal each (subtype x event) stratum round-robin into k folds.

    Members of a stratum are shuffled by a seeded stream and dealt in
    order; the dealing pointer carries over between strata so overall fold
    sizes stay within one of each other as well.
    """
    if k < 2:
        raise ConfigError(f"stratified_folds: k must be at least 2, got {k}")
    n = len(cohort)
    if n < k:
        raise CohortError(f"stratified_folds: {n} patients for {k} folds")
    rng = rng_stream(seed, stream=5)
    assignment = np.full(n, -1, dtype=np.int64)
    strata_keys = sorted(
        {(p.subtype, bool(p.event)) for p in cohort.patients}
    )
    pointer = 0
    for key in strata_keys:
        members = np.array([
            i for i, p in enumerate(cohort.patients)
            if (p.subtype, bool(p.event)) == key
        ])
        members = members[rng.permutation(members.size)]
        for idx in members:
            assignment[idx] = pointer % k
            pointer += 1
    return assignment


# ---------------------------------------------------------------------------
# synthetic cohorts
# ---------------------------------------------------------------------------

@dataclass
class SynthDesign:
    """Ground-truth construction for synthetic cohorts.

    Latent risk is w_img * (mean patch signal) + w_gene * (mean of the
    signal genes) + w_clin * (fixed clinical combination); survival times
    are exponential with rate base_hazard * exp(risk). time_noise blends
    geometrically between the deterministic exponential median (0) and a
    full exponential draw (1), so a zero-noise design gives times strictly
    monotone in risk. Censoring times are uniform on (0, c_max) with c_max
    chosen exactly so the realized censored fraction rounds to the target.
    """

    d_img: int = 16
    n_genes: int = 50
    n_signal_genes: int = 8
    w_img: float = 2.0
    w_gene: float = 2.5
    w_clin: float = 1.5
    patch_noise: float = 0.3
    gene_noise: float = 0.3
    time_noise: float = 1.0
    base_hazard: float = 0.001
    censor_frac: float = 0.3
    min_patches: int = 8
    max_patches: int = 64
    lumb_quantile: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.censor_frac < 1.0:
            raise ConfigError("SynthDesign.censor_frac must be in [0, 1)")
        if not 1 <= self.n_signal_genes <= self.n_genes:
            raise ConfigError("SynthDesign: signal genes exceed gene count")
        if not 1 <= self.min_patches <= self.max_patches:
            raise ConfigError("SynthDesign: bad patch count range")
        if not 0.0 <= self.time_noise <= 1.0:
            raise ConfigError("SynthDesign.time_noise must be in [0, 1]")


_CLINICAL_COMBO = np.array([0.6, 0.03, 0.015, 0.8])
_CLINICAL_CENTER = np.array([2.0, 25.0, 60.0, 0.0])


def _clinical_combo(clinical: np.ndarray) -> float:
    # fixed linear read-out of the raw clinical tuple, centered at typical
    # values so the combo is roughly zero-mean
    return float(_CLINICAL_COMBO @ (clinical - _CLINICAL_CENTER))


def synth_cohort(n_patients: int, seed: int,
                 design: SynthDesign = None) -> Cohort:
    """Generate a cohort with known per-patient latent risk.

    Patch embeddings put each patient's image signal along one fixed unit
    direction plus isotropic noise; the signal genes carry a shared latent
    plus noise; clinical covariates are drawn from plausible marginals.
    The realized (not latent) feature read-outs define the risk, so a
    perfect model can in principle reach the oracle's concordance.
    """
    if n_patients < 20:
        raise CohortError(f"synth_cohort: need at least 20 patients, got {n_patients}")
    design = design or SynthDesign()
    rng = rng_stream(seed, stream=1)

    signal_dir = rng.standard_normal(design.d_img)
    signal_dir /= np.linalg.norm(signal_dir)
    signal_gene_idx = np.sort(
        rng.choice(design.n_genes, size=design.n_signal_genes, replace=False)
    )

    patients = []
    risks = np.empty(n_patients)
    for i in range(n_patients):
        n_patches = int(rng.integers(design.min_patches, design.max_patches + 1))
        u_img = rng.standard_normal()
        patches = (u_img * signal_dir[None, :]
                   + design.patch_noise * rng.standard_normal((n_patches, design.d_img)))

        u_gene = rng.standard_normal()
        genes = rng.standard_normal(design.n_genes)
        genes[signal_gene_idx] = (
            u_gene + design.gene_noise * rng.standard_normal(design.n_signal_genes)
        )

        grade = float(rng.integers(1, 4))
        size = float(np.clip(rng.normal(25.0, 8.0), 2.0, None))
        age = float(np.clip(rng.normal(60.0, 12.0), 25.0, 90.0))
        node = float(rng.integers(0, 2))
        clinical = np.array([grade, size, age, node])

        # risk reads the realized features, exactly what a model can see
        img_signal = float(patches @ signal_dir) / n_patches \
            if patches.ndim == 1 else float((patches @ signal_dir).mean())
        gene_signal = float(genes[signal_gene_idx].mean())
        risks[i] = (design.w_img * img_signal
                    + design.w_gene * gene_signal
                    + design.w_clin * _clinical_combo(clinical))
        patients.append((patches, genes, clinical))

    # survival times: geometric blend between the exponential median
    # (deterministic, monotone in risk) and a full exponential draw
    rate = design.base_hazard * np.exp(risks)
    exp_draw = rng.exponential(size=n_patients)
    log_quantile = ((1.0 - design.time_noise) * np.log(np.log(2.0))
                    + design.time_noise * np.log(exp_draw))
    event_times = np.exp(log_quantile) / rate

    # uniform censoring: pick c_max so that exactly round(target * n)
    # subjects are censored. Censored count as a function of c_max steps
    # down by one at each threshold T_i / xi_i, so the midpoint between
    # the two bracketing order statistics hits the target exactly.
    xi = rng.uniform(size=n_patients)
    n_censored = int(round(design.censor_frac * n_patients))
    if n_censored == 0:
        time_days = event_times
        event = np.ones(n_patients, dtype=bool)
    else:
        thresholds = np.sort(event_times / xi)
        lo = thresholds[n_patients - n_censored - 1] if n_censored < n_patients else 0.0
        hi = thresholds[n_patients - n_censored]
        c_max = 0.5 * (lo + hi)
        censor_times = xi * c_max
        event = event_times <= censor_times
        time_days = np.where(event, event_times, censor_times)

    lumb_cut = np.quantile(risks, design.lumb_quantile)
    records = []
    for i, (patches, genes, clinical) in enumerate(patients):
        records.append(PatientRecord(
            id=f"synth-{i:04d}",
            patch_embeddings=patches,
            gene_expr=genes,
            clinical=clinical,
            time_days=float(time_days[i]),
            event=bool(event[i]),
            subtype="LuminalB" if risks[i] > lumb_cut else "LuminalA",
            true_risk=float(risks[i]),
        ))
    return Cohort(records)


# ---------------------------------------------------------------------------
# fold training
# ---------------------------------------------------------------------------

@dataclass
class TrainLog:
    fold: int
    modality: str
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_nll: float = np.inf
    init_val_nll: float = np.nan
    skipped_batches: int = 0


def _whole_fold_nll(params: ModelParams, inputs, outcomes: Outcomes) -> float:
    z = np.array([forward(params, x)[0] for x in inputs])
    loss, _ = nll_loss(RiskBatch(z, outcomes))
    return float(loss)


def train_fold(cohort: Cohort, fold_id: int, cfg: TrainConfig,
               modality: str = "multimodal"):
    """Train one fold with early stopping on whole-fold validation NLL.

    Batches are shuffled every epoch; a batch with no events has no
    defined loss and is skipped (counted in the log). Validation NLL
    treats the entire held-out fold as one risk set. Returns the
    parameters of the best validation epoch, the feature stats they
    assume, and the training log.
    """
    if modality not in MODALITIES:
        raise ConfigError(f"train_fold: unknown modality {modality!r}")
    train_idx, val_idx = cohort.indices_for_fold(fold_id)
    train_records = [cohort.patients[i] for i in train_idx]
    val_records = [cohort.patients[i] for i in val_idx]
    if len(train_records) < cfg.batch_size:
        raise CohortError(
            f"train_fold: training split has {len(train_records)} patients, "
            f"need at least {cfg.batch_size}"
        )
    train_outcomes = cohort.outcomes(train_idx)
    val_outcomes = cohort.outcomes(val_idx)
    if train_outcomes.n_events == 0:
        raise CohortError("train_fold: training split has no events")
    if val_outcomes.n_events == 0:
        raise CohortError("train_fold: validation split has no events")

    stats = FeatureStats.fit(train_records)
    train_inputs = [model_inputs(stats, r) for r in train_records]
    val_inputs = [model_inputs(stats, r) for r in val_records]
    n_genes = train_records[0].gene_expr.size

    params = init_params(
        d_img=cfg.d_img, d=cfg.d, n_genes=n_genes, d_clin=4,
        seed=cfg.seed + fold_id, modality=modality, d_attn=cfg.d_attn,
    )
    state = OptimizerState.init(params)
    shuffle_rng = rng_stream(cfg.seed, stream=1000 + fold_id)

    log = TrainLog(fold=fold_id, modality=modality)
    log.init_val_nll = _whole_fold_nll(params, val_inputs, val_outcomes)

    best_params = copy.deepcopy(params)
    best_val = np.inf
    since_improve = 0
    n_train = len(train_inputs)

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n_train)
        batch_losses = []
        for start in range(0, n_train, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            batch_outcomes = train_outcomes.subset(batch)
            if batch_outcomes.n_events == 0:
                log.skipped_batches += 1
                continue
            tapes = []
            z = np.empty(batch.size)
            for j, b in enumerate(batch):
                z[j], tape = forward(params, train_inputs[b])
                tapes.append(tape)
            loss, dz = nll_loss(RiskBatch(z, batch_outcomes))
            batch_losses.append(loss)
            grads = None
            for j in range(batch.size):
                g = backward(params, tapes[j], upstream_grad=dz[j])
                if grads is None:
                    grads = g
                else:
                    for name in grads:
                        grads[name] += g[name]
            adamw_step(params, grads, state, cfg)

        val_nll = _whole_fold_nll(params, val_inputs, val_outcomes)
        log.epochs.append({
            "epoch": epoch,
            "train_loss": float(np.mean(batch_losses)) if batch_losses else float("nan"),
            "val_loss": val_nll,
            "elapsed_s": time.perf_counter() - t0,
        })
        if val_nll < best_val:
            best_val = val_nll
            best_params = copy.deepcopy(params)
            log.best_epoch = epoch
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= cfg.patience:
                break

    log.best_val_nll = float(best_val)
    return best_params, stats, log


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def ibs_horizons(outcomes: Outcomes):
    """Evaluation horizons standing in for 5 and 10 years.

    Cohorts whose follow-up reaches 10 calendar years use the literal day
    counts; shorter (synthetic) time scales fall back to the 40th and 70th
    percentiles of observed times.
    """
    if outcomes.time.max() >= DAYS_10Y:
        return DAYS_5Y, DAYS_10Y
    h5, h10 = np.percentile(outcomes.time, [40.0, 70.0])
    return float(h5), float(h10)


def eval_risk_scores(val_risks, train_risks, train_outcomes: Outcomes,
                     val_outcomes: Outcomes, horizons=None) -> dict:
    """Fold metrics for any risk score: concordance, two-horizon IBS,
    log-rank on the median risk split."""
    val_risks = np.asarray(val_risks, dtype=np.float64).ravel()
    if horizons is None:
        horizons = ibs_horizons(val_outcomes)
    h5, h10 = horizons

    metrics = {"c_index": float(c_index(val_risks, val_outcomes))}

    baseline = breslow_baseline(train_risks, train_outcomes)
    surv = cox_survival_fn(baseline, val_risks)
    ibs5 = integrated_brier(surv, val_outcomes, h5)
    ibs10 = integrated_brier(surv, val_outcomes, h10)
    metrics["ibs_5y"] = ibs5.value
    metrics["ibs_10y"] = ibs10.value
    metrics["ibs_truncated"] = bool(ibs5.truncated or ibs10.truncated)

    high = median_split(val_risks)
    if high.all() or not high.any():
        metrics["logrank_chi2"] = None
        metrics["logrank_p"] = None
    else:
        chi2, p = logrank_test(val_outcomes.subset(high),
                               val_outcomes.subset(~high))
        metrics["logrank_chi2"] = float(chi2)
        metrics["logrank_p"] = float(p)
    return metrics


def predict_risks(params: ModelParams, stats: FeatureStats, records) -> np.ndarray:
    return np.array([forward(params, model_inputs(stats, r))[0] for r in records])


def eval_fold(params: ModelParams, stats: FeatureStats, cohort: Cohort,
              fold_id: int, horizons=None) -> dict:
    train_idx, val_idx = cohort.indices_for_fold(fold_id)
    train_records = [cohort.patients[i] for i in train_idx]
    val_records = [cohort.patients[i] for i in val_idx]
    train_z = predict_risks(params, stats, train_records)
    val_z = predict_risks(params, stats, val_records)
    metrics = eval_risk_scores(val_z, train_z, cohort.outcomes(train_idx),
                               cohort.outcomes(val_idx), horizons)
    metrics["n_val"] = len(val_records)
    return metrics, val_z


def _clinical_matrix(stats: FeatureStats, records) -> np.ndarray:
    return np.stack([stats.clinical_features(r) for r in records])


def train_clinical_fold(cohort: Cohort, fold_id: int):
    """Proportional-hazards baseline on the four clinical covariates."""
    train_idx, _ = cohort.indices_for_fold(fold_id)
    train_records = [cohort.patients[i] for i in train_idx]
    stats = FeatureStats.fit(train_records)
    x = _clinical_matrix(stats, train_records)
    model = fit_coxph(x, cohort.outcomes(train_idx))
    return model, stats


def eval_clinical_fold(model, stats: FeatureStats, cohort: Cohort,
                       fold_id: int, horizons=None):
    train_idx, val_idx = cohort.indices_for_fold(fold_id)
    train_records = [cohort.patients[i] for i in train_idx]
    val_records = [cohort.patients[i] for i in val_idx]
    train_z = model.predict_log_hazard(_clinical_matrix(stats, train_records))
    val_z = model.predict_log_hazard(_clinical_matrix(stats, val_records))
    metrics = eval_risk_scores(val_z, train_z, cohort.outcomes(train_idx),
                               cohort.outcomes(val_idx), horizons)
    metrics["n_val"] = len(val_records)
    return metrics, val_z


# ---------------------------------------------------------------------------
# cross-validated run
# ---------------------------------------------------------------------------

REPORT_MODALITIES = ("multimodal", "imaging_genetic", "imaging", "clinical")


def _mean_sd(values):
    arr = np.array([v for v in values if v is not None], dtype=np.float64)
    if arr.size == 0:
        return None, None
    mean = float(arr.mean())
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, sd


def summarize_folds(fold_metrics: list) -> dict:
    """Per-metric mean and sample (n-1) standard deviation."""
    summary = {}
    for key in ("c_index", "ibs_5y", "ibs_10y", "logrank_p"):
        mean, sd = _mean_sd([f.get(key) for f in fold_metrics])
        summary[key] = {"mean": mean, "sd": sd}
    return summary


def run_cv(cohort: Cohort, cfg: TrainConfig,
           modalities=REPORT_MODALITIES, k: int = 5, collect=None) -> dict:
    """Train and evaluate every fold for each requested modality.

    Fold assignments are created from cfg.seed when the cohort has none.
    Horizons are fixed cohort-wide before training. The report carries
    per-fold metrics plus mean and sample sd per modality; ``collect``
    (if given) receives (modality, fold, artifacts) for checkpointing.
    """
    for m in modalities:
        if m not in REPORT_MODALITIES:
            raise ConfigError(f"run_cv: unknown modality {m!r}")
    if cohort.fold_assignments is None:
        cohort = replace(cohort, fold_assignments=stratified_folds(cohort, k, cfg.seed))
    horizons = ibs_horizons(cohort.outcomes())

    report = {
        "schema_version": 1,
        "config": cfg.to_dict(),
        "n_patients": len(cohort),
        "n_folds": int(k),
        "horizons": {"ibs_5y_days": horizons[0], "ibs_10y_days": horizons[1]},
        "modalities": {},
    }
    for modality in modalities:
        fold_entries = []
        for fold_id in range(k):
            if modality == "clinical":
                model, stats = train_clinical_fold(cohort, fold_id)
                metrics, val_z = eval_clinical_fold(model, stats, cohort,
                                                    fold_id, horizons)
                artifacts = {"coxph": model, "stats": stats, "val_risks": val_z}
            else:
                params, stats, log = train_fold(cohort, fold_id, cfg, modality)
                metrics, val_z = eval_fold(params, stats, cohort, fold_id, horizons)
                metrics["best_epoch"] = log.best_epoch
                metrics["epochs_run"] = len(log.epochs)
                artifacts = {"params": params, "stats": stats, "log": log,
                             "val_risks": val_z}
            metrics["fold"] = fold_id
            fold_entries.append(metrics)
            if collect is not None:
                collect(modality, fold_id, artifacts)
        report["modalities"][modality] = {
            "folds": fold_entries,
            "summary": summarize_folds(fold_entries),
        }
    return report


# ---------------------------------------------------------------------------
# manifest io
# ---------------------------------------------------------------------------

def _gene_columns(n_genes: int):
    return [f"gene_{j + 1}" for j in range(n_genes)]


def save_cohort(out_dir, cohort: Cohort) -> str:
    """Write a cohort as manifest.csv plus one embeddings file per patient.

    Floats are written with repr-style shortest round-trip formatting, so
    identical cohorts serialize to identical bytes.
    """
    os.makedirs(out_dir, exist_ok=True)
    emb_dir = os.path.join(out_dir, "embeddings")
    os.makedirs(emb_dir, exist_ok=True)
    n_genes = cohort.patients[0].gene_expr.size
    manifest_path = os.path.join(out_dir, "manifest.csv")
    with open(manifest_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIXED_COLUMNS + _gene_columns(n_genes))
        for p in cohort.patients:
            rel = os.path.join("embeddings", f"{p.id}.fmat")
            write_fmat(os.path.join(out_dir, rel), p.patch_embeddings)
            row = [
                p.id, rel, repr(float(p.time_days)), str(int(p.event)), p.subtype,
                repr(float(p.clinical[0])), repr(float(p.clinical[1])),
                repr(float(p.clinical[2])), repr(float(p.clinical[3])),
            ] + [repr(float(g)) for g in p.gene_expr]
            writer.writerow(row)
    return manifest_path


def load_cohort(manifest_path) -> Cohort:
    """Read a manifest written by save_cohort (or hand-authored to match).

    Every cell must be present and parseable; embeddings paths resolve
    relative to the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortError(f"{manifest_path}: empty manifest") from None
        if header[:len(MANIFEST_FIXED_COLUMNS)] != MANIFEST_FIXED_COLUMNS:
            raise CohortError(
                f"{manifest_path}: header must start with "
                f"{','.join(MANIFEST_FIXED_COLUMNS)}"
            )
        gene_cols = header[len(MANIFEST_FIXED_COLUMNS):]
        if gene_cols != _gene_columns(len(gene_cols)) or not gene_cols:
            raise CohortError(
                f"{manifest_path}: gene columns must be gene_1..gene_N in order"
            )

        patients = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CohortError(
                    f"{manifest_path}:{line_no}: {len(row)} cells, "
                    f"expected {len(header)}"
                )
            if any(cell.strip() == "" for cell in row):
                raise CohortError(f"{manifest_path}:{line_no}: missing value")
            try:
                pid, emb_rel, time_s, event_s, subtype = row[:5]
                clinical = np.array([float(v) for v in row[5:9]])
                genes = np.array([float(v) for v in row[9:]])
                if event_s not in ("0", "1"):
                    raise ValueError(f"event must be 0 or 1, got {event_s!r}")
                emb = read_fmat(os.path.join(base, emb_rel))
                patients.append(PatientRecord(
                    id=pid, patch_embeddings=emb, gene_expr=genes,
                    clinical=clinical, time_days=float(time_s),
                    event=event_s == "1", subtype=subtype,
                ))
            except (ValueError, OSError, CohortError, ShapeError, DomainError) as exc:
                raise CohortError(f"{manifest_path}:{line_no}: {exc}") from exc
    if not patients:
        raise CohortError(f"{manifest_path}: no patient rows")
    return Cohort(patients)
