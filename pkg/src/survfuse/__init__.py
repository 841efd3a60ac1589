"""Multimodal survival-risk pipeline: attention-based patch aggregation,
dual cross-attention image/gene fusion with late clinical concatenation,
Cox partial-likelihood training, stain preprocessing, and a survival
statistics toolkit."""

from .errors import SurvfuseError
from .fusion import (
    AttentionBlock,
    ModelParams,
    backward,
    dual_cross_attend,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    self_attend_aggregate,
)
from .harness import (
    Cohort,
    PatientRecord,
    SynthDesign,
    TrainConfig,
    adamw_step,
    load_cohort,
    run_cv,
    save_cohort,
    stratified_folds,
    synth_cohort,
    train_fold,
)
from .stainprep import (
    StainProfile,
    estimate_stain_profile,
    extract_patches,
    normalize_patch,
    tissue_mask,
)
from .survloss import Outcomes, RiskBatch, hazards, nll_loss, risk_set
from .survstats import (
    SurvCurve,
    c_index,
    fit_coxph,
    integrated_brier,
    kaplan_meier,
    logrank_test,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionBlock", "Cohort", "ModelParams", "Outcomes", "PatientRecord",
    "RiskBatch", "StainProfile", "SurvCurve", "SurvfuseError", "SynthDesign",
    "TrainConfig", "adamw_step", "backward", "c_index", "dual_cross_attend",
    "estimate_stain_profile", "extract_patches", "fit_coxph", "forward",
    "hazards", "init_params", "integrated_brier", "kaplan_meier",
    "load_checkpoint", "load_cohort", "logrank_test", "nll_loss",
    "normalize_patch", "risk_set", "run_cv", "save_checkpoint", "save_cohort",
    "self_attend_aggregate", "stratified_folds", "synth_cohort", "tissue_mask",
    "train_fold", "__version__",
]
