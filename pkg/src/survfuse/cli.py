"""Command-line interface: preprocess, synth, train, evaluate, km.

Configuration comes from an optional key=value file plus flags; flags win.
Every randomized command demands an explicit seed, every report is JSON
with a schema_version, and all output files are written atomically
(write to a temp name, then rename).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from .errors import CohortError, ConfigError, SurvfuseError
from .fusion import load_checkpoint, save_checkpoint
from .harness import (
    REPORT_MODALITIES,
    Cohort,
    FeatureStats,
    SynthDesign,
    TrainConfig,
    eval_clinical_fold,
    eval_fold,
    ibs_horizons,
    load_cohort,
    run_cv,
    save_cohort,
    stratified_folds,
    synth_cohort,
)
from .plots import render_km_svg
from .stainprep import (
    estimate_stain_profile,
    extract_patches,
    load_profile,
    load_rgb,
    normalize_patch,
    save_rgb,
    tissue_mask,
)
from .survloss import Outcomes
from .survstats import BaselineHazard, CoxPHModel, kaplan_meier, logrank_test, median_split

SCHEMA_VERSION = 1

MODALITY_LABELS = {
    "multimodal": "Multimodal",
    "imaging_genetic": "Imaging+Genetic",
    "imaging": "Imaging",
    "clinical": "Clinical",
}

IMAGE_SUFFIXES = (".png", ".ppm")


# ---------------------------------------------------------------------------
# small io helpers
# ---------------------------------------------------------------------------

def atomic_write_text(path, text: str):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json_report(path, payload: dict):
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv_atomic(path, rows):
    buf = io.StringIO()
    writer = csv.writer(buf)
    for row in rows:
        writer.writerow(row)
    atomic_write_text(path, buf.getvalue())


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def parse_config_file(path):
    """Read `key = value` lines; '#' lines are comments. Returns
    [(line_no, key, raw_value)] and rejects malformed or duplicate keys."""
    entries = []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = key.strip()
            value = value.strip()
            if not key:
                raise ConfigError(f"{path}:{line_no}: empty key")
            if key in seen:
                raise ConfigError(
                    f"{path}:{line_no}: duplicate key '{key}' "
                    f"(first set on line {seen[key]})"
                )
            seen[key] = line_no
            entries.append((line_no, key, value))
    return entries


def _to_int(s):
    return int(s)


def _to_float(s):
    return float(s)


def _to_str(s):
    return s


def resolve_config(command: str, schema: dict, args, flag_names: dict):
    """defaults < config file < flags; unknown config keys are fatal.

    schema: key -> (converter, default). flag_names maps schema keys to
    argparse attribute names. Returns the effective settings dict.
    """
    effective = {key: default for key, (_, default) in schema.items()}
    config_path = getattr(args, "config", None)
    if config_path:
        for line_no, key, raw in parse_config_file(config_path):
            if key not in schema:
                raise ConfigError(
                    f"{config_path}:{line_no}: unknown key '{key}' "
                    f"for command '{command}'"
                )
            convert, _ = schema[key]
            try:
                effective[key] = convert(raw)
            except ValueError as exc:
                raise ConfigError(
                    f"{config_path}:{line_no}: bad value for '{key}': {exc}"
                ) from exc
    for key in schema:
        flag_value = getattr(args, flag_names.get(key, key), None)
        if flag_value is not None:
            effective[key] = flag_value
    return effective


def require(effective: dict, command: str, *keys):
    for key in keys:
        if effective.get(key) is None:
            raise ConfigError(
                f"{command}: '{key}' is required (flag --{key.replace('_', '-')} "
                f"or config file)"
            )


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------

PREPROCESS_SCHEMA = {
    "input": (_to_str, None),
    "out": (_to_str, None),
    "target_profile": (_to_str, None),
    "patch_size": (_to_int, 224),
    "min_tissue": (_to_float, 0.5),
    "sat_threshold": (_to_float, 0.07),
    "alpha": (_to_float, 1.0),
    "beta": (_to_float, 0.15),
}


def cmd_preprocess(args) -> int:
    cfg = resolve_config("preprocess", PREPROCESS_SCHEMA, args, {})
    require(cfg, "preprocess", "input", "out", "target_profile")
    target = load_profile(cfg["target_profile"])

    files = sorted(
        f for f in os.listdir(cfg["input"])
        if f.lower().endswith(IMAGE_SUFFIXES)
    )
    out_dir = cfg["out"]
    patches_dir = os.path.join(out_dir, "patches")
    os.makedirs(patches_dir, exist_ok=True)

    manifest_rows = [["filename", "source_image", "row", "col"]]
    failures = []
    statuses = {}
    for name in files:
        path = os.path.join(cfg["input"], name)
        stem = os.path.splitext(name)[0]
        try:
            img = load_rgb(path)
            mask = tissue_mask(img, cfg["sat_threshold"])
            grid = extract_patches(img, mask, cfg["patch_size"], cfg["min_tissue"])
            if len(grid) == 0:
                statuses[name] = "no_patches"
                continue
            profile = estimate_stain_profile(img, mask, cfg["alpha"], cfg["beta"])
            for i, (r, c) in enumerate(grid.origins):
                normalized = normalize_patch(grid.slice(img, i), profile, target)
                patch_name = f"{stem}_r{r}_c{c}.png"
                save_rgb(os.path.join(patches_dir, patch_name), normalized)
                manifest_rows.append([patch_name, name, str(r), str(c)])
            statuses[name] = f"ok:{len(grid)}"
        except (SurvfuseError, OSError, ValueError) as exc:
            failures.append((name, str(exc)))
            statuses[name] = f"error:{exc}"
            print(f"preprocess: {name}: {exc}", file=sys.stderr)

    write_csv_atomic(os.path.join(out_dir, "manifest.csv"), manifest_rows)
    write_json_report(os.path.join(out_dir, "preprocess_report.json"), {
        "schema_version": SCHEMA_VERSION,
        "config": cfg,
        "n_images": len(files),
        "n_patches": len(manifest_rows) - 1,
        "per_image": statuses,
        "errors": [{"file": f, "message": m} for f, m in failures],
    })
    if not files:
        print("preprocess: input directory has no images", file=sys.stderr)
        return 0
    return 1 if len(failures) == len(files) else 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

SYNTH_SCHEMA = {
    "out": (_to_str, None),
    "n": (_to_int, None),
    "seed": (_to_int, None),
    "censor_frac": (_to_float, 0.3),
    "patch_noise": (_to_float, 0.3),
    "gene_noise": (_to_float, 0.3),
    "time_noise": (_to_float, 1.0),
    "n_signal_genes": (_to_int, 8),
    "w_img": (_to_float, 2.0),
    "w_gene": (_to_float, 2.5),
    "w_clin": (_to_float, 1.5),
    "base_hazard": (_to_float, 0.001),
    "d_img": (_to_int, 16),
    "n_genes": (_to_int, 50),
}


def cmd_synth(args) -> int:
    cfg = resolve_config("synth", SYNTH_SCHEMA, args, {})
    require(cfg, "synth", "out", "n", "seed")
    design = SynthDesign(
        d_img=cfg["d_img"], n_genes=cfg["n_genes"],
        n_signal_genes=cfg["n_signal_genes"],
        w_img=cfg["w_img"], w_gene=cfg["w_gene"], w_clin=cfg["w_clin"],
        patch_noise=cfg["patch_noise"], gene_noise=cfg["gene_noise"],
        time_noise=cfg["time_noise"], base_hazard=cfg["base_hazard"],
        censor_frac=cfg["censor_frac"],
    )
    cohort = synth_cohort(cfg["n"], cfg["seed"], design)
    save_cohort(cfg["out"], cohort)
    outcomes = cohort.outcomes()
    write_json_report(os.path.join(cfg["out"], "synth_report.json"), {
        "schema_version": SCHEMA_VERSION,
        "config": cfg,
        "n_patients": len(cohort),
        "n_events": outcomes.n_events,
        "censored_frac": 1.0 - outcomes.n_events / len(cohort),
        "true_risks": {p.id: p.true_risk for p in cohort.patients},
    })
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _to_modalities(s):
    mods = tuple(m.strip() for m in s.split(",") if m.strip())
    bad = [m for m in mods if m not in REPORT_MODALITIES]
    if bad:
        raise ValueError(
            f"unknown modalities {bad}; choose from {', '.join(REPORT_MODALITIES)}"
        )
    if not mods:
        raise ValueError("empty modality list")
    return mods


TRAIN_SCHEMA = {
    "manifest": (_to_str, None),
    "out": (_to_str, None),
    "seed": (_to_int, None),
    "modalities": (_to_modalities, REPORT_MODALITIES),
    "folds": (_to_int, 5),
    "lr": (_to_float, 0.001),
    "batch_size": (_to_int, 12),
    "max_epochs": (_to_int, 150),
    "patience": (_to_int, 5),
    "weight_decay": (_to_float, 0.01),
    "d_img": (_to_int, 16),
    "d": (_to_int, 16),
    "d_attn": (_to_int, 0),  # 0 means "same as d"
}


def _train_config(cfg) -> TrainConfig:
    return TrainConfig(
        lr=cfg["lr"], batch_size=cfg["batch_size"], max_epochs=cfg["max_epochs"],
        patience=cfg["patience"], weight_decay=cfg["weight_decay"],
        seed=cfg["seed"], d_img=cfg["d_img"], d=cfg["d"],
        d_attn=cfg["d_attn"] or None,
    )


def cmd_train(args) -> int:
    cfg = resolve_config("train", TRAIN_SCHEMA, args, {})
    require(cfg, "train", "manifest", "out", "seed")
    cohort = load_cohort(cfg["manifest"])
    assignments = stratified_folds(cohort, cfg["folds"], cfg["seed"])
    cohort = Cohort(cohort.patients, assignments)
    tc = _train_config(cfg)
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)

    logs = []
    config_echo = {**cfg, "modalities": list(cfg["modalities"])}

    def collect(modality, fold_id, artifacts):
        if modality == "clinical":
            model = artifacts["coxph"]
            payload = {
                "schema_version": SCHEMA_VERSION,
                "modality": modality,
                "fold": fold_id,
                "coefficients": model.coefficients.tolist(),
                "baseline_times": model.baseline.times.tolist(),
                "baseline_increments": model.baseline.increments.tolist(),
                "log_likelihood": model.log_likelihood,
                "n_iter": model.n_iter,
                "score_norm": model.score_norm,
                "stats": artifacts["stats"].to_dict(),
                "config": config_echo,
            }
            write_json_report(
                os.path.join(out_dir, f"checkpoint_clinical_fold{fold_id}.json"),
                payload,
            )
        else:
            log = artifacts["log"]
            tmp = os.path.join(out_dir, f"checkpoint_{modality}_fold{fold_id}.ckpt.tmp")
            save_checkpoint(tmp, artifacts["params"], extra={
                "fold": fold_id,
                "seed": cfg["seed"],
                "stats": artifacts["stats"].to_dict(),
                "config": config_echo,
                "best_epoch": log.best_epoch,
                "best_val_nll": log.best_val_nll,
            })
            os.replace(tmp, tmp[:-4])
            logs.append({
                "modality": modality,
                "fold": fold_id,
                "best_epoch": log.best_epoch,
                "best_val_nll": log.best_val_nll,
                "init_val_nll": log.init_val_nll,
                "skipped_batches": log.skipped_batches,
                "epochs": log.epochs,
            })

    report = run_cv(cohort, tc, cfg["modalities"], k=cfg["folds"], collect=collect)
    report["config_file_echo"] = config_echo

    write_json_report(os.path.join(out_dir, "train_report.json"), report)
    write_json_report(os.path.join(out_dir, "folds.json"), {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg["seed"],
        "k": cfg["folds"],
        "assignments": {p.id: int(f) for p, f in zip(cohort.patients, assignments)},
    })
    # timing lives in the log, never in reports, so reports stay
    # byte-identical across reruns
    atomic_write_text(
        os.path.join(out_dir, "training_log.json"),
        json.dumps({"schema_version": SCHEMA_VERSION, "runs": logs}, indent=2,
                   sort_keys=True) + "\n",
    )
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

EVALUATE_SCHEMA = {
    "manifest": (_to_str, None),
    "checkpoints": (_to_str, None),
    "out": (_to_str, None),
}


def _load_fold_assignments(checkpoint_dir, cohort: Cohort):
    folds_path = os.path.join(checkpoint_dir, "folds.json")
    if not os.path.exists(folds_path):
        raise CohortError(f"evaluate: {folds_path} not found (run train first)")
    with open(folds_path, encoding="utf-8") as fh:
        payload = json.load(fh)
    mapping = payload["assignments"]
    missing = [p.id for p in cohort.patients if p.id not in mapping]
    if missing:
        raise CohortError(
            f"evaluate: fold assignments missing for {len(missing)} patients "
            f"(first: {missing[0]})"
        )
    return np.array([mapping[p.id] for p in cohort.patients]), int(payload["k"])


def _clinical_model_from_json(payload) -> CoxPHModel:
    return CoxPHModel(
        coefficients=np.array(payload["coefficients"]),
        baseline=BaselineHazard(
            np.array(payload["baseline_times"]),
            np.array(payload["baseline_increments"]),
        ),
        log_likelihood=payload["log_likelihood"],
        n_iter=payload["n_iter"],
        score_norm=payload["score_norm"],
    )


def cmd_evaluate(args) -> int:
    from .harness import summarize_folds  # local import keeps top tidy

    cfg = resolve_config("evaluate", EVALUATE_SCHEMA, args, {})
    require(cfg, "evaluate", "manifest", "checkpoints", "out")
    cohort = load_cohort(cfg["manifest"])
    assignments, k = _load_fold_assignments(cfg["checkpoints"], cohort)
    cohort = Cohort(cohort.patients, assignments)
    horizons = ibs_horizons(cohort.outcomes())
    os.makedirs(cfg["out"], exist_ok=True)

    modality_results = {}
    risk_rows = [["id", "modality", "fold", "log_hazard", "time_days", "event"]]
    for modality in REPORT_MODALITIES:
        fold_entries = []
        for fold_id in range(k):
            if modality == "clinical":
                path = os.path.join(
                    cfg["checkpoints"], f"checkpoint_clinical_fold{fold_id}.json"
                )
                if not os.path.exists(path):
                    break
                with open(path, encoding="utf-8") as fh:
                    payload = json.load(fh)
                model = _clinical_model_from_json(payload)
                stats = FeatureStats.from_dict(payload["stats"])
                metrics, val_z = eval_clinical_fold(model, stats, cohort,
                                                    fold_id, horizons)
            else:
                path = os.path.join(
                    cfg["checkpoints"], f"checkpoint_{modality}_fold{fold_id}.ckpt"
                )
                if not os.path.exists(path):
                    break
                params, extra = load_checkpoint(path)
                stats = FeatureStats.from_dict(extra["stats"])
                metrics, val_z = eval_fold(params, stats, cohort, fold_id, horizons)
            metrics["fold"] = fold_id
            fold_entries.append(metrics)
            _, val_idx = cohort.indices_for_fold(fold_id)
            for i, z in zip(val_idx, val_z):
                p = cohort.patients[i]
                risk_rows.append([
                    p.id, modality, str(fold_id), repr(float(z)),
                    repr(float(p.time_days)), str(int(p.event)),
                ])
        if len(fold_entries) == k:
            modality_results[modality] = {
                "folds": fold_entries,
                "summary": summarize_folds(fold_entries),
            }

    if not modality_results:
        raise CohortError(
            f"evaluate: no complete checkpoint set found in {cfg['checkpoints']}"
        )

    write_json_report(os.path.join(cfg["out"], "evaluation.json"), {
        "schema_version": SCHEMA_VERSION,
        "config": cfg,
        "horizons": {"ibs_5y_days": horizons[0], "ibs_10y_days": horizons[1]},
        "n_patients": len(cohort),
        "modalities": modality_results,
    })

    # flat CSV in the shape of the headline results table: one column per
    # modality group, one row per fold plus a mean +/- sd row
    header = ["fold"] + [MODALITY_LABELS[m] for m in REPORT_MODALITIES]
    table = [header]
    for fold_id in range(k):
        row = [str(fold_id + 1)]
        for m in REPORT_MODALITIES:
            if m in modality_results:
                row.append(f"{modality_results[m]['folds'][fold_id]['c_index']:.4f}")
            else:
                row.append("")
        table.append(row)
    mean_row = ["mean +/- sd"]
    for m in REPORT_MODALITIES:
        if m in modality_results:
            s = modality_results[m]["summary"]["c_index"]
            mean_row.append(f"{s['mean']:.2f} +/- {s['sd']:.2f}")
        else:
            mean_row.append("")
    table.append(mean_row)
    write_csv_atomic(os.path.join(cfg["out"], "evaluation.csv"), table)
    write_csv_atomic(os.path.join(cfg["out"], "risks.csv"), risk_rows)
    return 0


# ---------------------------------------------------------------------------
# km
# ---------------------------------------------------------------------------

KM_SCHEMA = {
    "risks": (_to_str, None),
    "groups": (_to_str, None),
    "modality": (_to_str, "multimodal"),
    "out": (_to_str, None),
    "title": (_to_str, None),
}


def _read_risk_groups(path, modality):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"id", "modality", "fold", "log_hazard", "time_days", "event"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise CohortError(f"{path}: expected columns {sorted(needed)}")
        for row in reader:
            if row["modality"] == modality:
                rows.append(row)
    if not rows:
        raise CohortError(f"{path}: no rows for modality '{modality}'")
    risks = np.array([float(r["log_hazard"]) for r in rows])
    times = np.array([float(r["time_days"]) for r in rows])
    events = np.array([r["event"] == "1" for r in rows])
    high = median_split(risks)
    groups = []
    for label, mask in (("High risk", high), ("Low risk", ~high)):
        if mask.any():
            groups.append((label, Outcomes(times[mask], events[mask])))
    return groups


def _read_label_groups(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"time_days", "event", "group"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise CohortError(f"{path}: expected columns {sorted(needed)}")
        by_label = {}
        for row in reader:
            by_label.setdefault(row["group"], []).append(
                (float(row["time_days"]), row["event"] == "1")
            )
    groups = []
    for label in sorted(by_label):
        times = np.array([t for t, _ in by_label[label]])
        events = np.array([e for _, e in by_label[label]])
        groups.append((label, Outcomes(times, events)))
    if not groups:
        raise CohortError(f"{path}: no rows")
    return groups


def cmd_km(args) -> int:
    cfg = resolve_config("km", KM_SCHEMA, args, {})
    require(cfg, "km", "out")
    if bool(cfg["risks"]) == bool(cfg["groups"]):
        raise ConfigError("km: give exactly one of 'risks' or 'groups'")
    if cfg["risks"]:
        groups = _read_risk_groups(cfg["risks"], cfg["modality"])
    else:
        groups = _read_label_groups(cfg["groups"])
    os.makedirs(cfg["out"], exist_ok=True)

    if len(groups) == 2:
        chi2, p = logrank_test(groups[0][1], groups[1][1])
        p_text = "p < 1e-4" if p < 1e-4 else f"p = {p:.4g}"
        annotation = f"log-rank chi2 = {chi2:.3f}, {p_text}"
    else:
        annotation = f"log-rank: not applicable ({len(groups)} group(s))"
        print(f"km: {annotation}", file=sys.stderr)

    rows = [["group", "time_days", "surv_prob", "at_risk", "n_events",
             "ci_low", "ci_high"]]
    plot_groups = []
    for label, outcomes in groups:
        curve = kaplan_meier(outcomes)
        lo, hi = curve.confidence_bands()
        for i in range(curve.times.size):
            rows.append([
                label, repr(float(curve.times[i])), repr(float(curve.surv_prob[i])),
                str(int(curve.at_risk[i])), str(int(curve.n_events[i])),
                repr(float(lo[i])), repr(float(hi[i])),
            ])
        plot_groups.append((label, curve, float(outcomes.time.max())))

    write_csv_atomic(os.path.join(cfg["out"], "km.csv"), rows)
    render_km_svg(os.path.join(cfg["out"], "km.svg"), plot_groups,
                  annotation=annotation, title=cfg["title"])
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="survfuse",
        description="Multimodal survival pipeline: preprocessing, synthetic "
                    "cohorts, cross-validated training, evaluation, KM plots.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="mask, tile and stain-normalize images")
    p.add_argument("--config")
    p.add_argument("--input")
    p.add_argument("--out")
    p.add_argument("--target-profile", dest="target_profile")
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--min-tissue", dest="min_tissue", type=float)
    p.add_argument("--sat-threshold", dest="sat_threshold", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="generate a synthetic cohort with known risk")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--censor-frac", dest="censor_frac", type=float)
    p.add_argument("--patch-noise", dest="patch_noise", type=float)
    p.add_argument("--gene-noise", dest="gene_noise", type=float)
    p.add_argument("--time-noise", dest="time_noise", type=float)
    p.add_argument("--n-signal-genes", dest="n_signal_genes", type=int)
    p.add_argument("--w-img", dest="w_img", type=float)
    p.add_argument("--w-gene", dest="w_gene", type=float)
    p.add_argument("--w-clin", dest="w_clin", type=float)
    p.add_argument("--base-hazard", dest="base_hazard", type=float)
    p.add_argument("--d-img", dest="d_img", type=int)
    p.add_argument("--n-genes", dest="n_genes", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="cross-validated training on a manifest")
    p.add_argument("--config")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--modalities", type=_to_modalities)
    p.add_argument("--folds", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--d-img", dest="d_img", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--d-attn", dest="d_attn", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics report from saved checkpoints")
    p.add_argument("--config")
    p.add_argument("--manifest")
    p.add_argument("--checkpoints")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("km", help="Kaplan-Meier curves, CSV and SVG")
    p.add_argument("--config")
    p.add_argument("--risks")
    p.add_argument("--groups")
    p.add_argument("--modality")
    p.add_argument("--out")
    p.add_argument("--title")
    p.set_defaults(func=cmd_km)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SurvfuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
