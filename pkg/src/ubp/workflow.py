"""Run orchestration behind the CLI: dataset synthesis, fold-by-fold
training, evaluation with fusion, and figure regeneration.

Commands are idempotent for a fixed config and seed: outputs are
re-derived deterministically and rewritten byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import report
from .errors import (ConfigurationError, IntegrityError, MissingInputError,
                     UbpError)
from .evaluation import (compute_report, confidence_curve, mae, mean_regressor,
                         subgroup_report, write_curve_csv, write_metrics_csv,
                         write_subgroup_csv, DEFAULT_CURVE_GRID)
from .neural import build_model, load_checkpoint, save_checkpoint
from .pipeline import (FeatureCache, LabelScaler, TrainConfig, TrainResult,
                       audit_plan, compute_fusion_context, make_folds,
                       predict_records, records_for, train_modality)
from .synth import (GeneratorConfig, config_from_dict, export_dataset,
                    generate_dataset, load_dataset, _config_to_dict)
from .uncertainty import (MODALITIES, TARGETS, fuse_prediction,
                          write_fusion_csv)

SEED_ENV_VAR = "UBP_SEED"

FUSED_METHODS = ("mean-fuse", "uda-fuse")
ALL_METHODS = MODALITIES + FUSED_METHODS + ("mean_regressor",)


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one experiment."""

    seed: int = 0
    workdir: str = "."
    dataset_dir: str = "dataset"
    run_dir: str = "run"
    subjects: int = 100
    sessions: tuple[int, int] = (2, 5)
    modalities: tuple[str, ...] = MODALITIES
    workers: int = 2
    init_from: str | None = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    training: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.subjects < 5:
            raise ConfigurationError("need at least 5 subjects")
        lo, hi = self.sessions
        if not (1 <= lo <= hi):
            raise ConfigurationError("sessions must satisfy 1 <= low <= high")
        unknown = set(self.modalities) - set(MODALITIES)
        if unknown or not self.modalities:
            raise ConfigurationError(
                f"modalities must be a non-empty subset of {MODALITIES}")
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1")

    def dataset_path(self) -> Path:
        return Path(self.workdir) / self.dataset_dir

    def run_path(self) -> Path:
        return Path(self.workdir) / self.run_dir

    def to_dict(self) -> dict:
        raw = dataclasses.asdict(self)
        raw["generator"] = _config_to_dict(self.generator)
        training = dataclasses.asdict(self.training)
        raw["training"] = training
        return raw


def _reject_unknown(raw: dict, cls, context: str):
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - valid
    if unknown:
        raise ConfigurationError(f"unknown {context} keys: {sorted(unknown)}")


def config_from_mapping(raw: dict) -> RunConfig:
    raw = dict(raw)
    generator = raw.pop("generator", None)
    training = raw.pop("training", None)
    _reject_unknown(raw, RunConfig, "config")
    kwargs = {}
    for key, value in raw.items():
        if key in ("sessions", "modalities") and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    if generator is not None:
        kwargs["generator"] = config_from_dict(generator)
    if training is not None:
        _reject_unknown(training, TrainConfig, "training")
        training = {k: tuple(v) if isinstance(v, list) else v
                    for k, v in training.items()}
        kwargs["training"] = TrainConfig(**training)
    return RunConfig(**kwargs)


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return json.loads(text)
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text)
    raise ConfigurationError(
        f"config file must be .toml or .json, got {path.suffix!r}")


def resolve_config(config_path=None, overrides: dict | None = None) -> RunConfig:
    """Build the RunConfig from an optional file plus flag overrides.

    Seed priority: explicit override, then config file, then the
    UBP_SEED environment variable, then 0.
    """
    raw = load_config_file(config_path) if config_path else {}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    training_overrides = overrides.pop("training", {})
    if training_overrides:
        merged = dict(raw.get("training", {}))
        merged.update(training_overrides)
        raw["training"] = merged
    raw.update(overrides)
    if "seed" not in raw:
        env_seed = os.environ.get(SEED_ENV_VAR)
        if env_seed is not None:
            try:
                raw["seed"] = int(env_seed)
            except ValueError:
                raise ConfigurationError(
                    f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}")
    return config_from_mapping(raw)


def _write_resolved(config: RunConfig, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


def run_synth(config: RunConfig) -> dict:
    """Generate and export the synthetic dataset; returns a summary."""
    records = generate_dataset(config.subjects, config.sessions, config.seed,
                               config.generator)
    out_dir = config.dataset_path()
    digest = export_dataset(records, out_dir, config.generator, config.seed)
    _write_resolved(config, out_dir)
    return {"dataset": str(out_dir), "records": len(records), "digest": digest}


_WORKER_DATASET = {}


def _worker_init():
    # Keep each worker single-threaded in BLAS: two workers on two cores
    # beats one oversubscribed process.
    os.environ["OPENBLAS_NUM_THREADS"] = "1"
    os.environ["OMP_NUM_THREADS"] = "1"
    os.environ["MKL_NUM_THREADS"] = "1"


def _load_records_cached(dataset_dir: str):
    if dataset_dir not in _WORKER_DATASET:
        _WORKER_DATASET[dataset_dir] = load_dataset(dataset_dir)[0]
    return _WORKER_DATASET[dataset_dir]


def _train_job(args: dict) -> dict:
    records = _load_records_cached(args["dataset_dir"])
    plan = args["plan"]
    init_state = None
    if args["init_from"] is not None:
        stem = Path(args["init_from"]) / "checkpoints" / args["stem"]
        init_state = load_checkpoint(stem).values
    result = train_modality(
        records, plan, args["fold"], args["modality"], args["config"],
        args["seed"], init_state=init_state, fine_tune=init_state is not None)
    return {
        "fold": args["fold"],
        "modality": args["modality"],
        "arch": result.model.arch,
        "state": result.model.state(),
        "scaler": result.scaler.to_dict(),
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
        "history": result.history,
        "seed": result.seed,
    }


def run_train(config: RunConfig) -> dict:
    """Train every (fold, modality) job and persist checkpoints.

    The run manifest is written before any job starts and flipped to
    "complete" only after the last checkpoint lands, so an interrupted run
    is visibly incomplete.
    """
    dataset_dir = config.dataset_path()
    records, _ = load_dataset(dataset_dir)
    plan = make_folds(records, config.training.fold_count, config.seed,
                      config.training.validation_fraction)
    audit = audit_plan(plan, records)

    run_dir = config.run_path()
    checkpoints = run_dir / "checkpoints"
    checkpoints.mkdir(parents=True, exist_ok=True)
    _write_resolved(config, run_dir)

    jobs = [
        {"dataset_dir": str(dataset_dir), "plan": plan, "fold": fold,
         "modality": modality, "config": config.training, "seed": config.seed,
         "init_from": config.init_from,
         "stem": f"fold{fold}_{modality}"}
        for fold in range(plan.fold_count)
        for modality in config.modalities
    ]

    manifest_path = run_dir / "run.json"
    manifest = {
        "status": "incomplete",
        "seed": config.seed,
        "plan_digest": audit["plan_digest"],
        "jobs_total": len(jobs),
        "completed": [],
        "results": {},
    }
    _write_manifest(manifest_path, manifest)

    loss_rows = []

    def _record_outcome(outcome: dict):
        # Checkpoints land as each job finishes, so a killed run leaves
        # whatever completed on disk and a manifest that says "incomplete".
        stem = f"fold{outcome['fold']}_{outcome['modality']}"
        save_checkpoint(
            checkpoints / stem,
            arch=outcome["arch"],
            values=outcome["state"],
            seed=outcome["seed"],
            epoch=outcome["best_epoch"],
            validation_loss=outcome["best_val_loss"],
            extra={"scaler": outcome["scaler"], "fold": outcome["fold"],
                   "modality": outcome["modality"],
                   "history": outcome["history"]},
        )
        manifest["completed"].append(stem)
        manifest["results"][stem] = {
            "best_epoch": outcome["best_epoch"],
            "best_val_loss": outcome["best_val_loss"],
        }
        for entry in outcome["history"]:
            loss_rows.append((outcome["fold"], outcome["modality"],
                              entry["epoch"], entry["train_loss"],
                              entry["val_loss"], entry["lr"]))
        _write_manifest(manifest_path, manifest)

    if config.workers > 1 and len(jobs) > 1:
        context = get_context("spawn")
        with ProcessPoolExecutor(max_workers=config.workers,
                                 mp_context=context,
                                 initializer=_worker_init) as pool:
            futures = [pool.submit(_train_job, job) for job in jobs]
            for future in futures:
                _record_outcome(future.result())
    else:
        for job in jobs:
            _record_outcome(_train_job(job))

    manifest["completed"].sort()

    with (run_dir / "losses.csv").open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["fold", "modality", "epoch", "train_loss",
                         "val_loss", "lr"])
        for row in sorted(loss_rows):
            fold, modality, epoch, train_loss, val_loss, lr = row
            writer.writerow([fold, modality, epoch, f"{train_loss:.6f}",
                             f"{val_loss:.6f}", f"{lr:.6g}"])

    manifest["status"] = "complete"
    _write_manifest(manifest_path, manifest)
    return {"run": str(run_dir), "jobs": len(jobs),
            "plan_digest": audit["plan_digest"]}


def _write_manifest(path: Path, manifest: dict):
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_fold_model(checkpoints: Path, fold: int, modality: str):
    stem = checkpoints / f"fold{fold}_{modality}"
    ckpt = load_checkpoint(stem)
    model = build_model(ckpt.arch, seed=ckpt.seed)
    model.load_state(ckpt.values)
    scaler = LabelScaler.from_dict(ckpt.extra["scaler"])
    return model, scaler, ckpt


@dataclass
class _FoldEval:
    fold: int
    test_ids: list[str]
    truths: dict[str, np.ndarray]
    preds: dict[str, dict[str, np.ndarray]]
    fused: list
    baseline: dict[str, float]
    groups: np.ndarray


def _evaluate_fold(records, plan, fold_index, checkpoints, config) -> _FoldEval:
    fold = plan.folds[fold_index]
    test = records_for(records, fold.test_subjects)
    val = records_for(records, fold.val_subjects)
    train = records_for(records, fold.train_subjects)
    test.sort(key=lambda r: r.record_id)
    val.sort(key=lambda r: r.record_id)

    cache_map: dict[str, FeatureCache] = {}
    val_predictions, test_predictions = {}, {}
    for modality in MODALITIES:
        model, scaler, ckpt = _load_fold_model(checkpoints, fold_index, modality)
        result = TrainResult(modality=modality, fold_index=fold_index,
                             model=model, scaler=scaler,
                             best_epoch=ckpt.epoch,
                             best_val_loss=ckpt.validation_loss,
                             history=[], seed=ckpt.seed)
        val_predictions[modality] = predict_records(
            val, result, config.training, config.seed, cache_map)
        test_predictions[modality] = predict_records(
            test, result, config.training, config.seed, cache_map)

    context = compute_fusion_context(val_predictions)
    fused = []
    for record in test:
        rid = record.record_id
        fused.append(fuse_prediction(
            rid,
            {m: test_predictions[m][rid].pred for m in MODALITIES},
            {m: test_predictions[m][rid].uncertainty for m in MODALITIES},
            context))

    truths = {
        "sbp": np.array([r.labels[0] for r in test]),
        "dbp": np.array([r.labels[1] for r in test]),
    }
    preds: dict[str, dict[str, np.ndarray]] = {m: {} for m in ALL_METHODS}
    for i, target in enumerate(TARGETS):
        for modality in MODALITIES:
            preds[modality][target] = np.array(
                [test_predictions[modality][r.record_id].pred[target]
                 for r in test])
        preds["uda-fuse"][target] = np.array(
            [f.for_target(target).fused for f in fused])
        preds["mean-fuse"][target] = np.mean(
            [preds[m][target] for m in MODALITIES], axis=0)
    baseline = {}
    for target, column in (("sbp", 0), ("dbp", 1)):
        reg = mean_regressor([r.labels[column] for r in train])
        preds["mean_regressor"][target] = reg.predict(len(test))
        baseline[target] = reg.value

    return _FoldEval(
        fold=fold_index,
        test_ids=[r.record_id for r in test],
        truths=truths,
        preds=preds,
        fused=fused,
        baseline=baseline,
        groups=np.array([r.subject.group_label for r in test]),
    )


def run_eval(config: RunConfig, report_only: bool = False) -> dict:
    """Evaluate a trained run: metrics, fusion report, curves, figures."""
    run_dir = config.run_path()
    eval_dir = run_dir / "eval"
    if report_only:
        report.render_from_csv(eval_dir)
        return {"eval": str(eval_dir), "report_only": True}

    records, _ = load_dataset(config.dataset_path())
    manifest_path = run_dir / "run.json"
    if not manifest_path.exists():
        raise MissingInputError(f"no run manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("status") != "complete":
        raise MissingInputError(
            f"run at {run_dir} is marked '{manifest.get('status')}'; "
            f"completed jobs: {manifest.get('completed')}")

    plan = make_folds(records, config.training.fold_count, config.seed,
                      config.training.validation_fraction)
    if plan.digest() != manifest["plan_digest"]:
        raise IntegrityError(
            "fold plan derived from the dataset does not match the one "
            "this run was trained with")
    checkpoints = run_dir / "checkpoints"

    folds = [_evaluate_fold(records, plan, i, checkpoints, config)
             for i in range(plan.fold_count)]

    eval_dir.mkdir(parents=True, exist_ok=True)
    _write_resolved(config, eval_dir)

    rows = []
    for fe in folds:
        for target in TARGETS:
            baseline_mae = mae(fe.preds["mean_regressor"][target],
                               fe.truths[target])
            for method in ALL_METHODS:
                rep = compute_report(fe.preds[method][target],
                                     fe.truths[target], baseline_mae)
                rows.append({"fold": fe.fold, "target": target,
                             "method": method, "mae": rep.mae,
                             "corr": float(rep.corr), "suc10": rep.suc10,
                             "mase": rep.mase, "bhs": rep.bhs})

    pooled_truth = {t: np.concatenate([fe.truths[t] for fe in folds])
                    for t in TARGETS}
    pooled_preds = {m: {t: np.concatenate([fe.preds[m][t] for fe in folds])
                        for t in TARGETS} for m in ALL_METHODS}
    pooled_groups = np.concatenate([fe.groups for fe in folds])
    fused_all = [f for fe in folds for f in fe.fused]
    totals = {t: np.array([f.for_target(t).total for f in fused_all])
              for t in TARGETS}

    summary = {}
    for target in TARGETS:
        baseline_mae = mae(pooled_preds["mean_regressor"][target],
                           pooled_truth[target])
        for method in ALL_METHODS:
            rep = compute_report(pooled_preds[method][target],
                                 pooled_truth[target], baseline_mae)
            rows.append({"fold": "all", "target": target, "method": method,
                         "mae": rep.mae, "corr": float(rep.corr),
                         "suc10": rep.suc10, "mase": rep.mase,
                         "bhs": rep.bhs})
            summary[(method, target)] = rep

    write_metrics_csv(rows, eval_dir / "metrics.csv")
    write_fusion_csv(fused_all, eval_dir / "fusion.csv")
    sample_ids = [rid for fe in folds for rid in fe.test_ids]
    with (eval_dir / "predictions.csv").open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["sample_id", "target", "truth", "pred", "total"])
        for target in TARGETS:
            for i, rid in enumerate(sample_ids):
                writer.writerow([
                    rid, target,
                    f"{pooled_truth[target][i]:.6f}",
                    f"{pooled_preds['uda-fuse'][target][i]:.6f}",
                    f"{totals[target][i]:.9f}",
                ])

    curves = {}
    for target in TARGETS:
        curve = confidence_curve(pooled_preds["uda-fuse"][target],
                                 pooled_truth[target], totals[target],
                                 DEFAULT_CURVE_GRID)
        curves[target] = curve
        write_curve_csv(curve, eval_dir / f"curve_{target}.csv")
        groups_report = subgroup_report(
            pooled_preds["uda-fuse"][target], pooled_truth[target],
            totals[target], pooled_groups)
        write_subgroup_csv(groups_report, eval_dir / f"subgroup_{target}.csv")

    report.render_all(
        eval_dir,
        truths=pooled_truth,
        fused=pooled_preds["uda-fuse"],
        totals=totals,
        curves=curves,
        fused_predictions=fused_all,
    )

    return {
        "eval": str(eval_dir),
        "records": int(sum(len(fe.test_ids) for fe in folds)),
        "mae": {f"{m}/{t}": summary[(m, t)].mae
                for m in ALL_METHODS for t in TARGETS},
    }


def run_report(config: RunConfig) -> dict:
    eval_dir = config.run_path() / "eval"
    report.render_from_csv(eval_dir)
    return {"eval": str(eval_dir), "figures": str(eval_dir / "figures")}
