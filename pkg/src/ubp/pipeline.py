"""Training protocol: subject-disjoint folds, window sampling, oversampling,
label normalization, the per-modality training loops, and posterior
inference over records.

Everything is seeded: the fold split, parameter init, dropout masks, and
window draws all derive from explicit integers, so a run is reproducible
bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import (ConfigurationError, DegenerateInputError, NumericalError,
                     UsageError)
from .neural import (Adam, batch_triplet, build_model, joint_ppg_loss,
                     nll_loss, pulse_loss)
from .signals import ROI_LABELS, pos_signal, zscore
from .synth import SyntheticRecord
from .uncertainty import (FusionContext, ModalityUncertainty, MODALITIES,
                          TARGETS, mc_sample_batch)

_FOLD_TAG = 0x10F0
_TRAIN_TAG = 0x11A1
_VAL_TAG = 0x12B2
_TEST_TAG = 0x13C3
_INIT_TAG = 0x14D4


@dataclass(frozen=True)
class TrainConfig:
    # The appearance lane trains from scratch here, not by fine-tuning a
    # pre-trained backbone, so it gets the same from-scratch rate as the
    # pulse lanes; 1e-4 remains its fine-tuning rate below.
    epochs: int = 30
    batch_size: int = 128
    learning_rates: Mapping[str, float] = field(
        default_factory=lambda: {"rppg": 1e-3, "ppg": 1e-3, "img": 1e-3})
    fine_tune_learning_rates: Mapping[str, float] = field(
        default_factory=lambda: {"rppg": 1e-4, "ppg": 1e-5, "img": 1e-4})
    mc_samples: int = 10
    window_frames: int = 150
    sbp_low: float = 110.0
    sbp_high: float = 150.0
    dbp_low: float = 70.0
    dbp_high: float = 100.0
    samples_per_video: Mapping[str, int] = field(
        default_factory=lambda: {"rppg": 60, "ppg": 10, "img": 3})
    lr_decay_every: int = 10
    lr_decay_factor: float = 0.5
    fold_count: int = 5
    validation_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if self.batch_size < 1 or self.mc_samples < 2 or self.window_frames < 3:
            raise ConfigurationError("batch_size, mc_samples, or window_frames too small")
        if not (self.sbp_low < self.sbp_high and self.dbp_low < self.dbp_high):
            raise ConfigurationError("oversampling thresholds must be ordered")
        if self.lr_decay_every < 1 or not (0 < self.lr_decay_factor <= 1):
            raise ConfigurationError("invalid learning-rate schedule")
        if self.fold_count < 2 or not (0 < self.validation_fraction < 1):
            raise ConfigurationError("invalid fold settings")
        for mapping in (self.learning_rates, self.fine_tune_learning_rates,
                        self.samples_per_video):
            for modality in MODALITIES:
                if modality not in mapping or mapping[modality] <= 0:
                    raise ConfigurationError(
                        f"per-modality settings must cover {MODALITIES} with "
                        f"positive values")


@dataclass(frozen=True)
class FoldSplit:
    train_subjects: frozenset
    val_subjects: frozenset
    test_subjects: frozenset


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[FoldSplit, ...]
    seed: int

    def __post_init__(self):
        all_test = []
        for fold in self.folds:
            if fold.test_subjects & (fold.train_subjects | fold.val_subjects):
                raise ConfigurationError("test subjects overlap train/validation")
            if fold.train_subjects & fold.val_subjects:
                raise ConfigurationError("train and validation subjects overlap")
            all_test.extend(fold.test_subjects)
        if len(all_test) != len(set(all_test)):
            raise ConfigurationError("a subject appears in multiple test sets")

    @property
    def fold_count(self) -> int:
        return len(self.folds)

    def digest(self) -> str:
        canonical = [
            {"train": sorted(f.train_subjects), "val": sorted(f.val_subjects),
             "test": sorted(f.test_subjects)}
            for f in self.folds
        ]
        return hashlib.sha256(
            json.dumps(canonical, sort_keys=True).encode()).hexdigest()


def make_folds(records: list[SyntheticRecord], fold_count: int = 5,
               seed: int = 0, validation_fraction: float = 0.2) -> FoldPlan:
    """Partition subjects into disjoint test folds with a per-fold validation split.

    Test sets tile the subject population exactly once; within each fold,
    the configured fraction of the remaining subjects is held out for
    validation.
    """
    subjects = sorted({r.subject.subject_id for r in records})
    if len(subjects) < fold_count:
        raise ConfigurationError(
            f"need at least {fold_count} subjects for {fold_count} folds, "
            f"got {len(subjects)}")
    rng = np.random.default_rng(np.random.SeedSequence([_FOLD_TAG, seed]))
    shuffled = rng.permutation(subjects).tolist()
    test_groups = np.array_split(np.asarray(shuffled), fold_count)

    folds = []
    for index, test_group in enumerate(test_groups):
        test = frozenset(test_group.tolist())
        pool = [s for s in shuffled if s not in test]
        fold_rng = np.random.default_rng(
            np.random.SeedSequence([_FOLD_TAG, seed, index]))
        pool = fold_rng.permutation(pool).tolist()
        val_count = max(1, round(validation_fraction * len(pool)))
        folds.append(FoldSplit(
            train_subjects=frozenset(pool[val_count:]),
            val_subjects=frozenset(pool[:val_count]),
            test_subjects=test,
        ))
    return FoldPlan(folds=tuple(folds), seed=seed)


def records_for(records: list[SyntheticRecord], subjects) -> list[SyntheticRecord]:
    return [r for r in records if r.subject.subject_id in subjects]


def oversample(records: list[SyntheticRecord], sbp_low: float = 110.0,
               sbp_high: float = 150.0, dbp_low: float = 70.0,
               dbp_high: float = 100.0) -> list[SyntheticRecord]:
    """Duplicate records whose label lies strictly outside the common BP band.

    Boundary values appear once. Applies to the pulse-signal modalities
    only; callers training the appearance modality skip this step.
    """
    out = []
    for record in records:
        sbp, dbp = record.labels
        out.append(record)
        if sbp < sbp_low or sbp > sbp_high or dbp < dbp_low or dbp > dbp_high:
            out.append(record)
    return out


@dataclass(frozen=True)
class LabelScaler:
    """Affine normalization of (sbp, dbp) labels, fitted on training data only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, labels) -> "LabelScaler":
        labels = np.asarray(labels, dtype=np.float64)
        if labels.ndim != 2 or labels.shape[1] != 2 or labels.shape[0] == 0:
            raise UsageError("labels must be a non-empty (n, 2) array")
        std = labels.std(axis=0)
        if (std <= 0).any():
            raise ConfigurationError("labels are constant; cannot normalize")
        return cls(mean=labels.mean(axis=0), std=std)

    def transform(self, labels) -> np.ndarray:
        return (np.asarray(labels, dtype=np.float64) - self.mean) / self.std

    def inverse(self, normalized) -> np.ndarray:
        return np.asarray(normalized, dtype=np.float64) * self.std + self.mean

    def digest(self) -> str:
        payload = repr((self.mean.tolist(), self.std.tolist()))
        return hashlib.sha256(payload.encode()).hexdigest()

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, raw: dict) -> "LabelScaler":
        return cls(mean=np.asarray(raw["mean"]), std=np.asarray(raw["std"]))


def scale_labels(labels, scaler: LabelScaler | None) -> np.ndarray:
    if scaler is None:
        raise UsageError("scaler has not been fitted")
    return scaler.transform(labels)


def unscale_predictions(normalized, scaler: LabelScaler | None) -> np.ndarray:
    if scaler is None:
        raise UsageError("scaler has not been fitted")
    return scaler.inverse(normalized)


@dataclass(frozen=True)
class WindowSample:
    """One training window: frame range plus the per-modality views."""

    start: int
    frames: int
    traces: np.ndarray
    ppg: np.ndarray
    appearance: np.ndarray


def sample_window(record: SyntheticRecord, window_frames: int,
                  seed: int) -> WindowSample:
    """Draw one uniform contiguous window from a record.

    The appearance view is the feature vector at the window's middle frame.
    """
    total = record.traces.frames
    if total < window_frames:
        raise DegenerateInputError(
            f"record has {total} frames, needs at least {window_frames}")
    rng = np.random.default_rng(np.random.SeedSequence([_TRAIN_TAG, seed]))
    start = int(rng.integers(0, total - window_frames + 1))
    return window_at(record, start, window_frames)


def window_at(record: SyntheticRecord, start: int,
              window_frames: int) -> WindowSample:
    stop = start + window_frames
    return WindowSample(
        start=start,
        frames=window_frames,
        traces=record.traces.traces[:, :, start:stop],
        ppg=record.ppg_truth[start:stop],
        appearance=record.appearance_frames[:, start + window_frames // 2],
    )


class FeatureCache:
    """Per-record raw features shared by every window drawn from the record."""

    def __init__(self, record: SyntheticRecord):
        self.record = record
        self.frames = record.traces.frames
        named = record.traces.traces[:len(ROI_LABELS)]
        self.pos_raw = pos_signal(
            type(record.traces)(frame_rate=record.traces.frame_rate,
                                traces=named, roi_labels=ROI_LABELS))
        self.blocks_raw = record.traces.traces[len(ROI_LABELS):]
        self.ppg_truth = record.ppg_truth
        self.appearance_frames = record.appearance_frames

    def rppg_windows(self, starts: np.ndarray, frames: int) -> np.ndarray:
        idx = starts[:, None] + np.arange(frames)
        gathered = self.pos_raw[:, idx]                    # (3, n, frames)
        normalized = zscore(gathered, axis=2)
        return np.ascontiguousarray(normalized.transpose(1, 2, 0))

    def st_windows(self, starts: np.ndarray, frames: int) -> np.ndarray:
        idx = starts[:, None] + np.arange(frames)
        gathered = self.blocks_raw[:, :, idx]              # (B, 3, n, frames)
        gathered = gathered.transpose(2, 1, 0, 3)          # (n, 3, B, frames)
        normalized = zscore(gathered, axis=3)
        n, _, blocks, _ = normalized.shape
        flat = normalized.reshape(n, 3 * blocks, frames)
        return np.ascontiguousarray(flat.transpose(0, 2, 1))

    def ppg_windows(self, starts: np.ndarray, frames: int) -> np.ndarray:
        idx = starts[:, None] + np.arange(frames)
        return zscore(self.ppg_truth[idx], axis=1)

    def appearance_at(self, starts: np.ndarray, frames: int) -> np.ndarray:
        return self.appearance_frames[:, starts + frames // 2].T


def _record_key(record_id: str) -> int:
    return zlib.crc32(record_id.encode())


def _draw_starts(rng: np.random.Generator, total_frames: int, window: int,
                 count: int) -> np.ndarray:
    if total_frames < window:
        raise DegenerateInputError(
            f"record has {total_frames} frames, needs at least {window}")
    return rng.integers(0, total_frames - window + 1, size=count)


def _build_epoch_inputs(caches: list[FeatureCache], modality: str,
                        config: TrainConfig, rng: np.random.Generator,
                        scaler: LabelScaler):
    """Assemble one epoch of windows for every record in `caches`."""
    frames = config.window_frames
    per_video = config.samples_per_video[modality]
    inputs, labels, extras = [], [], []
    for cache in caches:
        starts = _draw_starts(rng, cache.frames, frames, per_video)
        if modality == "rppg":
            inputs.append(cache.rppg_windows(starts, frames))
        elif modality == "ppg":
            inputs.append(cache.st_windows(starts, frames))
            extras.append(cache.ppg_windows(starts, frames))
        else:
            inputs.append(cache.appearance_at(starts, frames))
        labels.append(np.tile(scaler.transform([cache.record.labels])[0],
                              (per_video, 1)))
    X = np.concatenate(inputs, axis=0)
    y = np.concatenate(labels, axis=0)
    ppg_truth = np.concatenate(extras, axis=0) if extras else None
    return X, y, ppg_truth


def _batch_loss(model, modality: str, X: np.ndarray, y: np.ndarray,
                ppg_truth: np.ndarray | None, dropout_active: bool,
                rng: np.random.Generator | None):
    if modality == "ppg":
        wave, het = model.forward(X, dropout_active=dropout_active, rng=rng)
        truth_v = np.diff(ppg_truth, axis=1)
        truth_a = np.diff(truth_v, axis=1)
        return joint_ppg_loss(
            pulse_loss(batch_triplet(wave), (ppg_truth, truth_v, truth_a)),
            nll_loss(het, y))
    het = model.het_forward(X, dropout_active=dropout_active, rng=rng)
    return nll_loss(het, y)


@dataclass
class TrainResult:
    modality: str
    fold_index: int
    model: object
    scaler: LabelScaler
    best_epoch: int
    best_val_loss: float
    history: list[dict]
    seed: int


def train_modality(records: list[SyntheticRecord], plan: FoldPlan,
                   fold_index: int, modality: str, config: TrainConfig,
                   seed: int, init_state: list[np.ndarray] | None = None,
                   fine_tune: bool = False) -> TrainResult:
    """Train one modality on one fold; returns the best-validation-epoch model.

    Training windows are re-drawn every epoch, extreme-BP records are
    duplicated for the pulse modalities, and the learning rate halves on
    the configured epoch schedule. Divergence (non-finite loss) aborts.
    """
    if modality not in MODALITIES:
        raise ConfigurationError(f"unknown modality: {modality}")
    fold = plan.folds[fold_index]
    train_recs = records_for(records, fold.train_subjects)
    val_recs = records_for(records, fold.val_subjects)
    if not train_recs or not val_recs:
        raise ConfigurationError("fold has no training or validation records")

    scaler = LabelScaler.fit([r.labels for r in train_recs])
    if modality != "img":
        train_list = oversample(train_recs, config.sbp_low, config.sbp_high,
                                config.dbp_low, config.dbp_high)
    else:
        train_list = list(train_recs)

    sample = records[0]
    blocks = sample.traces.roi_count - len(ROI_LABELS)
    arch = {
        "rppg": {"name": "rppg", "window_frames": config.window_frames,
                 "regions": len(ROI_LABELS), "dropout": 0.2},
        "ppg": {"name": "ppg", "window_frames": config.window_frames,
                "blocks": blocks, "dropout": 0.5},
        "img": {"name": "img", "feature_dim": sample.appearance_frames.shape[0],
                "dropout": 0.5},
    }[modality]
    init_seed = int(np.random.SeedSequence(
        [_INIT_TAG, seed, fold_index, _record_key(modality)]).generate_state(1)[0])
    model = build_model(arch, seed=init_seed)
    if init_state is not None:
        model.load_state(init_state)

    rates = config.fine_tune_learning_rates if fine_tune else config.learning_rates
    base_lr = rates[modality]
    optimizer = Adam(model.params, lr=base_lr)

    cache_map: dict[str, FeatureCache] = {}
    for record in [*train_recs, *val_recs]:
        if record.record_id not in cache_map:
            cache_map[record.record_id] = FeatureCache(record)
    train_caches = [cache_map[r.record_id] for r in train_list]
    val_caches = [cache_map[r.record_id] for r in val_recs]

    best_state = None
    best_val = np.inf
    best_epoch = -1
    history = []
    for epoch in range(config.epochs):
        optimizer.lr = base_lr * config.lr_decay_factor ** (epoch // config.lr_decay_every)
        epoch_rng = np.random.default_rng(
            np.random.SeedSequence([_TRAIN_TAG, seed, fold_index,
                                    _record_key(modality), epoch]))
        X, y, ppg_truth = _build_epoch_inputs(train_caches, modality, config,
                                              epoch_rng, scaler)
        order = epoch_rng.permutation(X.shape[0])

        total_loss = 0.0
        for lo in range(0, X.shape[0], config.batch_size):
            batch = order[lo:lo + config.batch_size]
            loss = _batch_loss(
                model, modality, X[batch], y[batch],
                None if ppg_truth is None else ppg_truth[batch],
                dropout_active=True, rng=epoch_rng)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(
                    f"{modality} fold {fold_index}: non-finite loss at epoch "
                    f"{epoch} (lr={optimizer.lr})")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total_loss += value * batch.size
        train_loss = total_loss / X.shape[0]

        val_rng = np.random.default_rng(
            np.random.SeedSequence([_VAL_TAG, seed, fold_index,
                                    _record_key(modality), epoch]))
        val_loss = _evaluate_loss(model, modality, val_caches, config, val_rng,
                                  scaler)
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss, "lr": optimizer.lr})
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = model.state()

    model.load_state(best_state)
    return TrainResult(modality=modality, fold_index=fold_index, model=model,
                       scaler=scaler, best_epoch=best_epoch,
                       best_val_loss=best_val, history=history, seed=seed)


def _evaluate_loss(model, modality: str, caches: list[FeatureCache],
                   config: TrainConfig, rng: np.random.Generator,
                   scaler: LabelScaler) -> float:
    X, y, ppg_truth = _build_epoch_inputs(caches, modality, config, rng, scaler)
    total = 0.0
    for lo in range(0, X.shape[0], config.batch_size):
        sl = slice(lo, lo + config.batch_size)
        loss = _batch_loss(model, modality, X[sl], y[sl],
                           None if ppg_truth is None else ppg_truth[sl],
                           dropout_active=False, rng=None)
        total += loss.item() * (min(sl.stop, X.shape[0]) - sl.start)
    value = total / X.shape[0]
    if not np.isfinite(value):
        raise NumericalError(f"{modality}: non-finite validation loss")
    return value


@dataclass(frozen=True)
class RecordPrediction:
    """Posterior summary for one record and modality."""

    record_id: str
    pred: dict[str, float]
    uncertainty: dict[str, ModalityUncertainty]


def predict_records(records: list[SyntheticRecord], result: TrainResult,
                    config: TrainConfig, seed: int,
                    cache_map: dict[str, FeatureCache] | None = None,
                    ) -> dict[str, RecordPrediction]:
    """Run windowed posterior inference for every record.

    Per record, the configured number of windows is drawn, each window is
    sampled `mc_samples` times with dropout active, the prediction is the
    grand mean over windows and samples, and the uncertainty components are
    averaged over windows.
    """
    modality = result.modality
    frames = config.window_frames
    per_video = config.samples_per_video[modality]

    inputs, spans = [], []
    offset = 0
    for record in records:
        if cache_map is not None:
            cache = cache_map.setdefault(record.record_id, FeatureCache(record))
        else:
            cache = FeatureCache(record)
        rng = np.random.default_rng(np.random.SeedSequence(
            [_TEST_TAG, seed, _record_key(record.record_id)]))
        starts = _draw_starts(rng, cache.frames, frames, per_video)
        if modality == "rppg":
            inputs.append(cache.rppg_windows(starts, frames))
        elif modality == "ppg":
            inputs.append(cache.st_windows(starts, frames))
        else:
            inputs.append(cache.appearance_at(starts, frames))
        spans.append((record.record_id, offset, offset + per_video))
        offset += per_video

    X = np.concatenate(inputs, axis=0)
    mc_seed = int(np.random.SeedSequence(
        [_TEST_TAG, seed, result.fold_index, _record_key(modality)]
    ).generate_state(1)[0])

    mu = np.empty((config.mc_samples, X.shape[0], 2))
    log_var = np.empty_like(mu)
    for lo in range(0, X.shape[0], config.batch_size):
        sl = slice(lo, min(lo + config.batch_size, X.shape[0]))
        mu[:, sl], log_var[:, sl] = mc_sample_batch(
            result.model, X[sl], config.mc_samples, mc_seed + lo)

    predictions = {}
    for record_id, lo, hi in spans:
        window_mu = mu[:, lo:hi, :]            # (T, windows, 2)
        window_lv = log_var[:, lo:hi, :]
        alea = np.exp(window_lv).mean(axis=0)  # (windows, 2)
        epis = window_mu.var(axis=0)           # population variance over T
        pred_norm = window_mu.mean(axis=(0, 1))
        pred_mmhg = result.scaler.inverse(pred_norm)
        predictions[record_id] = RecordPrediction(
            record_id=record_id,
            pred={target: float(pred_mmhg[i]) for i, target in enumerate(TARGETS)},
            uncertainty={
                target: ModalityUncertainty(
                    aleatoric=float(alea[:, i].mean()),
                    epistemic=float(epis[:, i].mean()))
                for i, target in enumerate(TARGETS)
            },
        )
    return predictions


def compute_fusion_context(
        val_predictions: dict[str, dict[str, RecordPrediction]]) -> FusionContext:
    """Validation-set mean uncertainties per modality and target."""
    means = {}
    for modality in MODALITIES:
        per_record = val_predictions[modality]
        if not per_record:
            raise UsageError(f"no validation predictions for {modality}")
        for target in TARGETS:
            alea = np.mean([p.uncertainty[target].aleatoric
                            for p in per_record.values()])
            epis = np.mean([p.uncertainty[target].epistemic
                            for p in per_record.values()])
            means[(modality, target)] = (float(alea), float(epis))
    return FusionContext(means=means)


def audit_plan(plan: FoldPlan, records: list[SyntheticRecord]) -> dict:
    """Leakage audit: per-fold disjointness and exact test coverage."""
    subjects = {r.subject.subject_id for r in records}
    covered = []
    for index, fold in enumerate(plan.folds):
        overlap = fold.test_subjects & (fold.train_subjects | fold.val_subjects)
        if overlap:
            raise ConfigurationError(
                f"fold {index}: subjects {sorted(overlap)} leak into test")
        covered.extend(fold.test_subjects)
    if set(covered) != subjects or len(covered) != len(subjects):
        raise ConfigurationError("test folds do not tile the subject set exactly once")
    return {"subjects": len(subjects), "folds": plan.fold_count,
            "plan_digest": plan.digest()}
