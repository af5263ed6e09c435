"""Uncertainty decomposition and inverse-uncertainty ensemble fusion.

For each input family, repeated dropout-active forward passes give a set
of (mean, log-variance) samples per target. The mean predicted variance is
the aleatoric (observation noise) part; the spread of the predicted means
is the epistemic (model ignorance) part. Fusion weights each family by the
reciprocal of its normalized total uncertainty — algebraically the same as
a softmax over negative log uncertainties.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, UsageError

MODALITIES = ("rppg", "ppg", "img")
TARGETS = ("sbp", "dbp")

_MC_TAG = 0x3C5A1E


@dataclass(frozen=True)
class McSampleSet:
    """Dropout-active forward passes for one input, target, and input family.

    `mu` and `log_var` are length-T arrays in normalized BP units.
    """

    modality: str
    target: str
    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        log_var = np.asarray(self.log_var, dtype=np.float64)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_var", log_var)
        if mu.shape != log_var.shape or mu.ndim != 1:
            raise UsageError("mu and log_var must be 1-D arrays of equal length")
        if mu.size < 2:
            raise UsageError("at least 2 posterior samples are required")
        if not (np.isfinite(mu).all() and np.isfinite(log_var).all()):
            raise UsageError("posterior samples must be finite")

    @property
    def count(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class ModalityUncertainty:
    aleatoric: float
    epistemic: float

    def __post_init__(self):
        if self.aleatoric < 0 or self.epistemic < 0:
            raise UsageError("uncertainty components must be non-negative")

    @property
    def total(self) -> float:
        return self.aleatoric + self.epistemic


def aleatoric(samples: McSampleSet) -> float:
    """Mean predicted variance over the posterior samples."""
    return float(np.mean(np.exp(samples.log_var)))


def epistemic(samples: McSampleSet) -> float:
    """Population variance of the predicted means over the posterior samples."""
    mu = samples.mu
    return float(np.mean(mu * mu) - np.mean(mu) ** 2)


def decompose(samples: McSampleSet) -> ModalityUncertainty:
    return ModalityUncertainty(aleatoric=aleatoric(samples),
                               epistemic=max(epistemic(samples), 0.0))


def total_uncertainty(per_modality: dict[str, ModalityUncertainty]) -> float:
    """Sum of aleatoric plus epistemic over all three input families."""
    missing = [m for m in MODALITIES if m not in per_modality]
    if missing:
        raise UsageError(f"missing modalities: {missing}")
    return float(sum(per_modality[m].aleatoric + per_modality[m].epistemic
                     for m in MODALITIES))


@dataclass(frozen=True)
class FusionContext:
    """Validation-set mean uncertainties used to normalize modality scales.

    `means` maps (modality, target) to (mean aleatoric, mean epistemic);
    every entry must be positive.
    """

    means: dict[tuple[str, str], tuple[float, float]]

    def __post_init__(self):
        for modality in MODALITIES:
            for target in TARGETS:
                key = (modality, target)
                if key not in self.means:
                    raise UsageError(f"fusion context missing {key}")
                mean_alea, mean_epis = self.means[key]
                if not (mean_alea + mean_epis > 0):
                    raise UsageError(
                        f"fusion context means for {key} must be positive")

    def scale(self, modality: str, target: str) -> float:
        mean_alea, mean_epis = self.means[(modality, target)]
        return mean_alea + mean_epis


@dataclass(frozen=True)
class TargetFusion:
    """Fusion result for one target: weights over modalities and totals."""

    weights: dict[str, float]
    fused: float
    per_modality: dict[str, float]
    aleatoric_total: float
    epistemic_total: float
    total: float


@dataclass(frozen=True)
class FusedPrediction:
    sample_id: str
    sbp: TargetFusion
    dbp: TargetFusion

    def for_target(self, target: str) -> TargetFusion:
        if target == "sbp":
            return self.sbp
        if target == "dbp":
            return self.dbp
        raise UsageError(f"unknown target: {target}")


def inverse_uncertainty_weights(normalized: dict[str, float]) -> dict[str, float]:
    """Weights proportional to 1/u over the normalized uncertainties.

    Equal to softmax(-log u). Limits: if every u is zero the weights fall
    back to uniform; if some are zero, those share all the weight equally
    (the zero-uncertainty limit of the softmax).
    """
    values = np.array([normalized[m] for m in MODALITIES], dtype=np.float64)
    if (values < 0).any():
        raise UsageError("normalized uncertainties must be non-negative")
    zeros = values == 0
    if zeros.all():
        weights = np.full(len(values), 1.0 / len(values))
    elif zeros.any():
        weights = np.where(zeros, 1.0 / zeros.sum(), 0.0)
    else:
        inverse = 1.0 / values
        weights = inverse / inverse.sum()
    return dict(zip(MODALITIES, weights.tolist()))


def fuse_target(predictions: dict[str, float],
                uncertainties: dict[str, ModalityUncertainty],
                context: FusionContext, target: str) -> TargetFusion:
    """Fuse one target's per-modality predictions by inverse normalized uncertainty."""
    normalized = {
        m: uncertainties[m].total / context.scale(m, target) for m in MODALITIES
    }
    weights = inverse_uncertainty_weights(normalized)
    fused = sum(weights[m] * predictions[m] for m in MODALITIES)
    return TargetFusion(
        weights=weights,
        fused=float(fused),
        per_modality={m: float(predictions[m]) for m in MODALITIES},
        aleatoric_total=float(sum(uncertainties[m].aleatoric for m in MODALITIES)),
        epistemic_total=float(sum(uncertainties[m].epistemic for m in MODALITIES)),
        total=total_uncertainty(uncertainties),
    )


def fuse_prediction(sample_id: str,
                    predictions: dict[str, dict[str, float]],
                    uncertainties: dict[str, dict[str, ModalityUncertainty]],
                    context: FusionContext) -> FusedPrediction:
    """Fuse both targets for one sample.

    `predictions[modality][target]` is in mmHg; uncertainties stay in
    normalized units so the context scales apply.
    """
    per_target = {}
    for target in TARGETS:
        per_target[target] = fuse_target(
            {m: predictions[m][target] for m in MODALITIES},
            {m: uncertainties[m][target] for m in MODALITIES},
            context, target)
    return FusedPrediction(sample_id=sample_id, sbp=per_target["sbp"],
                           dbp=per_target["dbp"])


def mc_sample(model, features: np.ndarray, count: int, seed: int,
              modality: str) -> dict[str, McSampleSet]:
    """Posterior sampling for a single input.

    Runs `count` dropout-active forward passes with sub-seeds derived
    deterministically from `seed`; returns one sample set per target.
    """
    if count < 2:
        raise UsageError("need at least 2 posterior samples")
    batch = np.asarray(features, dtype=np.float64)[None, ...]
    mu, log_var = mc_sample_batch(model, batch, count, seed)
    return {
        "sbp": McSampleSet(modality, "sbp", mu[:, 0, 0], log_var[:, 0, 0]),
        "dbp": McSampleSet(modality, "dbp", mu[:, 0, 1], log_var[:, 0, 1]),
    }


def mc_sample_batch(model, features: np.ndarray, count: int,
                    seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Batched posterior sampling: returns (count, batch, 2) means and log-variances."""
    if count < 2:
        raise UsageError("need at least 2 posterior samples")
    children = np.random.SeedSequence([_MC_TAG, seed]).spawn(count)
    mu = np.empty((count, features.shape[0], 2))
    log_var = np.empty_like(mu)
    for t in range(count):
        rng = np.random.default_rng(children[t])
        out = model.het_forward(features, dropout_active=True, rng=rng)
        mu[t] = out.means()
        log_var[t] = out.log_vars()
    return mu, log_var


def triage_order(uncertainties: np.ndarray, fraction: float) -> np.ndarray:
    """Indices of the most-confident `fraction` of samples, stable on ties."""
    if not (0 < fraction <= 1):
        raise ConfigurationError(f"fraction must be in (0, 1], got {fraction}")
    uncertainties = np.asarray(uncertainties, dtype=np.float64)
    if uncertainties.size == 0:
        raise UsageError("cannot rank an empty set")
    keep = int(np.ceil(fraction * uncertainties.size))
    return np.argsort(uncertainties, kind="stable")[:keep]


def triage_rank(predictions: list[FusedPrediction], fraction: float,
                target: str = "sbp") -> list[FusedPrediction]:
    """The most-confident predictions by total uncertainty for `target`."""
    totals = np.array([p.for_target(target).total for p in predictions])
    return [predictions[i] for i in triage_order(totals, fraction)]


def write_fusion_csv(predictions: list[FusedPrediction], path) -> None:
    """Per-sample fusion report: predictions, weights, and uncertainty totals."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow([
            "sample_id", "target", "pred_rppg", "pred_ppg", "pred_img",
            "w_rppg", "w_ppg", "w_img", "fused",
            "aleatoric_total", "epistemic_total", "total",
        ])
        for pred in predictions:
            for target in TARGETS:
                fusion = pred.for_target(target)
                writer.writerow([
                    pred.sample_id, target,
                    *(f"{fusion.per_modality[m]:.6f}" for m in MODALITIES),
                    *(f"{fusion.weights[m]:.9f}" for m in MODALITIES),
                    f"{fusion.fused:.6f}",
                    f"{fusion.aleatoric_total:.9f}",
                    f"{fusion.epistemic_total:.9f}",
                    f"{fusion.total:.9f}",
                ])
