"""Evaluation metrics, device grading, baselines, and report tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import UsageError
from .uncertainty import triage_order

DEFAULT_CURVE_GRID = tuple(np.round(np.arange(0.05, 1.0001, 0.05), 2))


def _paired(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise UsageError(
            f"predictions and truths must be 1-D and equal length, got "
            f"{pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise UsageError("empty prediction set")
    return pred, truth


def mae(pred, truth) -> float:
    """Mean absolute error in mmHg."""
    pred, truth = _paired(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


class Correlation(float):
    """A float correlation that knows when it came from a degenerate predictor."""

    degenerate: bool

    def __new__(cls, value: float, degenerate: bool = False):
        obj = super().__new__(cls, value)
        obj.degenerate = degenerate
        return obj


def pearson(pred, truth) -> Correlation:
    """Product-moment correlation.

    A constant predictor (zero variance) yields Correlation(0.0) with the
    `degenerate` flag set instead of dividing by zero; constant truth is a
    usage error since no predictor can be scored against it.
    """
    pred, truth = _paired(pred, truth)
    if pred.size < 2:
        raise UsageError("correlation needs at least 2 samples")
    truth_std = truth.std()
    if truth_std == 0:
        raise UsageError("truth values are constant; correlation is undefined")
    pred_std = pred.std()
    if pred_std == 0:
        return Correlation(0.0, degenerate=True)
    cov = np.mean((pred - pred.mean()) * (truth - truth.mean()))
    return Correlation(float(cov / (pred_std * truth_std)))


def suc10(pred, truth) -> float:
    """Percentage of predictions with absolute error strictly below 10 mmHg."""
    pred, truth = _paired(pred, truth)
    return float(100.0 * np.mean(np.abs(pred - truth) < 10.0))


def mase(model_mae: float, baseline_mae: float) -> float:
    """Model MAE as a percentage of the mean-regressor baseline MAE."""
    if baseline_mae <= 0:
        raise UsageError("baseline MAE must be positive")
    return float(100.0 * model_mae / baseline_mae)


def bhs_grade(suc10_value: float) -> str:
    """Device grade from the strictly-below-10mmHg success rate.

    B and C follow the published thresholds (75% and 65%); A at 85% extends
    the same ladder one step, and everything below 65% is D.
    """
    if not (0 <= suc10_value <= 100):
        raise UsageError(f"suc10 must be in [0, 100], got {suc10_value}")
    if suc10_value >= 85:
        return "A"
    if suc10_value >= 75:
        return "B"
    if suc10_value >= 65:
        return "C"
    return "D"


@dataclass(frozen=True)
class MeanRegressor:
    """Constant predictor at the training-set mean."""

    value: float

    def predict(self, count: int) -> np.ndarray:
        return np.full(count, self.value)


def mean_regressor(train_values) -> MeanRegressor:
    train_values = np.asarray(train_values, dtype=np.float64)
    if train_values.size == 0:
        raise UsageError("cannot fit a mean regressor on no labels")
    return MeanRegressor(value=float(train_values.mean()))


@dataclass(frozen=True)
class MetricsReport:
    """Headline metrics for one (method, target) pair."""

    mae: float
    corr: Correlation
    suc10: float
    mase: float
    bhs: str


def compute_report(pred, truth, baseline_mae: float) -> MetricsReport:
    model_mae = mae(pred, truth)
    s10 = suc10(pred, truth)
    return MetricsReport(
        mae=model_mae,
        corr=pearson(pred, truth),
        suc10=s10,
        mase=mase(model_mae, baseline_mae),
        bhs=bhs_grade(s10),
    )


@dataclass(frozen=True)
class ConfidenceCurve:
    """Success rate over the most-confident fraction of predictions."""

    fractions: tuple[float, ...]
    suc10: tuple[float, ...]

    def __post_init__(self):
        fr = np.asarray(self.fractions)
        if fr.size == 0 or (np.diff(fr) <= 0).any() or fr[0] <= 0 or fr[-1] > 1:
            raise UsageError("fractions must be strictly increasing within (0, 1]")


def confidence_curve(pred, truth, uncertainties,
                     grid=DEFAULT_CURVE_GRID) -> ConfidenceCurve:
    """Suc10 over the lowest-uncertainty subset, for each retained fraction."""
    pred, truth = _paired(pred, truth)
    uncertainties = np.asarray(uncertainties, dtype=np.float64)
    if uncertainties.shape != pred.shape:
        raise UsageError("uncertainties must align with predictions")
    values = []
    for fraction in grid:
        keep = triage_order(uncertainties, float(fraction))
        values.append(suc10(pred[keep], truth[keep]))
    return ConfidenceCurve(fractions=tuple(float(x) for x in grid),
                           suc10=tuple(values))


def subgroup_report(pred, truth, uncertainties, labels,
                    groups=None) -> dict[str, tuple[float, float]]:
    """Per-group (MAE, mean total uncertainty).

    `groups` defaults to the sorted labels present; requesting a group with
    no samples, or passing labels outside the requested set, is an error.
    """
    pred, truth = _paired(pred, truth)
    uncertainties = np.asarray(uncertainties, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != pred.shape or uncertainties.shape != pred.shape:
        raise UsageError("labels and uncertainties must align with predictions")
    present = set(labels.tolist())
    if groups is None:
        groups = sorted(present)
    else:
        groups = list(groups)
        unknown = present - set(groups)
        if unknown:
            raise UsageError(f"unknown group labels in data: {sorted(unknown)}")
    report = {}
    for group in groups:
        mask = labels == group
        if not mask.any():
            raise UsageError(f"group {group!r} has no samples")
        report[group] = (mae(pred[mask], truth[mask]),
                         float(uncertainties[mask].mean()))
    return report


def write_metrics_csv(rows: list[dict], path) -> None:
    """Rows of fold/target/method metrics in a fixed column order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["fold", "target", "method", "mae", "corr", "suc10",
                         "mase", "bhs"])
        for row in rows:
            writer.writerow([
                row["fold"], row["target"], row["method"],
                f"{row['mae']:.4f}", f"{row['corr']:.4f}",
                f"{row['suc10']:.2f}", f"{row['mase']:.2f}", row["bhs"],
            ])


def write_curve_csv(curve: ConfidenceCurve, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["x", "suc10"])
        for x, value in zip(curve.fractions, curve.suc10):
            writer.writerow([f"{x:.2f}", f"{value:.2f}"])


def write_subgroup_csv(report: dict[str, tuple[float, float]], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["group", "mae", "mean_total_uncertainty"])
        for group in report:
            group_mae, group_unc = report[group]
            writer.writerow([group, f"{group_mae:.4f}", f"{group_unc:.6f}"])
