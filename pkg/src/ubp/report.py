"""Figure rendering for evaluation outputs.

Renders matplotlib figures to SVG files next to the delimited outputs:
prediction scatter plots colored by total uncertainty, confidence curves,
subgroup bars, and fusion-weight profiles. Every renderer works both from
in-memory arrays (during `eval`) and from the CSVs on disk (`report`).
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import MissingInputError
from .uncertainty import MODALITIES, TARGETS

_TARGET_NAMES = {"sbp": "systolic", "dbp": "diastolic"}
_SAVE_OPTS = {"format": "svg", "metadata": {"Date": None}}

WEIGHT_SMOOTHING_WINDOW = 5


def _new_axes(width=5.0, height=3.8):
    fig, ax = plt.subplots(figsize=(width, height), constrained_layout=True)
    return fig, ax


def render_scatter(truth, pred, total_uncertainty, target: str, path) -> None:
    """Predicted vs true BP, colored by total uncertainty."""
    fig, ax = _new_axes(5.2, 4.2)
    order = np.argsort(total_uncertainty)  # draw confident points on top
    sc = ax.scatter(np.asarray(truth)[order][::-1],
                    np.asarray(pred)[order][::-1],
                    c=np.asarray(total_uncertainty)[order][::-1],
                    cmap="viridis", s=14, alpha=0.8, linewidths=0)
    lo = min(np.min(truth), np.min(pred)) - 5
    hi = max(np.max(truth), np.max(pred)) + 5
    ax.plot([lo, hi], [lo, hi], color="0.4", lw=0.8, ls="--")
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.set_xlabel(f"true {_TARGET_NAMES[target]} BP (mmHg)")
    ax.set_ylabel(f"predicted {_TARGET_NAMES[target]} BP (mmHg)")
    fig.colorbar(sc, ax=ax, label="total uncertainty")
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def render_confidence(fractions, suc10_values, target: str, path) -> None:
    """Success rate over the most-confident fraction of predictions."""
    fig, ax = _new_axes()
    x = 100 * np.asarray(fractions)
    ax.plot(x, suc10_values, marker="o", ms=3.5, lw=1.2)
    ax.axhline(suc10_values[-1], color="0.5", lw=0.8, ls=":",
               label="all predictions")
    ax.set_xlabel("most-confident share of predictions (%)")
    ax.set_ylabel("Suc10 (%)")
    ax.set_title(f"{_TARGET_NAMES[target]} BP")
    ax.legend(loc="best", frameon=False)
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def render_subgroup(groups, maes, uncertainties, target: str, path) -> None:
    """Per-group MAE bars with mean total uncertainty on a twin axis."""
    fig, ax = _new_axes()
    positions = np.arange(len(groups))
    ax.bar(positions, maes, width=0.55, color="tab:blue", label="MAE")
    ax.set_xticks(positions, groups)
    ax.set_ylabel("MAE (mmHg)", color="tab:blue")
    twin = ax.twinx()
    twin.plot(positions, uncertainties, color="tab:red", marker="D", ms=6,
              lw=1.2, label="mean total uncertainty")
    twin.set_ylabel("mean total uncertainty", color="tab:red")
    ax.set_title(f"{_TARGET_NAMES[target]} BP by group")
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def _moving_average(values: np.ndarray, window: int) -> np.ndarray:
    if values.size < window:
        return values
    kernel = np.ones(window) / window
    smoothed = np.convolve(values, kernel, mode="same")
    # fix the edges where the kernel hangs off the data
    counts = np.convolve(np.ones_like(values), kernel, mode="same")
    return smoothed / counts


def render_weights(fused_values, weights_by_modality, target: str, path,
                   window: int = WEIGHT_SMOOTHING_WINDOW) -> None:
    """Fusion weight of each modality against the fused BP value.

    Raw per-sample weights are noisy; a short moving average over the
    BP-sorted samples shows the profile.
    """
    fused_values = np.asarray(fused_values)
    order = np.argsort(fused_values)
    fig, ax = _new_axes()
    for modality in MODALITIES:
        raw = np.asarray(weights_by_modality[modality])[order]
        ax.plot(fused_values[order], _moving_average(raw, window),
                label=modality, lw=1.3)
    ax.set_xlabel(f"fused {_TARGET_NAMES[target]} BP (mmHg)")
    ax.set_ylabel("fusion weight")
    ax.set_ylim(0, 1)
    ax.legend(loc="best", frameon=False)
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def render_all(eval_dir, truths, fused, totals, curves,
               fused_predictions) -> Path:
    """Render every figure from in-memory evaluation results."""
    eval_dir = Path(eval_dir)
    figures = eval_dir / "figures"
    figures.mkdir(parents=True, exist_ok=True)
    for target in TARGETS:
        render_scatter(truths[target], fused[target], totals[target], target,
                       figures / f"scatter_{target}.svg")
        curve = curves[target]
        render_confidence(curve.fractions, curve.suc10, target,
                          figures / f"confidence_{target}.svg")
        sub = _read_subgroup_csv(eval_dir / f"subgroup_{target}.csv")
        render_subgroup(*sub, target, figures / f"subgroup_{target}.svg")
        weights = {m: [p.for_target(target).weights[m]
                       for p in fused_predictions] for m in MODALITIES}
        render_weights([p.for_target(target).fused for p in fused_predictions],
                       weights, target, figures / f"weights_{target}.svg")
    return figures


def _read_csv_rows(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"expected CSV not found: {path}")
    with path.open() as handle:
        return list(csv.DictReader(handle))


def _read_subgroup_csv(path):
    rows = _read_csv_rows(path)
    groups = [r["group"] for r in rows]
    maes = [float(r["mae"]) for r in rows]
    uncs = [float(r["mean_total_uncertainty"]) for r in rows]
    return groups, maes, uncs


def render_from_csv(eval_dir) -> Path:
    """Regenerate every figure from the delimited outputs alone."""
    eval_dir = Path(eval_dir)
    figures = eval_dir / "figures"
    figures.mkdir(parents=True, exist_ok=True)

    fusion_rows = _read_csv_rows(eval_dir / "fusion.csv")
    prediction_rows = _read_csv_rows(eval_dir / "predictions.csv")
    for target in TARGETS:
        rows = [r for r in fusion_rows if r["target"] == target]
        fused_values = np.array([float(r["fused"]) for r in rows])
        totals = np.array([float(r["total"]) for r in rows])

        truth_rows = [r for r in prediction_rows if r["target"] == target]
        render_scatter(np.array([float(r["truth"]) for r in truth_rows]),
                       np.array([float(r["pred"]) for r in truth_rows]),
                       np.array([float(r["total"]) for r in truth_rows]),
                       target, figures / f"scatter_{target}.svg")

        curve_rows = _read_csv_rows(eval_dir / f"curve_{target}.csv")
        render_confidence([float(r["x"]) for r in curve_rows],
                          [float(r["suc10"]) for r in curve_rows], target,
                          figures / f"confidence_{target}.svg")

        sub = _read_subgroup_csv(eval_dir / f"subgroup_{target}.csv")
        render_subgroup(*sub, target, figures / f"subgroup_{target}.svg")

        weights = {m: np.array([float(r[f"w_{m}"]) for r in rows])
                   for m in MODALITIES}
        render_weights(fused_values, weights, target,
                       figures / f"weights_{target}.svg")
    return figures
