"""Pulse-signal extraction from multi-region RGB traces.

Everything here is a pure function over immutable inputs. The three model
input families are produced in this module: per-region pulse signals from
the plane-orthogonal-to-skin (POS) projection, per-block spatio-temporal
maps of normalized RGB, and pulse derivative triplets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, filtfilt

from .errors import ConfigurationError, DegenerateInputError

ROI_LABELS = ("cheek", "inner-cheek", "forehead")

# 2x3 projection onto the plane orthogonal to the standardized skin tone,
# applied after temporal normalization of the RGB trace.
_POS_PROJECTION = np.array([[0.0, 1.0, -1.0], [-2.0, 1.0, 1.0]])

DEFAULT_POS_WINDOW_SECONDS = 1.6


def zscore(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Normalize to mean 0, std 1 along `axis`; zero-variance slices map to zeros.

    "Zero variance" is judged relative to the slice magnitude so that a
    constant value whose mean picks up float rounding still maps to zeros.
    """
    values = np.asarray(values, dtype=np.float64)
    mean = values.mean(axis=axis, keepdims=True)
    std = values.std(axis=axis, keepdims=True)
    out = np.zeros_like(values)
    live = std > 1e-12 * (np.abs(mean) + 1.0)
    np.divide(values - mean, std, out=out, where=live)
    return out


@dataclass(frozen=True)
class RoiTraceSet:
    """Mean RGB per region per frame, in arbitrary non-negative camera units.

    `traces` has shape (roi_count, 3, frames). Regions may be named facial
    areas (cheek, inner cheek, forehead) or grid blocks, depending on how
    the set was produced.
    """

    frame_rate: float
    traces: np.ndarray
    roi_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        traces = np.asarray(self.traces, dtype=np.float64)
        object.__setattr__(self, "traces", traces)
        if traces.ndim != 3 or traces.shape[1] != 3:
            raise ConfigurationError(
                f"traces must have shape (roi_count, 3, frames), got {traces.shape}"
            )
        if traces.shape[0] < 1:
            raise DegenerateInputError("at least one region is required")
        if traces.shape[2] < 2:
            raise DegenerateInputError("at least two frames are required")
        if not np.isfinite(traces).all():
            raise DegenerateInputError("trace values must be finite")
        if not self.frame_rate > 0:
            raise ConfigurationError(f"frame_rate must be positive, got {self.frame_rate}")
        if self.roi_labels is not None and len(self.roi_labels) != traces.shape[0]:
            raise ConfigurationError("roi_labels length must match roi_count")

    @property
    def roi_count(self) -> int:
        return self.traces.shape[0]

    @property
    def frames(self) -> int:
        return self.traces.shape[2]


@dataclass(frozen=True)
class RppgWindow:
    """Per-region pulse signals, z-scored per row (or all-zero for degenerate input)."""

    signals: np.ndarray
    roi_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        signals = np.asarray(self.signals, dtype=np.float64)
        object.__setattr__(self, "signals", signals)
        if signals.ndim != 2:
            raise ConfigurationError(f"signals must be 2-D, got shape {signals.shape}")
        for row in signals:
            if np.allclose(row, 0.0):
                continue
            if abs(row.mean()) > 1e-9 or abs(row.std() - 1.0) > 1e-6:
                raise ConfigurationError("each signal row must be z-scored or all-zero")


@dataclass(frozen=True)
class SpatioTemporalMap:
    """Per-block RGB time series, z-scored per block and channel over time.

    `map` is channel-major with shape (3, blocks, frames). The normalization
    statistics are kept so a map can be undone exactly.
    """

    map: np.ndarray
    block_rows: int
    block_cols: int
    mean: np.ndarray = field(repr=False)
    std: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not np.isfinite(self.map).all():
            raise DegenerateInputError("spatio-temporal map must be finite")

    def denormalize(self) -> np.ndarray:
        """Recover the original (blocks, 3, frames) traces from stored statistics."""
        restored = self.map * self.std[..., None] + self.mean[..., None]
        return restored.transpose(1, 0, 2)


@dataclass(frozen=True)
class PulseTriplet:
    """A pulse waveform with its first (velocity) and second (acceleration) differences."""

    ppg: np.ndarray
    vpg: np.ndarray
    apg: np.ndarray


def spatial_average(roi_pixels, frame_rate: float,
                    roi_labels: tuple[str, ...] | None = None) -> RoiTraceSet:
    """Average pixel RGB samples into one trace per region.

    Args:
        roi_pixels: per region, a sequence over frames of (n_pixels, 3) RGB arrays.
        frame_rate: capture rate in Hz.

    Raises:
        DegenerateInputError: if any frame has no pixel samples.
    """
    rois = []
    for roi_index, frames in enumerate(roi_pixels):
        channel_means = []
        for frame_index, pixels in enumerate(frames):
            pixels = np.asarray(pixels, dtype=np.float64)
            if pixels.size == 0:
                raise DegenerateInputError(
                    f"region {roi_index} has no pixel samples at frame {frame_index}"
                )
            channel_means.append(pixels.reshape(-1, 3).mean(axis=0))
        rois.append(np.asarray(channel_means).T)
    return RoiTraceSet(frame_rate=frame_rate, traces=np.asarray(rois), roi_labels=roi_labels)


def pos_signal(traces: RoiTraceSet,
               window_seconds: float = DEFAULT_POS_WINDOW_SECONDS) -> np.ndarray:
    """Raw POS pulse signal per region, before any normalization.

    Runs the sliding-window POS recipe on every region at once: temporal
    normalization by the window mean, projection onto the skin-orthogonal
    plane, std-ratio tuning of the two projected components, and mean-free
    overlap-add of the tuned windows. Constant (zero-variance) traces come
    out as all-zero rows instead of raising.
    """
    window = int(round(window_seconds * traces.frame_rate))
    window = max(window, 2)
    n_frames = traces.frames
    if n_frames < window:
        raise DegenerateInputError(
            f"need at least {window} frames for a {window_seconds}s window, got {n_frames}"
        )

    # (rois, 3, n_windows, window) view of every sliding window.
    windows = np.lib.stride_tricks.sliding_window_view(traces.traces, window, axis=2)
    mean = windows.mean(axis=3, keepdims=True)
    normalized = np.zeros_like(windows, dtype=np.float64)
    np.divide(windows, mean, out=normalized, where=mean > 0)

    s0 = normalized[:, 1] - normalized[:, 2]
    s1 = -2.0 * normalized[:, 0] + normalized[:, 1] + normalized[:, 2]
    std0 = s0.std(axis=2)
    std1 = s1.std(axis=2)
    ratio = np.zeros_like(std0)
    np.divide(std0, std1, out=ratio, where=std1 > 0)
    tuned = s0 + ratio[..., None] * s1
    tuned -= tuned.mean(axis=2, keepdims=True)

    out = np.zeros((traces.roi_count, n_frames))
    n_windows = tuned.shape[1]
    for offset in range(window):
        out[:, offset:offset + n_windows] += tuned[:, :, offset]

    # Regions with (numerically) constant input produce only rounding dust;
    # force them to exact zero rather than normalized noise.
    channel_std = traces.traces.std(axis=2)
    channel_mean = np.abs(traces.traces.mean(axis=2))
    degenerate = (channel_std <= 1e-10 * (channel_mean + 1.0)).all(axis=1)
    out[degenerate] = 0.0
    return out


def pos_project(traces: RoiTraceSet,
                window_seconds: float = DEFAULT_POS_WINDOW_SECONDS) -> RppgWindow:
    """POS pulse extraction with per-row z-score normalization.

    No band-pass filtering is applied: filtered signals are for display
    only, never for model input.
    """
    raw = pos_signal(traces, window_seconds)
    return RppgWindow(signals=zscore(raw, axis=1), roi_labels=traces.roi_labels)


def build_st_map(traces: RoiTraceSet, block_rows: int = 16,
                 block_cols: int = 14) -> SpatioTemporalMap:
    """Build a channel-major spatio-temporal map from a block-grid trace set.

    Each (block, channel) time series is z-scored over time; the stats are
    stored so `denormalize` can reproduce the input.
    """
    expected = block_rows * block_cols
    if traces.roi_count != expected:
        raise ConfigurationError(
            f"expected {expected} blocks ({block_rows}x{block_cols}), got {traces.roi_count}"
        )
    per_channel = traces.traces.transpose(1, 0, 2)  # (3, blocks, frames)
    mean = per_channel.mean(axis=2)
    std = per_channel.std(axis=2)
    normalized = np.zeros_like(per_channel)
    np.divide(per_channel - mean[..., None], std[..., None], out=normalized,
              where=std[..., None] > 0)
    return SpatioTemporalMap(map=normalized, block_rows=block_rows,
                             block_cols=block_cols, mean=mean, std=std)


def derive_triplet(ppg: np.ndarray) -> PulseTriplet:
    """Forward-difference derivatives of a pulse waveform.

    Returns the waveform together with its first differences (velocity) and
    the first differences of those (acceleration); lengths D, D-1, D-2.
    """
    ppg = np.asarray(ppg, dtype=np.float64)
    if ppg.ndim != 1 or ppg.size < 3:
        raise DegenerateInputError("pulse waveform must be 1-D with at least 3 samples")
    vpg = np.diff(ppg)
    apg = np.diff(vpg)
    return PulseTriplet(ppg=ppg, vpg=vpg, apg=apg)


def bandpass(signal: np.ndarray, low: float, high: float, fs: float) -> np.ndarray:
    """Zero-phase 4th-order Butterworth band-pass.

    Display/diagnostic helper only; model input paths never filter.
    """
    if not (0 < low < high < fs / 2):
        raise ConfigurationError(
            f"band ({low}, {high}) Hz is invalid for sampling rate {fs} Hz"
        )
    signal = np.asarray(signal, dtype=np.float64)
    b, a = butter(4, [low, high], btype="band", fs=fs)
    return filtfilt(b, a, signal)


def dominant_frequency(signal: np.ndarray, fs: float,
                       band: tuple[float, float] = (0.5, 4.0),
                       pad_factor: int = 8) -> float:
    """In-band FFT peak frequency with parabolic interpolation, in Hz."""
    signal = np.asarray(signal, dtype=np.float64)
    signal = signal - signal.mean()
    n = int(signal.size * pad_factor)
    spectrum = np.abs(np.fft.rfft(signal, n=n))
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    mask = (freqs >= band[0]) & (freqs <= band[1])
    if not mask.any():
        raise ConfigurationError(f"band {band} Hz is outside the resolvable range")
    idx = np.flatnonzero(mask)
    peak = idx[np.argmax(spectrum[idx])]
    if 0 < peak < spectrum.size - 1:
        left, center, right = spectrum[peak - 1:peak + 2]
        denom = left - 2 * center + right
        shift = 0.0 if denom == 0 else 0.5 * (left - right) / denom
    else:
        shift = 0.0
    return float((peak + shift) * fs / n)


def write_traces_csv(traces: RoiTraceSet, csv_path, manifest_path=None) -> None:
    """Serialize a trace set as `roi,channel,frame,value` rows plus a JSON sidecar."""
    csv_path = Path(csv_path)
    lines = ["roi,channel,frame,value"]
    data = traces.traces
    for roi in range(traces.roi_count):
        for channel in range(3):
            row = data[roi, channel].tolist()
            lines.extend(
                f"{roi},{channel},{frame},{value!r}" for frame, value in enumerate(row)
            )
    csv_path.write_text("\n".join(lines) + "\n")
    if manifest_path is None:
        manifest_path = csv_path.with_suffix(".json")
    manifest = {"frame_rate": traces.frame_rate, "roi_labels": traces.roi_labels}
    Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n")


def read_traces_csv(csv_path, manifest_path=None) -> RoiTraceSet:
    """Load a trace set written by `write_traces_csv`."""
    import pandas as pd

    csv_path = Path(csv_path)
    if manifest_path is None:
        manifest_path = csv_path.with_suffix(".json")
    manifest = json.loads(Path(manifest_path).read_text())
    table = pd.read_csv(csv_path, float_precision="round_trip")
    roi_count = int(table["roi"].max()) + 1
    frames = int(table["frame"].max()) + 1
    values = table["value"].to_numpy(dtype=np.float64)
    traces = values.reshape(roi_count, 3, frames)
    labels = manifest.get("roi_labels")
    return RoiTraceSet(frame_rate=manifest["frame_rate"], traces=traces,
                       roi_labels=tuple(labels) if labels else None)
