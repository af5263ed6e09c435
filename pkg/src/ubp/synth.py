"""Synthetic physiological dataset generator.

Produces subject-disjoint records with known blood pressure, where every
model input family carries a genuine BP signal:

* pulse morphology (systolic upstroke, dicrotic bump) varies with SBP/DBP,
* the forehead region lags the cheek by a per-subject transit delay that
  shrinks as SBP rises,
* an appearance feature vector is an affine function of BP plus noise,
* a per-group attenuation factor scales pulse amplitude, standing in for
  the lower signal-to-noise ratio of darker skin tones.

All generation is a pure function of (seed, config).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, MissingInputError
from .signals import ROI_LABELS, RoiTraceSet, write_traces_csv, read_traces_csv

_SUBJECT_TAG = 0x5B1EC7
_RECORD_TAG = 0x4EC02D
_APPEARANCE_TAG = 0x0A77EA2A

# Relative pulsatile strength of the R, G, B channels (blood absorbs green
# best, red least); both skin-orthogonal projections must keep pulse energy.
_CHANNEL_WEIGHTS = np.array([0.55, 1.0, 0.7])
# Gain of the named regions: cheek, inner cheek, forehead.
_ROI_GAINS = np.array([1.0, 0.92, 0.85])
_BASE_INTENSITY = np.array([175.0, 120.0, 95.0])

MIN_RECORD_SECONDS = 5.0


@dataclass(frozen=True)
class GroupSpec:
    """A synthetic population group with a fixed pulse-amplitude attenuation."""

    label: str
    weight: float
    attenuation: float

    def __post_init__(self):
        if not (0 < self.attenuation <= 1):
            raise ConfigurationError("attenuation must be in (0, 1]")
        if self.weight < 0:
            raise ConfigurationError("group weight must be non-negative")


@dataclass(frozen=True)
class GeneratorConfig:
    frame_rate: float = 30.0
    duration_seconds: float = 10.0
    block_rows: int = 4
    block_cols: int = 4
    appearance_dim: int = 16
    appearance_noise: float = 0.26
    session_shift_noise: float = 0.15
    frame_noise: float = 0.15
    pulse_amplitude: float = 0.045
    noise_sigma_range: tuple[float, float] = (0.002, 0.010)
    hypertensive_fraction: float = 0.15
    heart_rate_range: tuple[float, float] = (50.0, 110.0)
    label_jitter_mmhg: float = 5.0
    groups: tuple[GroupSpec, ...] = (
        GroupSpec("high_snr", 0.5, 1.0),
        GroupSpec("low_snr", 0.5, 0.7),
    )

    def __post_init__(self):
        if self.frame_rate <= 0 or self.duration_seconds <= 0:
            raise ConfigurationError("frame_rate and duration_seconds must be positive")
        if self.block_rows < 1 or self.block_cols < 1:
            raise ConfigurationError("block grid must be at least 1x1")
        if self.appearance_dim < 2:
            raise ConfigurationError("appearance_dim must be at least 2")
        lo, hi = self.noise_sigma_range
        if lo < 0 or hi < lo:
            raise ConfigurationError("noise_sigma_range must satisfy 0 <= low <= high")
        if not (0 <= self.hypertensive_fraction <= 1):
            raise ConfigurationError("hypertensive_fraction must be in [0, 1]")
        lo, hi = self.heart_rate_range
        if not (40 <= lo <= hi <= 180):
            raise ConfigurationError("heart_rate_range must lie within [40, 180]")
        if not self.groups:
            raise ConfigurationError("at least one group is required")
        if sum(g.weight for g in self.groups) <= 0:
            raise ConfigurationError("group weights must sum to a positive value")

    @property
    def block_count(self) -> int:
        return self.block_rows * self.block_cols


@dataclass(frozen=True)
class SyntheticSubject:
    subject_id: int
    sbp: float
    dbp: float
    heart_rate: float
    ptt_lag: float
    appearance: np.ndarray
    noise_sigma: float
    attenuation: float
    group_label: str

    def __post_init__(self):
        if not (80 <= self.sbp <= 240):
            raise ConfigurationError(f"sbp {self.sbp} outside [80, 240]")
        if not (40 <= self.dbp < self.sbp):
            raise ConfigurationError(f"dbp {self.dbp} outside [40, sbp)")
        if not (40 <= self.heart_rate <= 180):
            raise ConfigurationError(f"heart_rate {self.heart_rate} outside [40, 180]")
        if self.ptt_lag < 0:
            raise ConfigurationError("ptt_lag must be non-negative")
        object.__setattr__(self, "appearance",
                           np.asarray(self.appearance, dtype=np.float64))


@dataclass(frozen=True)
class SyntheticRecord:
    record_id: str
    session: int
    subject: SyntheticSubject
    traces: RoiTraceSet
    ppg_truth: np.ndarray
    labels: tuple[float, float]
    appearance_frames: np.ndarray

    @property
    def sbp(self) -> float:
        return self.labels[0]

    @property
    def dbp(self) -> float:
        return self.labels[1]


def _appearance_basis(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed affine map from standardized (sbp, dbp) to appearance space.

    The map is a constant of the generator (like anatomy), not of any one
    dataset, so that appearance stays comparable across seeds.
    """
    rng = np.random.default_rng(np.random.SeedSequence(_APPEARANCE_TAG))
    basis = rng.standard_normal((dim, 2))
    basis /= np.linalg.norm(basis, axis=0, keepdims=True)
    offset = rng.standard_normal(dim) * 0.5
    return basis, offset


def pulse_waveform(sbp: float, dbp: float, heart_rate: float,
                   times: np.ndarray) -> np.ndarray:
    """Clean pulse waveform sampled at `times` (seconds).

    Each beat is the sum of a systolic lobe and a dicrotic bump. The
    systolic peak arrives earlier and narrower as SBP rises, so the
    upstroke time strictly decreases with SBP; the dicrotic bump grows
    and arrives earlier as DBP rises.
    """
    times = np.asarray(times, dtype=np.float64)
    period = 60.0 / heart_rate
    sn = np.clip((sbp - 80.0) / 160.0, 0.0, 1.0)
    dn = np.clip((dbp - 40.0) / 80.0, 0.0, 1.0)

    # The systolic lobe keeps the globally steepest upslope (its peak slope
    # is at least 4.6, the dicrotic one at most 3.6), so upstroke time is
    # always read off the systolic flank.
    t_sys = 0.32 - 0.18 * sn
    sigma_sys = 0.13 - 0.075 * sn
    t_dic = t_sys + 0.38 - 0.30 * dn
    amp_dic = 0.10 + 0.55 * dn
    sigma_dic = 0.11

    first = int(np.floor(times.min() / period)) - 1
    last = int(np.ceil(times.max() / period)) + 1
    beats = np.arange(first, last + 1)
    tau = times[None, :] - beats[:, None] * period
    wave = np.exp(-0.5 * ((tau - t_sys) / sigma_sys) ** 2)
    wave += amp_dic * np.exp(-0.5 * ((tau - t_dic) / sigma_dic) ** 2)
    return wave.sum(axis=0)


def generate_subject(seed: int, config: GeneratorConfig = GeneratorConfig(),
                     subject_id: int | None = None) -> SyntheticSubject:
    """Draw one subject; deterministic for a fixed (seed, config)."""
    rng = np.random.default_rng(np.random.SeedSequence([_SUBJECT_TAG, seed]))

    if rng.random() < config.hypertensive_fraction:
        sbp = rng.normal(155.0, 15.0)
    else:
        sbp = rng.normal(118.0, 12.0)
    sbp = float(np.clip(sbp, 80.0, 240.0))
    dbp = 60.0 + 0.35 * (sbp - 120.0) + rng.normal(0.0, 7.0)
    dbp = float(np.clip(dbp, 40.0, sbp - 20.0))

    heart_rate = float(rng.uniform(*config.heart_rate_range))

    # Transit delay of the forehead relative to the cheek shrinks as BP
    # rises (faster pulse waves at higher pressure).
    ptt_lag = (0.115 - 0.0004 * (sbp - 80.0) - 0.0004 * (dbp - 40.0)
               + rng.normal(0.0, 0.004))
    ptt_lag = float(np.clip(ptt_lag, 0.0, 0.2))

    basis, offset = _appearance_basis(config.appearance_dim)
    z = np.array([(sbp - 130.0) / 25.0, (dbp - 70.0) / 15.0])
    appearance = basis @ z + offset
    appearance += config.appearance_noise * rng.standard_normal(config.appearance_dim)

    lo, hi = config.noise_sigma_range
    noise_sigma = float(rng.uniform(lo, hi)) if hi > lo else float(lo)

    weights = np.array([g.weight for g in config.groups], dtype=np.float64)
    group = config.groups[rng.choice(len(weights), p=weights / weights.sum())]

    return SyntheticSubject(
        subject_id=seed if subject_id is None else subject_id,
        sbp=sbp, dbp=dbp, heart_rate=heart_rate, ptt_lag=ptt_lag,
        appearance=appearance, noise_sigma=noise_sigma,
        attenuation=group.attenuation, group_label=group.label,
    )


def render_record(subject: SyntheticSubject, duration: float, seed: int,
                  config: GeneratorConfig = GeneratorConfig(),
                  session: int = 0,
                  record_id: str | None = None) -> SyntheticRecord:
    """Render one recording session for a subject.

    The trace set holds the three named regions first (cheek, inner cheek,
    forehead) followed by the block grid used for spatio-temporal maps.
    Only the forehead carries the subject's transit lag.
    """
    if duration < MIN_RECORD_SECONDS:
        raise ConfigurationError(
            f"duration must be at least {MIN_RECORD_SECONDS}s, got {duration}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([_RECORD_TAG, seed]))
    fs = config.frame_rate
    frames = int(round(duration * fs))
    times = np.arange(frames) / fs

    clean = pulse_waveform(subject.sbp, subject.dbp, subject.heart_rate, times)
    mean, std = clean.mean(), clean.std()
    lagged = pulse_waveform(subject.sbp, subject.dbp, subject.heart_rate,
                            times - subject.ptt_lag)
    modulation = (clean - mean) / std
    modulation_lagged = (lagged - mean) / std

    n_blocks = config.block_count
    roi_count = len(ROI_LABELS) + n_blocks
    gains = np.concatenate([
        _ROI_GAINS,
        rng.uniform(0.85, 1.15, size=n_blocks),
    ])
    base = _BASE_INTENSITY * rng.uniform(0.9, 1.1, size=3)

    pulse = np.tile(modulation, (roi_count, 1))
    pulse[2] = modulation_lagged  # forehead
    depth = config.pulse_amplitude * subject.attenuation
    relative = 1.0 + (depth * gains[:, None, None]
                      * _CHANNEL_WEIGHTS[None, :, None]
                      * pulse[:, None, :])
    relative = relative + subject.noise_sigma * rng.standard_normal(
        (roi_count, 3, frames))
    traces = np.clip(base[None, :, None] * relative, 0.0, None)

    labels = ROI_LABELS + tuple(
        f"block{r:02d}{c:02d}"
        for r in range(config.block_rows) for c in range(config.block_cols)
    )
    trace_set = RoiTraceSet(frame_rate=fs, traces=traces, roi_labels=labels)

    session_shift = config.session_shift_noise * rng.standard_normal(
        config.appearance_dim)
    appearance_frames = (
        subject.appearance[:, None] + session_shift[:, None]
        + config.frame_noise * rng.standard_normal((config.appearance_dim, frames))
    )

    jitter = config.label_jitter_mmhg
    label_sbp = subject.sbp + float(rng.uniform(-jitter, jitter))
    label_dbp = subject.dbp + float(rng.uniform(-jitter, jitter))

    return SyntheticRecord(
        record_id=record_id or f"s{subject.subject_id}r{session}",
        session=session,
        subject=subject,
        traces=trace_set,
        ppg_truth=clean,
        labels=(label_sbp, label_dbp),
        appearance_frames=appearance_frames,
    )


def named_roi_traces(record: SyntheticRecord) -> RoiTraceSet:
    """The cheek / inner-cheek / forehead subset of a record's traces."""
    return RoiTraceSet(frame_rate=record.traces.frame_rate,
                       traces=record.traces.traces[:len(ROI_LABELS)],
                       roi_labels=ROI_LABELS)


def block_traces(record: SyntheticRecord, config: GeneratorConfig) -> RoiTraceSet:
    """The block-grid subset of a record's traces, for spatio-temporal maps."""
    start = len(ROI_LABELS)
    labels = record.traces.roi_labels
    return RoiTraceSet(frame_rate=record.traces.frame_rate,
                       traces=record.traces.traces[start:start + config.block_count],
                       roi_labels=labels[start:] if labels else None)


def generate_dataset(n_subjects: int,
                     sessions_per_subject: tuple[int, int] = (2, 5),
                     seed: int = 0,
                     config: GeneratorConfig = GeneratorConfig()) -> list[SyntheticRecord]:
    """Generate a dataset of records grouped by subject.

    Each subject contributes a uniformly drawn number of sessions from the
    inclusive `sessions_per_subject` range.
    """
    if n_subjects < 5:
        raise ConfigurationError("need at least 5 subjects")
    lo, hi = sessions_per_subject
    if not (1 <= lo <= hi):
        raise ConfigurationError("sessions_per_subject must satisfy 1 <= low <= high")

    records = []
    record_counter = 0
    for i in range(n_subjects):
        subject_seed = (seed << 20) + i
        subject = generate_subject(subject_seed, config, subject_id=i)
        session_rng = np.random.default_rng(
            np.random.SeedSequence([_RECORD_TAG, seed, i]))
        n_sessions = int(session_rng.integers(lo, hi + 1))
        for session in range(n_sessions):
            record_seed = (seed << 25) + record_counter
            records.append(render_record(
                subject, config.duration_seconds, record_seed, config,
                session=session, record_id=f"s{i:04d}r{session}"))
            record_counter += 1
    return records


def _config_to_dict(config: GeneratorConfig) -> dict:
    raw = asdict(config)
    raw["groups"] = [asdict(g) for g in config.groups]
    return raw


def config_from_dict(raw: dict) -> GeneratorConfig:
    raw = dict(raw)
    groups = raw.pop("groups", None)
    kwargs = {}
    valid = {f.name for f in GeneratorConfig.__dataclass_fields__.values()}
    for key, value in raw.items():
        if key not in valid:
            raise ConfigurationError(f"unknown generator setting: {key}")
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    if groups is not None:
        kwargs["groups"] = tuple(GroupSpec(**g) for g in groups)
    return GeneratorConfig(**kwargs)


def export_dataset(records: list[SyntheticRecord], out_dir,
                   config: GeneratorConfig = GeneratorConfig(),
                   seed: int | None = None) -> str:
    """Write one directory per record plus a dataset manifest.

    Each record directory holds the traces CSV with its frame-rate sidecar,
    the clean pulse CSV, the appearance CSV, and a JSON label manifest.
    Returns the dataset digest (SHA-256 over all record files).
    """
    out_dir = Path(out_dir)
    records_dir = out_dir / "records"
    records_dir.mkdir(parents=True, exist_ok=True)

    file_digest = hashlib.sha256()
    record_ids = []
    for record in records:
        record_ids.append(record.record_id)
        rdir = records_dir / record.record_id
        rdir.mkdir(parents=True, exist_ok=True)
        write_traces_csv(record.traces, rdir / "traces.csv", rdir / "traces.json")

        ppg_lines = ["frame,value"]
        ppg_lines += [f"{i},{v!r}" for i, v in enumerate(record.ppg_truth.tolist())]
        (rdir / "ppg.csv").write_text("\n".join(ppg_lines) + "\n")

        app_lines = ["feature,frame,value"]
        for f_idx, row in enumerate(record.appearance_frames):
            app_lines += [f"{f_idx},{t},{v!r}" for t, v in enumerate(row.tolist())]
        (rdir / "appearance.csv").write_text("\n".join(app_lines) + "\n")

        subject = record.subject
        manifest = {
            "record_id": record.record_id,
            "session": record.session,
            "subject_id": subject.subject_id,
            "sbp": record.labels[0],
            "dbp": record.labels[1],
            "group_label": subject.group_label,
            "subject": {
                "subject_id": subject.subject_id,
                "sbp": subject.sbp,
                "dbp": subject.dbp,
                "heart_rate": subject.heart_rate,
                "ptt_lag": subject.ptt_lag,
                "appearance": subject.appearance.tolist(),
                "noise_sigma": subject.noise_sigma,
                "attenuation": subject.attenuation,
                "group_label": subject.group_label,
            },
        }
        (rdir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

        for name in ("traces.csv", "traces.json", "ppg.csv", "appearance.csv",
                     "manifest.json"):
            file_digest.update(name.encode())
            file_digest.update((rdir / name).read_bytes())

    digest = file_digest.hexdigest()
    dataset_manifest = {
        "record_ids": record_ids,
        "n_records": len(records),
        "seed": seed,
        "digest": digest,
        "generator": _config_to_dict(config),
    }
    (out_dir / "dataset.json").write_text(json.dumps(dataset_manifest, indent=2) + "\n")
    return digest


def load_dataset(dataset_dir) -> tuple[list[SyntheticRecord], GeneratorConfig]:
    """Load a dataset written by `export_dataset`."""
    import pandas as pd

    dataset_dir = Path(dataset_dir)
    manifest_path = dataset_dir / "dataset.json"
    if not manifest_path.exists():
        raise MissingInputError(f"no dataset manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    config = config_from_dict(manifest["generator"])

    records = []
    for record_id in manifest["record_ids"]:
        rdir = dataset_dir / "records" / record_id
        meta = json.loads((rdir / "manifest.json").read_text())
        subject_raw = dict(meta["subject"])
        subject_raw["appearance"] = np.asarray(subject_raw["appearance"])
        subject = SyntheticSubject(**subject_raw)

        traces = read_traces_csv(rdir / "traces.csv", rdir / "traces.json")
        ppg = pd.read_csv(rdir / "ppg.csv", float_precision="round_trip")[
            "value"].to_numpy(dtype=np.float64)
        app = pd.read_csv(rdir / "appearance.csv", float_precision="round_trip")
        dim = int(app["feature"].max()) + 1
        frames = int(app["frame"].max()) + 1
        appearance_frames = app["value"].to_numpy(dtype=np.float64).reshape(dim, frames)

        records.append(SyntheticRecord(
            record_id=meta["record_id"],
            session=meta["session"],
            subject=subject,
            traces=traces,
            ppg_truth=ppg,
            labels=(meta["sbp"], meta["dbp"]),
            appearance_frames=appearance_frames,
        ))
    return records, config
