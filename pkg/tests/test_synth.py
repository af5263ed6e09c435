import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ubp.errors import ConfigurationError
from ubp.signals import dominant_frequency, pos_project
from ubp.synth import (GeneratorConfig, GroupSpec, SyntheticSubject,
                       block_traces, export_dataset, generate_dataset,
                       generate_subject, load_dataset, named_roi_traces,
                       pulse_waveform, render_record)

from helpers import cross_correlation_peak_lag

CLEAN = GeneratorConfig(noise_sigma_range=(0.0, 0.0),
                        groups=(GroupSpec("g", 1.0, 1.0),))


def upstroke_seconds(waveform, dt):
    """Time of steepest upstroke within the first beat (argmax of derivative)."""
    return float(np.argmax(np.diff(waveform)) * dt)


class TestGenerateSubject:
    def test_deterministic(self):
        a = generate_subject(41)
        b = generate_subject(41)
        assert a.sbp == b.sbp and a.dbp == b.dbp
        assert a.heart_rate == b.heart_rate and a.ptt_lag == b.ptt_lag
        np.testing.assert_array_equal(a.appearance, b.appearance)

    def test_invariants_hold(self):
        for seed in range(200):
            s = generate_subject(seed)
            assert 80 <= s.sbp <= 240
            assert 40 <= s.dbp < s.sbp
            assert 40 <= s.heart_rate <= 180
            assert s.ptt_lag >= 0

    def test_hypertensive_fraction(self):
        subjects = [generate_subject(seed) for seed in range(1000)]
        frac = np.mean([s.sbp >= 140 for s in subjects])
        assert 0.08 <= frac <= 0.20

    def test_zero_noise_config(self):
        s = generate_subject(7, GeneratorConfig(noise_sigma_range=(0.0, 0.0)))
        assert s.noise_sigma == 0.0

    def test_group_assignment(self):
        config = GeneratorConfig(groups=(GroupSpec("only", 1.0, 0.5),))
        s = generate_subject(3, config)
        assert s.group_label == "only"
        assert s.attenuation == 0.5


def _subject(sbp, dbp, heart_rate=70.0, ptt_lag=0.0, attenuation=1.0):
    return SyntheticSubject(subject_id=0, sbp=sbp, dbp=dbp,
                            heart_rate=heart_rate, ptt_lag=ptt_lag,
                            appearance=np.zeros(16), noise_sigma=0.0,
                            attenuation=attenuation, group_label="g")


class TestRenderRecord:
    def test_pos_recovers_heart_rate(self):
        subject = generate_subject(5, CLEAN)
        record = render_record(subject, 30.0, 1, CLEAN)
        window = pos_project(named_roi_traces(record))
        peak_hz = dominant_frequency(window.signals[0], 30.0,
                                     band=(0.6, 3.2), pad_factor=16)
        assert abs(peak_hz * 60 - subject.heart_rate) <= 1.0

    def test_forehead_lags_cheek_by_two_frames(self):
        subject = _subject(120, 70, ptt_lag=2 / 30.0)
        record = render_record(subject, 30.0, 2, CLEAN)
        window = pos_project(named_roi_traces(record))
        lag = cross_correlation_peak_lag(window.signals[0], window.signals[2],
                                         max_lag=8)
        assert lag == 2

    def test_upstroke_time_shrinks_with_sbp(self):
        low = render_record(_subject(110, 70), 10.0, 3, CLEAN)
        high = render_record(_subject(180, 70), 10.0, 3, CLEAN)
        beat = int(30.0 * 60.0 / 70.0)
        dt = 1 / 30.0
        t_low = upstroke_seconds(low.ppg_truth[:beat], dt)
        t_high = upstroke_seconds(high.ppg_truth[:beat], dt)
        assert t_high < t_low

    def test_ppg_truth_is_clean_waveform(self):
        subject = _subject(130, 80)
        record = render_record(subject, 10.0, 4, CLEAN)
        t = np.arange(record.traces.frames) / 30.0
        expected = pulse_waveform(130, 80, subject.heart_rate, t)
        np.testing.assert_allclose(record.ppg_truth, expected, atol=1e-12)

    def test_trace_layout(self):
        config = GeneratorConfig(block_rows=2, block_cols=3)
        record = render_record(generate_subject(1, config), 10.0, 5, config)
        assert record.traces.roi_count == 3 + 6
        assert named_roi_traces(record).roi_count == 3
        assert block_traces(record, config).roi_count == 6
        assert record.traces.roi_labels[:3] == ("cheek", "inner-cheek",
                                                "forehead")

    def test_attenuation_scales_modulation(self):
        bright = render_record(_subject(120, 70, attenuation=1.0), 10.0, 6, CLEAN)
        dim = render_record(_subject(120, 70, attenuation=0.4), 10.0, 6, CLEAN)
        spread_bright = bright.traces.traces[0, 1].std()
        spread_dim = dim.traces.traces[0, 1].std()
        assert spread_dim < 0.6 * spread_bright

    def test_short_duration_rejected(self):
        with pytest.raises(ConfigurationError):
            render_record(_subject(120, 70), 3.0, 1, CLEAN)

    def test_label_jitter_bounded(self):
        subject = generate_subject(9)
        config = GeneratorConfig()
        for seed in range(30):
            record = render_record(subject, 10.0, seed, config)
            assert abs(record.labels[0] - subject.sbp) <= config.label_jitter_mmhg
            assert abs(record.labels[1] - subject.dbp) <= config.label_jitter_mmhg


class TestPulseWaveformMorphology:
    @given(st.floats(85, 230), st.floats(5, 60))
    @settings(max_examples=150, deadline=None)
    def test_upstroke_monotone_in_sbp(self, sbp_low, gap):
        sbp_high = min(sbp_low + max(gap, 5.0), 235.0)
        dt = 0.001
        t = np.arange(0, 0.9, dt)
        dbp = 60.0
        w_low = pulse_waveform(sbp_low, dbp, 70.0, t)
        w_high = pulse_waveform(sbp_high, dbp, 70.0, t)
        assert upstroke_seconds(w_high, dt) < upstroke_seconds(w_low, dt)

    def test_dicrotic_bump_grows_with_dbp(self):
        t = np.arange(0, 0.9, 0.001)
        low = pulse_waveform(160, 55, 70.0, t)
        high = pulse_waveform(160, 105, 70.0, t)
        # compare the waveform tail mass after the systolic peak
        peak = np.argmax(low)
        assert high[peak + 200:].max() > low[peak + 200:].max()


class TestGenerateDataset:
    def test_record_count_range(self):
        records = generate_dataset(10, (2, 5), seed=3)
        assert 20 <= len(records) <= 50

    def test_deterministic_and_export_identical(self, tmp_path):
        config = GeneratorConfig()
        a = generate_dataset(6, (2, 3), seed=12, config=config)
        b = generate_dataset(6, (2, 3), seed=12, config=config)
        digest_a = export_dataset(a, tmp_path / "a", config, seed=12)
        digest_b = export_dataset(b, tmp_path / "b", config, seed=12)
        assert digest_a == digest_b

    def test_subject_ids_cover_range(self):
        records = generate_dataset(8, (2, 2), seed=1)
        assert {r.subject.subject_id for r in records} == set(range(8))

    def test_appearance_predicts_sbp(self):
        subjects = [generate_subject(seed) for seed in range(500)]
        X = np.stack([s.appearance for s in subjects])
        y = np.array([s.sbp for s in subjects])
        design = np.column_stack([np.ones(len(y)), X])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        residual = y - design @ coef
        r2 = 1 - residual.var() / y.var()
        assert r2 >= 0.3

    def test_too_few_subjects_rejected(self):
        with pytest.raises(ConfigurationError):
            generate_dataset(3, (2, 3), seed=0)


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        config = GeneratorConfig(block_rows=2, block_cols=2)
        records = generate_dataset(5, (2, 2), seed=4, config=config)
        export_dataset(records, tmp_path, config, seed=4)
        loaded, loaded_config = load_dataset(tmp_path)
        assert loaded_config == config
        assert len(loaded) == len(records)
        for original, restored in zip(records, loaded):
            assert original.record_id == restored.record_id
            assert original.labels == restored.labels
            assert original.subject.group_label == restored.subject.group_label
            np.testing.assert_array_equal(original.traces.traces,
                                          restored.traces.traces)
            np.testing.assert_array_equal(original.ppg_truth,
                                          restored.ppg_truth)
            np.testing.assert_array_equal(original.appearance_frames,
                                          restored.appearance_frames)

    def test_manifest_contents(self, tmp_path):
        config = GeneratorConfig(block_rows=2, block_cols=2)
        records = generate_dataset(5, (2, 2), seed=4, config=config)
        export_dataset(records, tmp_path, config, seed=4)
        record_dir = tmp_path / "records" / records[0].record_id
        manifest = json.loads((record_dir / "manifest.json").read_text())
        for key in ("subject_id", "sbp", "dbp", "group_label"):
            assert key in manifest
        assert (record_dir / "traces.csv").exists()
        assert (record_dir / "ppg.csv").exists()
