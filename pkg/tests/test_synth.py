import json

import numpy as np
import pytest

from afkit.errors import DomainError
from afkit.series import detect_peaks, ibi_from_peaks
from afkit.synth import (
    DEFAULT_SPECS,
    RhythmSpec,
    gen_clip,
    gen_corpus,
    gen_rr_sequence,
    load_manifest,
)


class TestRhythmSpec:
    def test_validation(self):
        with pytest.raises(DomainError):
            RhythmSpec("sr", 500.0, 0.05, 0.7, 1.0, 0.1)
        with pytest.raises(DomainError):
            RhythmSpec("nope", 70.0, 0.05, 0.7, 1.0, 0.1)
        with pytest.raises(DomainError):
            RhythmSpec("sr", 70.0, 0.05, 1.5, 1.0, 0.1)


class TestRrSequences:
    def test_sr_zero_cv_is_constant(self):
        spec = RhythmSpec("sr", 75.0, 0.0, 0.7, 1.0, 0.1)
        rr = gen_rr_sequence(spec, 60.0, np.random.default_rng(0))
        assert np.allclose(rr, 800.0)

    def test_af_statistics(self):
        spec = DEFAULT_SPECS["af"]
        rng = np.random.default_rng(7)
        rr = np.concatenate([gen_rr_sequence(spec, 600.0, rng) for _ in range(14)])
        assert len(rr) > 10000
        cv = rr.std() / rr.mean()
        assert abs(cv - 0.24) < 0.03
        lag1 = np.corrcoef(rr[:-1], rr[1:])[0, 1]
        assert abs(lag1) < 0.05

    def test_sr_autocorrelation(self):
        spec = DEFAULT_SPECS["sr"]
        rng = np.random.default_rng(3)
        rr = np.concatenate([gen_rr_sequence(spec, 600.0, rng) for _ in range(10)])
        lag1 = np.corrcoef(rr[:-1], rr[1:])[0, 1]
        assert abs(lag1 - 0.7) < 0.08

    def test_afl_blocks(self):
        spec = DEFAULT_SPECS["afl"]  # ventricular 150 bpm at 2:1 -> 400 ms blocks
        rr = gen_rr_sequence(spec, 300.0, np.random.default_rng(5))
        flutter = 60000.0 / (150.0 * 2)
        near_base = np.abs(rr - 2 * flutter) < 50.0
        near_switch = np.abs(rr - 3 * flutter) < 60.0
        assert near_base.mean() > 0.6
        assert near_switch.mean() > 0.02
        assert (near_base | near_switch).mean() > 0.97

    def test_bounds_always(self):
        for kind, spec in DEFAULT_SPECS.items():
            rr = gen_rr_sequence(spec, 120.0, np.random.default_rng(11))
            assert rr.min() >= 250.0
            assert rr.max() <= 3000.0

    def test_duration_precondition(self):
        with pytest.raises(DomainError):
            gen_rr_sequence(DEFAULT_SPECS["sr"], 5.0, np.random.default_rng(0))


class TestGenClip:
    def test_high_snr_detection(self):
        clip = gen_clip(DEFAULT_SPECS["sr"], 30.0, 60.0, seed=1)
        det = detect_peaks(clip.channels.channel(0))
        hits = sum(np.min(np.abs(det.indices - t)) <= 2 for t in clip.true_peaks.indices)
        assert hits >= 0.99 * len(clip.true_peaks)

    def test_periodic_when_cv_zero(self):
        spec = RhythmSpec("sr", 75.0, 0.0, 0.0, 1.0, 0.0)
        clip = gen_clip(spec, 30.0, 60.0, seed=2)
        gaps = np.diff(clip.true_peaks.indices)
        assert np.ptp(gaps) <= 1  # rounding of a constant 800 ms grid offset

    def test_af_amplitude_attenuation(self):
        af = gen_clip(DEFAULT_SPECS["af"], 30.0, 60.0, seed=3)
        sr = gen_clip(DEFAULT_SPECS["sr"], 30.0, 60.0, seed=3)
        af_amp = np.mean(af.channels.values[0][af.true_peaks.indices])
        sr_amp = np.mean(sr.channels.values[0][sr.true_peaks.indices])
        assert af_amp < sr_amp

    def test_channels_shape_and_metadata(self):
        clip = gen_clip(DEFAULT_SPECS["af"], 30.0, 0.0, seed=4, subject_id=9)
        assert clip.channels.values.shape == (3, 900)
        assert clip.label == "af"
        assert clip.subject_id == 9
        assert clip.snr_db == 0.0

    def test_snr_calibration(self):
        from afkit.series import _bandpass

        spec = RhythmSpec("sr", 75.0, 0.0, 0.0, 1.0, 0.0)
        rng_clip = gen_clip(spec, 60.0, 0.0, seed=5)
        clean = gen_clip(spec, 60.0, 200.0, seed=5)
        # same seed: same pulse; noise = difference (wander phase also matches)
        noise = rng_clip.channels.values[0] - clean.channels.values[0]
        sig_p = np.mean(_bandpass(clean.channels.values[0], 30.0) ** 2)
        noise_p = np.mean(_bandpass(noise, 30.0) ** 2)
        snr_db = 10 * np.log10(sig_p / noise_p)
        assert abs(snr_db) < 1.0

    def test_true_peaks_roundtrip_rr(self):
        clip = gen_clip(DEFAULT_SPECS["sr"], 30.0, 60.0, seed=6)
        ibi = ibi_from_peaks(clip.true_peaks)
        # each interval within one sample period of a valid RR value
        assert np.all(ibi.intervals_ms >= 250.0 - 1000.0 / 30.0)
        assert np.all(ibi.intervals_ms <= 3000.0 + 1000.0 / 30.0)


class TestCorpus:
    def test_layout_and_determinism(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            gen_corpus(out, classes=("sr", "af"), n_subjects_per_class=2,
                       clips_per_subject=2, duration_s=12.0, seed=42)
        ma = load_manifest(a)
        assert len(ma["clips"]) == 8
        for entry in ma["clips"]:
            assert (a / entry["path"]).exists()
        files_a = sorted(p.relative_to(a) for p in a.rglob("*.json"))
        files_b = sorted(p.relative_to(b) for p in b.rglob("*.json"))
        assert files_a == files_b
        for rel in files_a:
            assert (a / rel).read_bytes() == (b / rel).read_bytes()

    def test_patients_share_ids_across_sr_af(self, tmp_path):
        out = tmp_path / "c"
        manifest = gen_corpus(out, classes=("sr", "af", "healthy_rest"),
                              n_subjects_per_class=3, clips_per_subject=1,
                              duration_s=12.0, seed=1)
        by_label = {}
        for e in manifest["clips"]:
            by_label.setdefault(e["label"], set()).add(e["subject_id"])
        assert by_label["sr"] == by_label["af"]
        assert not (by_label["healthy_rest"] & by_label["sr"])

    def test_af_sr_rmssd_separation(self, tmp_path):
        out = tmp_path / "d"
        gen_corpus(out, classes=("sr", "af"), n_subjects_per_class=6,
                   clips_per_subject=2, duration_s=30.0, seed=9)
        manifest = load_manifest(out)
        from afkit.hrv import time_features
        from afkit.series import load_clip

        rmssd = {"sr": [], "af": []}
        for e in manifest["clips"]:
            _, peaks, label, _ = load_clip(out / e["path"])
            rmssd[label].append(time_features(ibi_from_peaks(peaks))["rmssd_ms"])
        assert np.mean(rmssd["af"]) > 3.0 * np.mean(rmssd["sr"])

    def test_subject_hr_jitter_is_stable_per_subject(self, tmp_path):
        out = tmp_path / "e"
        gen_corpus(out, classes=("sr",), n_subjects_per_class=3,
                   clips_per_subject=2, duration_s=20.0, seed=2)
        manifest = load_manifest(out)
        from afkit.series import load_clip

        means = {}
        for e in manifest["clips"]:
            _, peaks, _, sid = load_clip(out / e["path"])
            hr = 60000.0 / np.mean(ibi_from_peaks(peaks).intervals_ms)
            means.setdefault(sid, []).append(hr)
        per_subject_spread = [np.ptp(v) for v in means.values()]
        across = np.ptp([np.mean(v) for v in means.values()])
        # clips of one subject cluster tighter than subjects spread
        assert max(per_subject_spread) < 12.0
        assert across > 1.0
