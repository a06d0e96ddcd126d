from dataclasses import replace

import numpy as np
import pytest

from src.dsp import FilterSpec, RmsParams
from src.errors import ChannelError, NormalizerTooSmall, NormalizerUnusable, SignalError
from src.features import (
    PeakProfile,
    build_design_matrix,
    extract_peaks,
    extract_profiles,
    normalize,
    write_feature_csv,
)
from src.synth import generate_dataset, generate_trial

from .conftest import UV, make_profile, quiet_config, short_config

FSPEC = FilterSpec()
RMS = RmsParams()


def profile_of(peaks):
    peaks = np.asarray(peaks, dtype=float)
    return PeakProfile(peaks, np.zeros_like(peaks), "t0")


class TestExtractPeaks:
    def test_peak_matches_gain(self):
        gains = [100, 40, 0]
        profile = make_profile([gains])
        trial = generate_trial(quiet_config(), profile, 0, trial_seed=1)
        peaks = extract_peaks(trial, FSPEC, RMS)
        np.testing.assert_allclose(peaks.peaks[:2], np.array(gains[:2]) * UV, rtol=0.05)

    def test_zero_channel_has_zero_peak_and_baseline(self):
        profile = make_profile([[100, 40, 0]])
        peaks = extract_peaks(generate_trial(quiet_config(), profile, 0, 1), FSPEC, RMS)
        assert peaks.peaks[2] == 0.0
        assert peaks.baselines[2] == 0.0

    def test_silent_trial_has_zero_peaks(self):
        profile = make_profile([[0, 0, 0]])
        peaks = extract_peaks(generate_trial(quiet_config(), profile, 0, 4), FSPEC, RMS)
        assert np.all(peaks.peaks == 0.0)

    def test_noise_only_trial_stays_near_baseline(self):
        profile = make_profile([[0, 0, 0]])
        cfg = short_config(mains_amp=0.0, baseline_noise_rms=5e-6)
        peaks = extract_peaks(generate_trial(cfg, profile, 0, 4), FSPEC, RMS)
        assert np.all(peaks.baselines > 0)
        assert np.all(peaks.peaks <= 3 * peaks.baselines)

    def test_relaxation_shorter_than_window(self):
        profile = make_profile([[50, 50]])
        trial = generate_trial(quiet_config(relaxation_s=0.01, burst_start_s=0.5), profile, 0, 1)
        with pytest.raises(SignalError, match="shorter than one RMS window"):
            extract_peaks(trial, FSPEC, RMS)

    def test_gain_invariance_of_features(self):
        profile = make_profile([[60, 30, 45]])
        trial = generate_trial(short_config(), profile, 0, 9)
        scaled = replace(trial, samples=trial.samples * 3.7, n_channels=0)
        a = normalize(extract_peaks(trial, FSPEC, RMS), 1).values
        b = normalize(extract_peaks(scaled, FSPEC, RMS), 1).values
        np.testing.assert_allclose(b, a, rtol=1e-9)

    def test_parallel_extraction_matches_serial(self, two_channel_dataset):
        ds = two_channel_dataset.subset_trials(range(8))
        serial = extract_profiles(ds, FSPEC, RMS, jobs=1)
        parallel = extract_profiles(ds, FSPEC, RMS, jobs=2)
        for a, b in zip(serial, parallel):
            assert a.trial_id == b.trial_id
            np.testing.assert_array_equal(a.peaks, b.peaks)


class TestNormalize:
    def test_ratios(self):
        fv = normalize(profile_of([2, 4, 8]), 0, 1e-9)
        np.testing.assert_allclose(fv.values, [2.0, 4.0])
        assert fv.normalizer_channel == 0

    def test_middle_normalizer_keeps_channel_order(self):
        np.testing.assert_allclose(normalize(profile_of([2, 4, 8]), 1).values, [0.5, 2.0])

    def test_length_is_n_minus_one(self):
        assert len(normalize(profile_of([1, 2, 3, 4, 5, 6]), 2).values) == 5

    def test_too_small(self):
        with pytest.raises(NormalizerTooSmall):
            normalize(profile_of([0, 4, 8]), 0, 1e-9)

    def test_out_of_range(self):
        with pytest.raises(ChannelError):
            normalize(profile_of([1, 2]), 2)

    def test_permutation_consistency(self):
        peaks = np.array([3.0, 5.0, 7.0, 11.0])
        order = [2, 0, 3, 1]
        a = normalize(profile_of(peaks), 0).values
        b = normalize(profile_of(peaks[order]), order.index(0)).values
        assert sorted(a) == pytest.approx(sorted(b))


class TestDesignMatrix:
    def test_dimensions(self, fingers4_dataset):
        profiles = extract_profiles(fingers4_dataset, FSPEC, RMS)
        dm = build_design_matrix(fingers4_dataset, [0, 2, 3, 5], 2, profiles=profiles)
        assert dm.X.shape == (len(fingers4_dataset.trials), 3)
        assert len(dm.y) == len(dm.trial_ids) == dm.X.shape[0]
        two = build_design_matrix(fingers4_dataset, [1, 4], 1, profiles=profiles)
        assert two.X.shape[1] == 1

    def test_single_channel_uses_raw_peak(self, fingers4_dataset):
        profiles = extract_profiles(fingers4_dataset, FSPEC, RMS)
        dm = build_design_matrix(fingers4_dataset, [3], None, profiles=profiles)
        np.testing.assert_array_equal(dm.X[:, 0], [p.peaks[3] for p in profiles])

    def test_normalizer_must_be_in_subset(self, fingers4_dataset):
        with pytest.raises(ChannelError):
            build_design_matrix(fingers4_dataset, [0, 1], 2, profiles=extract_profiles(fingers4_dataset, FSPEC, RMS))

    def test_all_zero_normalizer_is_unusable(self):
        profile = make_profile([[0, 50, 30], [0, 30, 50]])
        ds = generate_dataset(quiet_config(), profile, trials_per_class=2, seed=1)
        with pytest.raises(NormalizerUnusable, match="normalizer unusable"):
            build_design_matrix(ds, [0, 1, 2], 0, FSPEC, RMS)

    def test_weak_rows_are_dropped_and_counted(self):
        profile = make_profile([[0, 50], [40, 50]])
        ds = generate_dataset(quiet_config(), profile, trials_per_class=3, seed=1)
        dm = build_design_matrix(ds, [0, 1], 0, FSPEC, RMS)
        assert dm.dropped == 3
        assert dm.X.shape == (3, 1)

    def test_feature_csv(self, tmp_path, two_channel_dataset):
        ds = two_channel_dataset.subset_trials(range(4))
        dm = build_design_matrix(ds, [1, 2, 3], 2, FSPEC, RMS)
        path = write_feature_csv(tmp_path / "features.csv", dm, ds.classes)
        lines = path.read_text().splitlines()
        assert lines[0] == "trial_id,normalizer,f0,f1,label"
        first = lines[1].split(",")
        assert first[0] == dm.trial_ids[0]
        assert first[1] == "2"
        assert float(first[2]) == dm.X[0, 0]
        assert first[-1] == ds.classes[dm.y[0]].token
