"""Shared fixtures: short seeded synthetic trials so the suite stays fast."""

import numpy as np
import pytest

from src.core import ActionLabel, ChannelId
from src.synth import ClassGainProfile, SynthConfig, generate_dataset, load_preset

UV = 1e-6


def short_config(**overrides) -> SynthConfig:
    """4 s trials: 2 s relaxation, 1 s burst starting at 2.5 s."""
    settings = dict(duration_s=4.0, relaxation_s=2.0, burst_start_s=2.5, burst_len_s=1.0)
    settings.update(overrides)
    return SynthConfig(**settings)


def quiet_config(**overrides) -> SynthConfig:
    """No noise, no mains, no jitter, pure 100 Hz tone carrier."""
    settings = dict(
        mains_amp=0.0,
        baseline_noise_rms=0.0,
        gain_jitter_rel=0.0,
        channel_jitter_rel=0.0,
        carrier="tone",
    )
    settings.update(overrides)
    return short_config(**settings)


def finger_labels(*digits):
    return tuple(ActionLabel("upper", "finger", "flexion", digit) for digit in digits)


def make_profile(gains_uv, labels=None) -> ClassGainProfile:
    gains = np.asarray(gains_uv, dtype=float) * UV
    labels = labels or finger_labels("index", "little", "middle", "ring", "thumb")[: gains.shape[0]]
    channels = tuple(ChannelId(i, f"forearm-#{i + 1}") for i in range(gains.shape[1]))
    return ClassGainProfile(tuple(labels), gains, channels)


@pytest.fixture(scope="session")
def fingers4():
    return load_preset("fingers4")


@pytest.fixture(scope="session")
def fingers4_dataset(fingers4):
    """4 classes x 16 trials of the fingers4 preset on short trials."""
    return generate_dataset(short_config(), fingers4.profile, trials_per_class=16, seed=11)


@pytest.fixture(scope="session")
def two_channel_dataset():
    """4 classes whose gain ratio ch2/ch3 differs; channels 0 and 1 are flat."""
    profile = make_profile(
        [
            [30, 30, 15, 75],
            [30, 30, 30, 60],
            [30, 30, 60, 30],
            [30, 30, 75, 15],
        ]
    )
    return generate_dataset(short_config(), profile, trials_per_class=16, seed=5)
