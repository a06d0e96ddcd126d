"""
Deterministic synthetic multi-channel sEMG.

A trial is baseline Gaussian noise plus a mains sinusoid on every channel,
with an action burst added after the relaxation segment:

    burst = carrier (unit RMS, band-limited) x envelope x gain x jitter

The mains amplitude of each channel also shifts by a random fraction during
the burst, following the same envelope (electrode impedance changes while
the muscle moves). Only the notch separates that shift from the burst.

Gains come from a class x channel profile. Every random draw comes from a
generator seeded by (seed, class, repeat), so output depends only on the
configuration and seeds.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Iterator, Sequence
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .config import PRESETS_DIR
from .core import ActionLabel, ChannelId, Dataset, TrialRecord, derive_seed
from .errors import ConfigError, DataContractError

logger = logging.getLogger(__name__)

ENVELOPES = ("hann", "trapezoid")
CARRIERS = ("noise", "tone")
MICROVOLT = 1e-6


@dataclass(frozen=True)
class SynthConfig:
    sample_rate_hz: float = 20000.0
    duration_s: float = 15.0
    relaxation_s: float = 5.0
    burst_start_s: float = 6.0
    burst_len_s: float = 2.0
    envelope: str = "hann"
    carrier_band: tuple[float, float] = (70.0, 250.0)
    carrier: str = "noise"
    tone_hz: float = 100.0
    mains_hz: float = 50.0
    mains_amp: float = 20e-6
    mains_amp_jitter_rel: float = 0.5
    mains_burst_rel: float = 0.3  # mains pickup change during the contraction
    baseline_noise_rms: float = 5e-6
    gain_jitter_rel: float = 0.15
    channel_jitter_rel: float = 0.05
    seed: int = 7

    def __post_init__(self):
        object.__setattr__(self, "carrier_band", tuple(float(f) for f in self.carrier_band))
        nyquist = self.sample_rate_hz / 2
        if not self.sample_rate_hz > 0:
            raise ConfigError("sample_rate_hz must be positive")
        if not 0 <= self.relaxation_s <= self.burst_start_s:
            raise ConfigError("burst must start after the relaxation segment")
        if not self.burst_len_s > 0 or self.burst_start_s + self.burst_len_s > self.duration_s:
            raise ConfigError(
                f"burst {self.burst_start_s}s + {self.burst_len_s}s does not fit in {self.duration_s}s"
            )
        lo, hi = self.carrier_band
        if not 0 < lo < hi < nyquist:
            raise ConfigError(f"carrier band {self.carrier_band} must lie inside (0, {nyquist})")
        if self.envelope not in ENVELOPES:
            raise ConfigError(f"envelope must be one of {ENVELOPES}")
        if self.carrier not in CARRIERS:
            raise ConfigError(f"carrier must be one of {CARRIERS}")
        if not 0 < self.tone_hz < nyquist:
            raise ConfigError("tone_hz must lie inside (0, fs/2)")
        for name in ("mains_amp", "baseline_noise_rms", "gain_jitter_rel", "channel_jitter_rel"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 <= self.mains_amp_jitter_rel <= 1:
            raise ConfigError("mains_amp_jitter_rel must be in [0, 1]")
        if not 0 <= self.mains_burst_rel <= 1:
            raise ConfigError("mains_burst_rel must be in [0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> SynthConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synth settings: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["carrier_band"] = list(self.carrier_band)
        return data


@dataclass(frozen=True, eq=False)
class ClassGainProfile:
    """Burst RMS gain in volts for every (class, channel)."""

    labels: tuple[ActionLabel, ...]
    gains: np.ndarray
    channels: tuple[ChannelId, ...]

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=float)
        if gains.shape != (len(self.labels), len(self.channels)):
            raise ConfigError(
                f"gain matrix is {gains.shape}, expected {len(self.labels)} classes x {len(self.channels)} channels"
            )
        if not np.all(np.isfinite(gains)) or np.any(gains < 0):
            raise ConfigError("gains must be finite and non-negative")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError("duplicate class label in gain profile")
        object.__setattr__(self, "gains", gains)

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def at_posture(self, posture_deg: int, shift_per_deg: float) -> ClassGainProfile:
        labels = tuple(replace(label, posture_deg=posture_deg) for label in self.labels)
        return ClassGainProfile(labels, rotate_profile(self.gains, posture_deg, shift_per_deg), self.channels)


@dataclass(frozen=True)
class SynthPreset:
    name: str
    description: str
    profile: ClassGainProfile
    config: SynthConfig
    shift_per_deg: float | None = None  # set for posture presets

    def at_posture(self, posture_deg: int | None) -> ClassGainProfile:
        if posture_deg is None:
            if self.shift_per_deg is None:
                return self.profile
            posture_deg = 0
        if self.shift_per_deg is None:
            raise ConfigError(f"preset {self.name!r} has no posture variants")
        return self.profile.at_posture(posture_deg, self.shift_per_deg)


# =============================================================================
# Profiles and presets
# =============================================================================


def rotate_profile(gains, posture_deg: float, shift_per_deg: float) -> np.ndarray:
    """
    Circularly shift gain columns by posture_deg * shift_per_deg channels,
    interpolating linearly between neighbors for fractional shifts.
    """
    gains = np.atleast_2d(np.asarray(gains, dtype=float))
    shift = posture_deg * shift_per_deg
    whole = math.floor(shift)
    frac = shift - whole
    rolled = np.roll(gains, whole, axis=1)
    return (1 - frac) * rolled + frac * np.roll(rolled, 1, axis=1)


def profile_correlation(a, b) -> float:
    return float(np.corrcoef(np.ravel(a), np.ravel(b))[0, 1])


def _parse_profile(document: dict, source: str) -> SynthPreset:
    try:
        channels = tuple(ChannelId(int(c["index"]), c.get("placement")) for c in document["channels"])
        labels, rows = [], []
        for entry in document["classes"]:
            entry = dict(entry)
            rows.append([g * MICROVOLT for g in entry.pop("gains_uv")])
            labels.append(ActionLabel.from_mapping(entry))
        config = SynthConfig.from_dict(document.get("config", {}))
    except (KeyError, TypeError) as e:
        raise ConfigError(f"{source}: malformed profile ({e})") from None
    except DataContractError as e:
        raise ConfigError(f"{source}: {e}") from None

    rotation = document.get("rotation_channels_per_180deg")
    return SynthPreset(
        name=document.get("name", source),
        description=document.get("description", ""),
        profile=ClassGainProfile(tuple(labels), np.array(rows), channels),
        config=config,
        shift_per_deg=None if rotation is None else float(rotation) / 180.0,
    )


def list_presets(presets_dir: Path | None = None) -> list[str]:
    return sorted(p.stem for p in Path(presets_dir or PRESETS_DIR).glob("*.json"))


def load_profile_file(path: str | Path) -> SynthPreset:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"profile file {path} not found")
    try:
        with open(path, "r") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"profile file {path} is not valid JSON: {e}") from None
    return _parse_profile(document, path.stem)


def load_preset(name: str, presets_dir: Path | None = None) -> SynthPreset:
    path = Path(presets_dir or PRESETS_DIR) / f"{name}.json"
    if not path.is_file():
        available = ", ".join(list_presets(presets_dir)) or "none"
        raise ConfigError(f"unknown preset {name!r}; available presets: {available}")
    return load_profile_file(path)


# =============================================================================
# Signal pieces
# =============================================================================


def band_limited_carrier(rng: np.random.Generator, n: int, fs: float, band: tuple[float, float]) -> np.ndarray:
    """Gaussian noise with all spectral content outside `band` removed, unit RMS."""
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1 / fs)
    spectrum[(freqs < band[0]) | (freqs > band[1])] = 0
    carrier = np.fft.irfft(spectrum, n=n)
    rms = np.sqrt(np.mean(carrier**2))
    return carrier / rms if rms > 0 else carrier


def envelope(kind: str, n: int) -> np.ndarray:
    if kind == "hann":
        return np.hanning(n)
    ramp = max(1, n // 4)
    return np.interp(np.arange(n), [0, ramp, n - 1 - ramp, n - 1], [0.0, 1.0, 1.0, 0.0])


# =============================================================================
# Generation
# =============================================================================


def generate_trial(
    cfg: SynthConfig,
    profile: ClassGainProfile,
    class_idx: int,
    trial_seed: int,
    trial_id: str | None = None,
    subject_id: str = "synthetic",
) -> TrialRecord:
    if not 0 <= class_idx < profile.n_classes:
        raise ConfigError(f"class index {class_idx} out of range for {profile.n_classes} classes")
    rng = np.random.default_rng(trial_seed)
    fs = cfg.sample_rate_hz
    n = int(round(cfg.duration_s * fs))
    n_channels = len(profile.channels)
    t = np.arange(n) / fs

    start = int(round(cfg.burst_start_s * fs))
    length = min(int(round(cfg.burst_len_s * fs)), n - start)
    shape = envelope(cfg.envelope, length)

    shared = 1 + rng.uniform(-cfg.gain_jitter_rel, cfg.gain_jitter_rel)
    per_channel = 1 + rng.uniform(-cfg.channel_jitter_rel, cfg.channel_jitter_rel, n_channels)
    mains_scale = 1 + rng.uniform(-cfg.mains_amp_jitter_rel, cfg.mains_amp_jitter_rel, n_channels)
    mains_phase = rng.uniform(0, 2 * np.pi, n_channels)
    mains_burst = rng.uniform(-cfg.mains_burst_rel, cfg.mains_burst_rel, n_channels)
    gains = profile.gains[class_idx] * shared * per_channel

    samples = np.empty((n_channels, n))
    for ch in range(n_channels):
        x = cfg.baseline_noise_rms * rng.standard_normal(n)
        mains = cfg.mains_amp * mains_scale[ch] * np.sin(2 * np.pi * cfg.mains_hz * t + mains_phase[ch])
        mains[start : start + length] *= 1 + mains_burst[ch] * shape
        x += mains
        if cfg.carrier == "noise":
            carrier = band_limited_carrier(rng, length, fs, cfg.carrier_band)
        else:
            phase = rng.uniform(0, 2 * np.pi)
            carrier = np.sqrt(2) * np.sin(2 * np.pi * cfg.tone_hz * t[:length] + phase)
        x[start : start + length] += gains[ch] * shape * carrier
        samples[ch] = x

    return TrialRecord(
        trial_id=trial_id or f"c{class_idx:02d}-seed{trial_seed}",
        subject_id=subject_id,
        label=profile.labels[class_idx],
        samples=samples,
        sample_rate_hz=fs,
        relaxation_s=cfg.relaxation_s,
        duration_s=cfg.duration_s,
    )


def trial_seed(seed: int, class_idx: int, repeat: int) -> int:
    return derive_seed(seed, "trial", class_idx, repeat)


@dataclass(frozen=True)
class SynthSource:
    """Stands in for a trial file: regenerates the samples from the trial seed on read."""

    cfg: SynthConfig
    profile: ClassGainProfile
    class_idx: int
    seed: int
    rows: tuple[int, ...] | None = None

    @property
    def n_columns(self) -> int:
        return len(self.profile.channels)

    def read(self, trial_id: str) -> np.ndarray:
        samples = generate_trial(self.cfg, self.profile, self.class_idx, self.seed, trial_id).samples
        if self.rows is not None:
            samples = samples[list(self.rows)]
        return np.array(samples)


def iter_trials(
    cfg: SynthConfig,
    profile: ClassGainProfile,
    trials_per_class: int,
    seed: int | None = None,
    lazy: bool = False,
) -> Iterator[TrialRecord]:
    """
    Yield trials class by class; ids are `c<class>-r<repeat>`.

    Lazy trials carry a SynthSource instead of samples, so a large dataset
    costs one trial of memory at a time.
    """
    if trials_per_class < 2:
        raise ConfigError(f"trials_per_class must be >= 2, got {trials_per_class}")
    seed = cfg.seed if seed is None else seed
    for class_idx in range(profile.n_classes):
        for repeat in range(trials_per_class):
            trial_id = f"c{class_idx:02d}-r{repeat:03d}"
            s = trial_seed(seed, class_idx, repeat)
            if not lazy:
                yield generate_trial(cfg, profile, class_idx, s, trial_id=trial_id)
                continue
            yield TrialRecord(
                trial_id=trial_id,
                subject_id="synthetic",
                label=profile.labels[class_idx],
                sample_rate_hz=cfg.sample_rate_hz,
                relaxation_s=cfg.relaxation_s,
                duration_s=cfg.duration_s,
                source=SynthSource(cfg, profile, class_idx, s),
            )


def generate_dataset(
    cfg: SynthConfig,
    profile: ClassGainProfile,
    trials_per_class: int,
    seed: int | None = None,
    lazy: bool = False,
) -> Dataset:
    logger.info(
        f"🧪 Generating {profile.n_classes} classes x {trials_per_class} trials, "
        f"{len(profile.channels)} channels{' (lazy)' if lazy else ''}"
    )
    trials = list(iter_trials(cfg, profile, trials_per_class, seed, lazy))
    return Dataset.from_trials(profile.channels, trials)


def indistinguishable_profile(
    profile: ClassGainProfile, keep: Sequence[int] = (0, 1)
) -> ClassGainProfile:
    """Two classes that share the first class's gain row."""
    a, b = keep
    gains = profile.gains[[a, a]]
    return ClassGainProfile((profile.labels[a], profile.labels[b]), gains, profile.channels)
