"""
Peak-RMS features.

Each channel of a trial is filtered (notch then bandpass) and reduced to a
moving RMS envelope. The baseline is the median RMS over the relaxation
segment; the peak is the largest RMS of the action segment above it.
Peaks are then divided by one normalizer channel's peak, giving an n-1
dimensional, gain-invariant feature vector.
"""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, replace
from functools import lru_cache
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from .core import ActionLabel, Dataset, TrialRecord, validate_subset
from .dsp import FilterSpec, RmsParams, design_chain, moving_rms, preprocess
from .errors import ChannelError, NormalizerTooSmall, NormalizerUnusable, SignalError

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class PeakProfile:
    peaks: np.ndarray
    baselines: np.ndarray
    trial_id: str
    label: ActionLabel | None = None

    def __post_init__(self):
        if len(self.peaks) != len(self.baselines):
            raise SignalError("peaks and baselines differ in length")


@dataclass(frozen=True, eq=False)
class FeatureVector:
    normalizer_channel: int
    values: np.ndarray
    label: ActionLabel | None = None


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Rows that normalized successfully; `dropped` counts the rest."""

    X: np.ndarray
    y: np.ndarray
    trial_ids: list[str]
    subset: tuple[int, ...]
    normalizer: int | None
    dropped: int = 0


# =============================================================================
# Extraction
# =============================================================================


@lru_cache(maxsize=16)
def _cascade(fspec: FilterSpec):
    return design_chain(fspec)


def _spec_for(trial: TrialRecord, fspec: FilterSpec) -> FilterSpec:
    if fspec.sample_rate_hz == trial.sample_rate_hz:
        return fspec
    return replace(fspec, sample_rate_hz=trial.sample_rate_hz)


def extract_peaks(trial: TrialRecord, fspec: FilterSpec, rms: RmsParams) -> PeakProfile:
    """Baseline-subtracted peak RMS for every channel of one trial."""
    if not trial.duration_s > trial.relaxation_s:
        raise SignalError(
            f"trial {trial.trial_id!r}: duration {trial.duration_s}s does not exceed relaxation "
            f"{trial.relaxation_s}s"
        )
    fspec = _spec_for(trial, fspec)
    fs = fspec.output_rate_hz

    filtered = preprocess(trial.load_samples(), fspec, _cascade(fspec))
    series = moving_rms(filtered, fs, rms)
    w = rms.window_samples(fs)
    hop = rms.hop_samples(fs)

    relax_end = int(round(trial.relaxation_s * fs))
    n_baseline = (relax_end - w) // hop + 1 if relax_end >= w else 0
    if n_baseline < 1:
        raise SignalError(
            f"trial {trial.trial_id!r}: relaxation segment ({trial.relaxation_s}s) is shorter than one "
            f"RMS window ({rms.window_s}s)"
        )
    first_active = math.ceil(relax_end / hop)
    if first_active >= series.values.shape[-1]:
        raise SignalError(f"trial {trial.trial_id!r}: no RMS window starts after relaxation")

    baselines = np.median(series.values[:, :n_baseline], axis=1)
    peaks = np.maximum(0.0, series.values[:, first_active:].max(axis=1) - baselines)
    return PeakProfile(peaks=peaks, baselines=baselines, trial_id=trial.trial_id, label=trial.label)


def _extract_job(args) -> PeakProfile:
    trial, fspec, rms = args
    return extract_peaks(trial, fspec, rms)


def extract_profiles(ds: Dataset, fspec: FilterSpec, rms: RmsParams, jobs: int = 1) -> list[PeakProfile]:
    """Peak profiles for every trial, in trial order."""
    logger.info(f"📈 Extracting peak RMS for {len(ds.trials)} trials (jobs={jobs})")
    work = [(t, fspec, rms) for t in ds.trials]
    if jobs > 1 and len(work) > 1:
        with Pool(processes=jobs) as pool:
            profiles = pool.map(_extract_job, work, chunksize=max(1, len(work) // (4 * jobs)))
    else:
        profiles = [_extract_job(w) for w in work]
    logger.debug(f"Extracted {len(profiles)} profiles")
    return profiles


# =============================================================================
# Normalization
# =============================================================================


def normalize(p: PeakProfile, normalizer: int, eps: float = DEFAULT_EPS) -> FeatureVector:
    """Ratios of every other channel's peak to the normalizer's, in channel order."""
    if not 0 <= normalizer < len(p.peaks):
        raise ChannelError(f"normalizer {normalizer} out of range for {len(p.peaks)} channels")
    denominator = float(p.peaks[normalizer])
    if denominator < eps:
        raise NormalizerTooSmall(p.trial_id, normalizer, denominator, eps)
    values = np.delete(np.asarray(p.peaks, dtype=float), normalizer) / denominator
    return FeatureVector(normalizer_channel=normalizer, values=values, label=p.label)


def build_design_matrix(
    ds: Dataset,
    subset: Sequence[int],
    normalizer: int | None,
    fspec: FilterSpec | None = None,
    rms: RmsParams | None = None,
    eps: float = DEFAULT_EPS,
    profiles: Sequence[PeakProfile] | None = None,
    jobs: int = 1,
) -> DesignMatrix:
    """
    Feature rows for a channel subset.

    `normalizer` is a dataset channel index contained in `subset`. A
    single-channel subset uses the raw peak and takes `normalizer=None`.
    Pass precomputed `profiles` (aligned with ds.trials) to skip filtering.
    """
    subset = validate_subset(subset, ds.n_channels)
    if profiles is None:
        profiles = extract_profiles(ds, fspec or FilterSpec(), rms or RmsParams(), jobs)
    if len(profiles) != len(ds.trials):
        raise SignalError(f"{len(profiles)} profiles for {len(ds.trials)} trials")
    y_all = ds.class_indices()

    if len(subset) == 1:
        X = np.array([[p.peaks[subset[0]]] for p in profiles], dtype=float).reshape(-1, 1)
        return DesignMatrix(X, y_all, ds.trial_ids(), subset, None, 0)

    if normalizer not in subset:
        raise ChannelError(f"normalizer {normalizer} is not in subset {list(subset)}")
    position = subset.index(normalizer)

    rows, y, trial_ids, dropped = [], [], [], 0
    for profile, label_idx in zip(profiles, y_all):
        restricted = PeakProfile(profile.peaks[list(subset)], profile.baselines[list(subset)], profile.trial_id)
        try:
            vector = normalize(restricted, position, eps)
        except NormalizerTooSmall as e:
            dropped += 1
            logger.debug(f"Dropping row: {e}")
            continue
        rows.append(vector.values)
        y.append(label_idx)
        trial_ids.append(profile.trial_id)

    if not rows:
        raise NormalizerUnusable(
            f"normalizer unusable: channel {normalizer} is below eps in all {dropped} trials "
            f"(subset {list(subset)})"
        )
    if dropped:
        logger.warning(f"⚠️  Normalizer {normalizer}: dropped {dropped} of {len(profiles)} trials")
    return DesignMatrix(
        X=np.vstack(rows),
        y=np.asarray(y, dtype=int),
        trial_ids=trial_ids,
        subset=subset,
        normalizer=normalizer,
        dropped=dropped,
    )


# =============================================================================
# Export
# =============================================================================


def write_feature_csv(path: str | Path, design: DesignMatrix, classes: Sequence[ActionLabel]) -> Path:
    """CSV `trial_id,normalizer,f0..fk,label` with round-trip float text."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_features = design.X.shape[1]
    normalizer = "" if design.normalizer is None else str(design.normalizer)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["trial_id", "normalizer", *[f"f{i}" for i in range(n_features)], "label"])
        for trial_id, row, label_idx in zip(design.trial_ids, design.X, design.y):
            writer.writerow([trial_id, normalizer, *[repr(float(v)) for v in row], classes[label_idx].token])
    logger.info(f"💾 Wrote {len(design.trial_ids)} feature rows to {path}")
    return path
