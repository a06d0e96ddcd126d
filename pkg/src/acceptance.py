"""
Seeded synthetic acceptance scenarios.

Each scenario builds lazily generated datasets from a bundled preset, runs
the normal pipeline on them and returns the measured accuracies. The slow
test suite asserts on these numbers; scripts/run_acceptance.py prints them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

from .core import Dataset, SplitSpec
from .dsp import FilterSpec, RmsParams
from .features import PeakProfile, extract_profiles
from .search import (
    Frontier,
    SearchConfig,
    SubsetResult,
    cross_condition_eval,
    enumerate_subsets,
    evaluate_subset,
    search_all,
    write_frontier_csv,
    write_results_csv,
)
from .synth import generate_dataset, indistinguishable_profile, load_preset

logger = logging.getLogger(__name__)

ACCEPTANCE_SEED = 7
TRIALS_PER_CLASS = 60
REPEATS = 5
MAINS_ABLATION_FACTOR = 10.0


@dataclass(frozen=True)
class Condition:
    """A generated dataset with its peak profiles computed once."""

    ds: Dataset
    profiles: list[PeakProfile]
    cfg: SearchConfig

    def evaluate(self, subset) -> SubsetResult:
        return evaluate_subset(self.ds, subset, self.cfg, self.profiles)


def build_condition(
    preset: str,
    seed: int = ACCEPTANCE_SEED,
    trials_per_class: int = TRIALS_PER_CLASS,
    notch: bool = True,
    mains_factor: float = 1.0,
    posture: int | None = None,
    jobs: int = 1,
) -> Condition:
    loaded = load_preset(preset)
    synth_cfg = replace(loaded.config, seed=seed, mains_amp=loaded.config.mains_amp * mains_factor)
    ds = generate_dataset(synth_cfg, loaded.at_posture(posture), trials_per_class, seed, lazy=True)
    cfg = SearchConfig(
        split=SplitSpec(seed=seed),
        fspec=FilterSpec(sample_rate_hz=synth_cfg.sample_rate_hz, notch_enabled=notch),
        rms=RmsParams(),
        repeats=REPEATS,
    )
    return Condition(ds, extract_profiles(ds, cfg.fspec, cfg.rms, jobs), cfg)


def large_subsets(n_channels: int, smallest: int) -> tuple[tuple[int, ...], ...]:
    return tuple(s for k in range(smallest, n_channels + 1) for s in enumerate_subsets(n_channels, k))


# =============================================================================
# Scenarios
# =============================================================================


@dataclass(frozen=True)
class SeparableOutcome:
    results: list[SubsetResult]
    frontier: Frontier
    best: SubsetResult
    ablated: SubsetResult

    @property
    def ablation_drop(self) -> float:
        return self.best.accuracy - self.ablated.accuracy

    def plateau_spread(self, k: int = 4) -> float:
        """Largest |acc(k') - acc(k)| over the frontier sizes above k."""
        base = self.frontier.accuracy(k)
        return max(abs(self.frontier.accuracy(j) - base) for j in self.frontier.best if j > k)


def separable_fingers(
    seed: int = ACCEPTANCE_SEED,
    trials_per_class: int = TRIALS_PER_CLASS,
    jobs: int = 1,
    out_dir: Path | None = None,
) -> SeparableOutcome:
    """
    fingers4 (four informative channels out of six): search every subset of
    size >= 4, then score the best subset again on data with the mains 10x
    louder and no notch.
    """
    clean = build_condition("fingers4", seed, trials_per_class, jobs=jobs)
    cfg = replace(clean.cfg, subsets=large_subsets(clean.ds.n_channels, 4))
    results, frontier = search_all(clean.ds, cfg, jobs=jobs, profiles=clean.profiles)
    best = frontier.global_best()

    noisy = build_condition(
        "fingers4", seed, trials_per_class, notch=False, mains_factor=MAINS_ABLATION_FACTOR, jobs=jobs
    )
    ablated = noisy.evaluate(best.subset)
    logger.info(
        f"🧪 fingers4 best {list(best.subset)} accuracy {best.accuracy:.3f}, "
        f"without notch {ablated.accuracy:.3f}"
    )

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_results_csv(out_dir / "fingers4-results.csv", results)
        write_frontier_csv(out_dir / "fingers4-frontier.csv", frontier)
        write_results_csv(out_dir / "fingers4-ablation.csv", [ablated])
    return SeparableOutcome(results, frontier, best, ablated)


def indistinguishable_classes(
    seed: int = ACCEPTANCE_SEED,
    trials_per_class: int = TRIALS_PER_CLASS,
    subset: tuple[int, ...] = (1, 2),
    jobs: int = 1,
) -> SubsetResult:
    """Two classes generated from the same gain row; accuracy should sit at chance."""
    preset = load_preset("fingers4")
    profile = indistinguishable_profile(preset.profile)
    synth_cfg = replace(preset.config, seed=seed)
    ds = generate_dataset(synth_cfg, profile, trials_per_class, seed, lazy=True)
    cfg = SearchConfig(split=SplitSpec(seed=seed), repeats=REPEATS)
    return evaluate_subset(ds, subset, cfg, extract_profiles(ds, cfg.fspec, cfg.rms, jobs))


def posture_transfer(
    seed: int = ACCEPTANCE_SEED,
    trials_per_class: int = 30,
    jobs: int = 1,
) -> dict[int, float]:
    """
    Train at 0° and test on fresh trials at 0°, 90° and 180°.

    Returns accuracy keyed by the angular distance between the postures.
    """
    train = build_condition("fingers5-posture", seed, trials_per_class, posture=0, jobs=jobs)
    subset = tuple(range(train.ds.n_channels))
    accuracies = {}
    for posture in (0, 90, 180):
        test = build_condition("fingers5-posture", seed + 1, trials_per_class, posture=posture, jobs=jobs)
        accuracies[posture] = cross_condition_eval(
            train.ds, test.ds, subset, train.cfg, None, train.profiles, test.profiles
        )
        logger.info(f"🔀 posture 0 -> {posture}: accuracy {accuracies[posture]:.3f}")
    return accuracies
