"""
Exhaustive channel-subset search.

Every subset of size 1..max_k is scored with every one of its channels as
the ratio normalizer; a subset's accuracy is the best normalizer's mean test
accuracy over `repeats` seeded stratified re-splits. The best subset of each
size forms the frontier.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from itertools import combinations
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from .core import Dataset, SplitSpec, derive_seed, stratified_partition, validate_subset
from .dsp import FilterSpec, RmsParams
from .errors import (
    ChannelError,
    ConfigError,
    DataContractError,
    NoUsableNormalizer,
    NumericError,
    SplitError,
)
from .features import DEFAULT_EPS, PeakProfile, build_design_matrix, extract_profiles
from .svm import SvmParams, accuracy, train_multiclass

logger = logging.getLogger(__name__)

# =============================================================================
# Types
# =============================================================================


@dataclass(frozen=True)
class SearchConfig:
    max_k: int | None = None  # None: all channels
    split: SplitSpec = field(default_factory=SplitSpec)
    svm: SvmParams = field(default_factory=SvmParams)
    fspec: FilterSpec = field(default_factory=FilterSpec)
    rms: RmsParams = field(default_factory=RmsParams)
    repeats: int = 5
    eps: float = DEFAULT_EPS
    subsets: tuple[tuple[int, ...], ...] | None = None  # whitelist

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        if self.max_k is not None and self.max_k < 1:
            raise ConfigError(f"max_k must be >= 1, got {self.max_k}")

    @property
    def seed(self) -> int:
        return self.split.seed


@dataclass(frozen=True)
class SubsetResult:
    subset: tuple[int, ...]
    normalizer: int
    accuracy: float
    accuracy_sd: float = 0.0
    repeats: int = 1
    dropped: int = 0
    converged: bool = True
    per_normalizer: dict = field(default_factory=dict, compare=False)

    @property
    def k(self) -> int:
        return len(self.subset)

    @property
    def subset_text(self) -> str:
        return ";".join(str(i) for i in self.subset)


@dataclass(frozen=True)
class Frontier:
    best: dict[int, SubsetResult]

    def accuracy(self, k: int) -> float:
        return self.best[k].accuracy

    def global_best(self) -> SubsetResult:
        # Smallest k wins ties
        return max(sorted(self.best.values(), key=lambda r: r.k), key=lambda r: r.accuracy)

    def optimal_k(self, tolerance: float = 0.0) -> int:
        """Smallest k whose best accuracy is within `tolerance` of the global best."""
        target = self.global_best().accuracy - tolerance
        return min(k for k, r in self.best.items() if r.accuracy >= target)


# =============================================================================
# Enumeration
# =============================================================================


def enumerate_subsets(n: int, k: int) -> list[tuple[int, ...]]:
    """All C(n, k) strictly increasing subsets, lexicographic."""
    if not 1 <= k <= n:
        raise ConfigError(f"subset size {k} out of range 1..{n}")
    return list(combinations(range(n), k))


def _candidate_subsets(n: int, cfg: SearchConfig) -> list[tuple[int, ...]]:
    max_k = n if cfg.max_k is None else cfg.max_k
    if not 1 <= max_k <= n:
        raise ConfigError(f"max_k {max_k} out of range 1..{n}")
    if cfg.subsets is not None:
        subsets = sorted({validate_subset(s, n) for s in cfg.subsets}, key=lambda s: (len(s), s))
        return [s for s in subsets if len(s) <= max_k]
    return [s for k in range(1, max_k + 1) for s in enumerate_subsets(n, k)]


# =============================================================================
# Evaluation
# =============================================================================


def repeat_seeds(seed: int, subset: Sequence[int], normalizer: int, repeat: int) -> tuple[int, int]:
    """Split and SVM seeds for one repeat of one (subset, normalizer)."""
    return (
        derive_seed(seed, "split", *subset, normalizer, repeat),
        derive_seed(seed, "svm", *subset, normalizer, repeat),
    )


def derived_seeds(results: Sequence[SubsetResult], cfg: SearchConfig) -> dict[str, dict[str, int]]:
    """Every split/SVM seed a search used, keyed "subset;normalizer;repeat"."""
    seeds = {}
    for result in results:
        subset_key = ",".join(str(i) for i in result.subset)
        for normalizer in sorted(result.per_normalizer):
            for repeat in range(cfg.repeats):
                split_seed, svm_seed = repeat_seeds(cfg.seed, result.subset, normalizer, repeat)
                seeds[f"{subset_key};{normalizer};{repeat}"] = {"split": split_seed, "svm": svm_seed}
    return seeds


def _score_normalizer(
    ds: Dataset,
    subset: tuple[int, ...],
    normalizer: int,
    cfg: SearchConfig,
    profiles: Sequence[PeakProfile],
) -> tuple[float, float, int, bool]:
    design = build_design_matrix(ds, subset, normalizer, cfg.fspec, cfg.rms, cfg.eps, profiles=profiles)
    scores = []
    converged = True
    for repeat in range(cfg.repeats):
        split_seed, svm_seed = repeat_seeds(cfg.seed, subset, normalizer, repeat)
        logger.debug(
            f"Seeds subset {list(subset)} normalizer {normalizer} repeat {repeat}: split {split_seed} svm {svm_seed}"
        )
        train_idx, test_idx = stratified_partition(
            design.y, cfg.split.train_fraction, split_seed, cfg.split.stratified
        )
        svm_params = replace(cfg.svm, seed=svm_seed)
        model = train_multiclass(design.X[train_idx], design.y[train_idx], svm_params)
        converged &= model.converged
        scores.append(accuracy(model, design.X[test_idx], design.y[test_idx]))
    sd = float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0
    return float(np.mean(scores)), sd, design.dropped, converged


def evaluate_subset(
    ds: Dataset,
    subset: Sequence[int],
    cfg: SearchConfig,
    profiles: Sequence[PeakProfile] | None = None,
) -> SubsetResult:
    """
    Best normalizer for one subset; ties go to the lowest channel index.

    Size-1 subsets use the raw peak and report the channel itself as normalizer.
    """
    subset = validate_subset(subset, ds.n_channels)
    if profiles is None:
        profiles = extract_profiles(ds, cfg.fspec, cfg.rms)

    best = None
    per_normalizer = {}
    for normalizer in subset:
        try:
            mean, sd, dropped, converged = _score_normalizer(ds, subset, normalizer, cfg, profiles)
        except (NumericError, SplitError) as e:
            per_normalizer[normalizer] = str(e)
            logger.debug(f"Subset {list(subset)} normalizer {normalizer} failed: {e}")
            continue
        per_normalizer[normalizer] = mean
        if best is None or mean > best.accuracy:
            best = SubsetResult(subset, normalizer, mean, sd, cfg.repeats, dropped, converged)

    if best is None:
        raise NoUsableNormalizer(f"no usable normalizer for subset {list(subset)}: {per_normalizer}")
    return replace(best, per_normalizer=per_normalizer)


# Worker state for the process pool: each worker receives the dataset and
# profiles once through the initializer.
_worker: dict = {}


def _init_worker(ds: Dataset, profiles: Sequence[PeakProfile], cfg: SearchConfig):
    _worker.update(ds=ds, profiles=profiles, cfg=cfg)


def _evaluate_job(subset: tuple[int, ...]) -> tuple[tuple[int, ...], SubsetResult | str]:
    try:
        return subset, evaluate_subset(_worker["ds"], subset, _worker["cfg"], _worker["profiles"])
    except NoUsableNormalizer as e:
        return subset, str(e)


def build_frontier(results: Sequence[SubsetResult]) -> Frontier:
    best: dict[int, SubsetResult] = {}
    for result in results:
        current = best.get(result.k)
        if current is None or result.accuracy > current.accuracy:
            best[result.k] = result
    return Frontier(best=dict(sorted(best.items())))


def search_all(
    ds: Dataset,
    cfg: SearchConfig,
    jobs: int = 1,
    profiles: Sequence[PeakProfile] | None = None,
) -> tuple[list[SubsetResult], Frontier]:
    """
    Score every candidate subset and build the best-per-k frontier.

    Results come back in (k, lexicographic) order regardless of `jobs`.
    Subsets where no normalizer works are logged and left out.
    """
    subsets = _candidate_subsets(ds.n_channels, cfg)
    if not subsets:
        raise ConfigError(f"no candidate subsets: every whitelisted subset is larger than max_k {cfg.max_k}")
    if profiles is None:
        profiles = extract_profiles(ds, cfg.fspec, cfg.rms, jobs)
    logger.info(f"🔍 Searching {len(subsets)} subsets x up to {max(len(s) for s in subsets)} normalizers")

    _init_worker(ds, profiles, cfg)
    try:
        if jobs > 1 and len(subsets) > 1:
            with Pool(processes=jobs, initializer=_init_worker, initargs=(ds, profiles, cfg)) as pool:
                outcomes = dict(pool.imap_unordered(_evaluate_job, subsets))
        else:
            outcomes = dict(_evaluate_job(s) for s in subsets)
    finally:
        _worker.clear()

    results = []
    for subset in subsets:
        outcome = outcomes[subset]
        if isinstance(outcome, str):
            logger.warning(f"⚠️  {outcome}")
            continue
        results.append(outcome)
    if not results:
        raise NoUsableNormalizer("no subset produced an accuracy")

    frontier = build_frontier(results)
    best = frontier.global_best()
    logger.info(f"✅ Search done: best k={best.k} subset={list(best.subset)} accuracy={best.accuracy:.3f}")
    return results, frontier


def rank_channels(results: Sequence[SubsetResult], frontier: Frontier) -> list[int]:
    """
    Channel preference order: frequency in frontier subsets, then mean
    accuracy of all subsets containing the channel, then index.
    """
    channels = sorted({c for r in results for c in r.subset})
    in_frontier = Counter(c for r in frontier.best.values() for c in r.subset)
    mean_acc = {
        c: float(np.mean([r.accuracy for r in results if c in r.subset])) for c in channels
    }
    return sorted(channels, key=lambda c: (-in_frontier[c], -mean_acc[c], c))


# =============================================================================
# Cross-condition
# =============================================================================


def check_compatible(train_ds: Dataset, test_ds: Dataset):
    """Same channel count and the same classes once posture is ignored."""
    if train_ds.n_channels != test_ds.n_channels:
        raise ChannelError(
            f"channel layouts differ: {train_ds.n_channels} vs {test_ds.n_channels} channels"
        )
    train_classes = [c.without_posture().token for c in train_ds.classes]
    test_classes = [c.without_posture().token for c in test_ds.classes]
    if train_classes != test_classes:
        raise DataContractError(f"class lists differ: {train_classes} vs {test_classes}")


def cross_condition_eval(
    train_ds: Dataset,
    test_ds: Dataset,
    subset: Sequence[int],
    cfg: SearchConfig,
    normalizer: int | None = None,
    train_profiles: Sequence[PeakProfile] | None = None,
    test_profiles: Sequence[PeakProfile] | None = None,
) -> float:
    """Train on all of train_ds and score all of test_ds (no splitting)."""
    check_compatible(train_ds, test_ds)
    subset = validate_subset(subset, train_ds.n_channels)
    normalizer = subset[0] if normalizer is None else normalizer

    train = build_design_matrix(
        train_ds, subset, normalizer, cfg.fspec, cfg.rms, cfg.eps, profiles=train_profiles
    )
    test = build_design_matrix(
        test_ds, subset, normalizer, cfg.fspec, cfg.rms, cfg.eps, profiles=test_profiles
    )
    svm_seed = derive_seed(cfg.seed, "cross", *subset, normalizer)
    logger.debug(f"Seeds cross-condition subset {list(subset)} normalizer {normalizer}: svm {svm_seed}")
    svm_params = replace(cfg.svm, seed=svm_seed)
    model = train_multiclass(train.X, train.y, svm_params)
    return accuracy(model, test.X, test.y)


def cross_condition_matrix(
    datasets: Mapping[str, Dataset],
    subset: Sequence[int],
    cfg: SearchConfig,
    normalizer: int | None = None,
    jobs: int = 1,
) -> tuple[list[str], np.ndarray]:
    """Accuracy for every (train condition, test condition) pair; rows = train."""
    names = list(datasets)
    profiles = {name: extract_profiles(ds, cfg.fspec, cfg.rms, jobs) for name, ds in datasets.items()}
    matrix = np.zeros((len(names), len(names)))
    for i, train_name in enumerate(names):
        for j, test_name in enumerate(names):
            matrix[i, j] = cross_condition_eval(
                datasets[train_name],
                datasets[test_name],
                subset,
                cfg,
                normalizer,
                profiles[train_name],
                profiles[test_name],
            )
            logger.info(f"🔀 train={train_name} test={test_name} accuracy={matrix[i, j]:.3f}")
    return names, matrix


# =============================================================================
# Reports
# =============================================================================


def write_results_csv(path: str | Path, results: Sequence[SubsetResult]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["subset", "normalizer", "k", "accuracy_mean", "accuracy_sd", "repeats"])
        for r in results:
            writer.writerow(
                [r.subset_text, r.normalizer, r.k, f"{r.accuracy:.6f}", f"{r.accuracy_sd:.6f}", r.repeats]
            )
    return path


def write_frontier_csv(path: str | Path, frontier: Frontier) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["k", "best_subset", "best_normalizer", "accuracy"])
        for k, r in frontier.best.items():
            writer.writerow([k, r.subset_text, r.normalizer, f"{r.accuracy:.6f}"])
    return path


def format_summary(
    results: Sequence[SubsetResult],
    frontier: Frontier,
    placements: Sequence[str] | None = None,
    tolerance: float = 0.03,
) -> str:
    def name(c: int) -> str:
        return f"{c} ({placements[c]})" if placements and placements[c] else str(c)

    lines = [f"Evaluated {len(results)} subsets", "", "Best subset per k:"]
    for k, r in frontier.best.items():
        lines.append(
            f"  k={k}: subset [{', '.join(name(c) for c in r.subset)}] "
            f"normalizer {name(r.normalizer)} accuracy {r.accuracy:.3f} ± {r.accuracy_sd:.3f}"
        )
    best = frontier.global_best()
    k_opt = frontier.optimal_k(tolerance)
    lines += [
        "",
        f"Global best: k={best.k} accuracy {best.accuracy:.3f}",
        f"Frontier plateau: k={k_opt} is within {tolerance:.2f} of the best",
        f"Channel preference: {', '.join(name(c) for c in rank_channels(results, frontier))}",
    ]
    return "\n".join(lines) + "\n"
