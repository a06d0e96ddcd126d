"""
semg-limb-classifier command line.

    python -m src.main synth --preset fingers4 --trials 60 --out data/fingers4
    python -m src.main search data/fingers4 --out runs/fingers4
    python -m src.main train data/fingers4 --subset 1,2,3,4 --out runs/model
    python -m src.main eval data/fingers4 --model runs/model/model.json
    python -m src.main cross-eval data/p0 data/p90 data/p180 --out runs/cross

Exit codes: 0 success, 2 usage/configuration, 3 data contract, 4 numeric.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    DEFAULT_JOBS,
    DEFAULT_OUT_DIR,
    DEFAULT_SEED,
    SCHEMA_VERSION,
    configure_logging,
)
from .core import (
    ActionLabel,
    Dataset,
    SplitSpec,
    derive_seed,
    filter_classes,
    group_by_motion,
    load_dataset,
    write_dataset,
)
from .dsp import FilterSpec, RmsParams, describe, moving_rms, preprocess
from .errors import ConfigError, DataContractError, DimensionMismatch, SemgError
from .features import build_design_matrix, extract_peaks, write_feature_csv
from .search import (
    SearchConfig,
    cross_condition_matrix,
    derived_seeds,
    format_summary,
    search_all,
    write_frontier_csv,
    write_results_csv,
)
from .svm import (
    KernelSpec,
    SvmParams,
    accuracy,
    confusion_matrix,
    describe_model,
    load_model,
    save_model,
    train_multiclass,
)
from .synth import SynthConfig, iter_trials, list_presets, load_preset, load_profile_file, trial_seed

logger = logging.getLogger(__name__)

# Settings that never change results; kept out of run.json
_VOLATILE_ARGS = {"jobs", "log_level", "log_file", "handler"}

# =============================================================================
# Argument types
# =============================================================================


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def channel_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated channel indices, got {text!r}") from None


def subset_list(text: str) -> tuple[tuple[int, ...], ...]:
    """`0,1;2,3` -> ((0, 1), (2, 3))"""
    return tuple(channel_list(group) for group in text.split(";") if group.strip())


def label_list(text: str) -> tuple[str, ...]:
    return tuple(token.strip() for token in text.split(",") if token.strip())


# =============================================================================
# Parser
# =============================================================================


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("global options")
    group.add_argument("--seed", type=int, default=DEFAULT_SEED, help="master seed (default: %(default)s)")
    group.add_argument("--jobs", type=positive_int, default=DEFAULT_JOBS, help="worker processes")
    group.add_argument("--out", type=Path, default=DEFAULT_OUT_DIR, help="output directory")
    group.add_argument("--log-level", default=None, help="logging level (default: LOG_LEVEL or INFO)")
    group.add_argument("--log-file", type=Path, default=None, help="also write logs to this file")
    return common


def _add_filter_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("filtering")
    g.add_argument("--notch-hz", type=float, default=50.0)
    g.add_argument("--notch-q", type=float, default=35.0)
    g.add_argument("--no-notch", action="store_true", help="disable the mains notch")
    g.add_argument("--band-lo", type=float, default=30.0)
    g.add_argument("--band-hi", type=float, default=300.0)
    g.add_argument("--order", type=int, default=4)
    g.add_argument("--zero-phase", action="store_true", help="forward-backward filtering")
    g.add_argument("--decimate-to", type=float, default=None, help="post-filter rate in Hz")
    g.add_argument("--rms-window", type=float, default=0.020, help="seconds")
    g.add_argument("--rms-hop", type=float, default=0.005, help="seconds")


def _add_selection_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("class selection")
    g.add_argument("--classes", type=label_list, default=None, help="comma-separated label tokens")
    g.add_argument("--group-motion", action="store_true", help="relabel by motion category")


def _add_svm_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("classifier")
    g.add_argument("--c", type=float, default=1.0, help="soft-margin C")
    g.add_argument("--kernel", choices=("rbf", "linear"), default="rbf")
    g.add_argument("--gamma", type=float, default=None, help="rbf gamma (default: 1 / (d * var))")
    g.add_argument("--tol", type=float, default=1e-3)
    g.add_argument("--max-passes", type=positive_int, default=10)
    g.add_argument("--max-iter", type=positive_int, default=10000)
    g.add_argument("--standardize", action="store_true", help="z-score features on the training set")
    g.add_argument("--eps", type=float, default=1e-9, help="smallest usable normalizer peak (V)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m src.main",
        description="Surface-EMG limb action characterization",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--preset", help=f"bundled preset ({', '.join(list_presets())})")
    source.add_argument("--profile", type=Path, help="profile JSON file")
    p.add_argument("--trials", type=positive_int, default=60, help="trials per class")
    p.add_argument("--posture", type=int, choices=(0, 90, 180), default=None)
    p.add_argument("--carrier", choices=("noise", "tone"), default=None)
    p.add_argument("--mains-amp", type=float, default=None, help="mains amplitude in volts")
    p.add_argument("--duration", type=float, default=None, help="trial length in seconds")
    p.add_argument("--gzip", action="store_true", help="write .csv.gz trial files")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="dump filtered RMS envelopes for one trial")
    p.add_argument("dataset", type=Path)
    p.add_argument("--trial", default=None, help="trial id (default: first)")
    _add_filter_args(p)
    p.set_defaults(handler=cmd_preprocess)

    p = sub.add_parser("features", parents=[common], help="export a feature matrix")
    p.add_argument("dataset", type=Path)
    p.add_argument("--subset", type=channel_list, default=None, help="channels (default: all)")
    p.add_argument("--normalizer", type=int, default=None, help="default: first subset channel")
    p.add_argument("--eps", type=float, default=1e-9)
    _add_filter_args(p)
    _add_selection_args(p)
    p.set_defaults(handler=cmd_features)

    p = sub.add_parser("train", parents=[common], help="train a model on a whole dataset")
    p.add_argument("dataset", type=Path)
    p.add_argument("--subset", type=channel_list, default=None, help="channels (default: all)")
    p.add_argument("--normalizer", type=int, default=None, help="default: first subset channel")
    p.add_argument("--strict", action="store_true", help="non-convergence is an error (exit 4)")
    _add_filter_args(p)
    _add_selection_args(p)
    _add_svm_args(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a saved model on a dataset")
    p.add_argument("dataset", type=Path)
    p.add_argument("--model", type=Path, required=True)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("search", parents=[common], help="exhaustive channel-subset search")
    p.add_argument("dataset", type=Path)
    p.add_argument("--max-k", type=positive_int, default=None)
    p.add_argument("--repeats", type=positive_int, default=5)
    p.add_argument("--subsets", type=subset_list, default=None, help="whitelist, e.g. '0,1;2,3'")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--no-stratify", action="store_true")
    _add_filter_args(p)
    _add_selection_args(p)
    _add_svm_args(p)
    p.set_defaults(handler=cmd_search)

    p = sub.add_parser("cross-eval", parents=[common], help="train-condition x test-condition accuracy")
    p.add_argument("datasets", type=Path, nargs="+")
    p.add_argument("--names", type=label_list, default=None, help="condition names (default: dir names)")
    p.add_argument("--subset", type=channel_list, default=None, help="channels (default: all)")
    p.add_argument("--normalizer", type=int, default=None, help="default: first subset channel")
    _add_filter_args(p)
    _add_selection_args(p)
    _add_svm_args(p)
    p.set_defaults(handler=cmd_cross_eval)

    return parser


# =============================================================================
# Helpers
# =============================================================================


def filter_spec_from_args(args, sample_rate_hz: float) -> FilterSpec:
    return FilterSpec(
        sample_rate_hz=sample_rate_hz,
        notch_hz=args.notch_hz,
        notch_q=args.notch_q,
        band_lo_hz=args.band_lo,
        band_hi_hz=args.band_hi,
        order=args.order,
        notch_enabled=not args.no_notch,
        zero_phase=args.zero_phase,
        decimate_to_hz=args.decimate_to,
    )


def rms_from_args(args) -> RmsParams:
    return RmsParams(window_s=args.rms_window, hop_s=args.rms_hop)


def svm_from_args(args) -> SvmParams:
    return SvmParams(
        c=args.c,
        kernel=KernelSpec(kind=args.kernel, gamma=args.gamma if args.kernel == "rbf" else None),
        tol=args.tol,
        max_passes=args.max_passes,
        max_iter=args.max_iter,
        seed=args.seed,
        standardize=args.standardize,
    )


def open_dataset(path: Path, args) -> Dataset:
    ds = load_dataset(path, lazy=True)
    if getattr(args, "classes", None):
        ds = filter_classes(ds, args.classes)
    if getattr(args, "group_motion", False):
        ds = group_by_motion(ds)
    return ds


def resolve_subset(args, ds: Dataset) -> tuple[tuple[int, ...], int | None]:
    subset = tuple(args.subset) if args.subset else tuple(range(ds.n_channels))
    normalizer = args.normalizer
    if normalizer is None and len(subset) > 1:
        normalizer = subset[0]
    return subset, normalizer


def sample_rate(ds: Dataset) -> float:
    rates = {t.sample_rate_hz for t in ds.trials}
    if len(rates) != 1:
        raise DataContractError(f"trials use mixed sample rates: {sorted(rates)}")
    return rates.pop()


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return value


def write_run_record(out_dir: Path, command: str, args, seeds: dict | None = None, extra: dict | None = None):
    """run.json: command, seeds and effective settings. No timestamps."""
    out_dir.mkdir(parents=True, exist_ok=True)
    settings = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in _VOLATILE_ARGS}
    record = {
        "schemaVersion": SCHEMA_VERSION,
        "documentType": "run-record",
        "version": __version__,
        "command": command,
        "seed": args.seed,
        "settings": settings,
        "derivedSeeds": seeds or {},
    }
    if extra:
        record.update(extra)
    with open(out_dir / "run.json", "w") as f:
        json.dump(record, f, indent=2)
        f.write("\n")


# =============================================================================
# Commands
# =============================================================================


def cmd_synth(args) -> int:
    preset = load_preset(args.preset) if args.preset else load_profile_file(args.profile)
    overrides = {"seed": args.seed}
    if args.carrier:
        overrides["carrier"] = args.carrier
    if args.mains_amp is not None:
        overrides["mains_amp"] = args.mains_amp
    if args.duration is not None:
        overrides["duration_s"] = args.duration
    cfg = SynthConfig.from_dict({**preset.config.to_dict(), **overrides})
    profile = preset.at_posture(args.posture)

    logger.info(f"🧪 Synthesizing preset {preset.name!r} into {args.out}")
    write_dataset(args.out, profile.channels, iter_trials(cfg, profile, args.trials, args.seed), compress=args.gzip)

    seeds = {
        f"c{c:02d}-r{r:03d}": trial_seed(args.seed, c, r)
        for c in range(profile.n_classes)
        for r in range(args.trials)
    }
    write_run_record(args.out, "synth", args, seeds, {"synthConfig": cfg.to_dict()})
    print(
        f"synth: {profile.n_classes * args.trials} trials, {profile.n_classes} classes, "
        f"{len(profile.channels)} channels, seed {args.seed} -> {args.out}"
    )
    return 0


def cmd_preprocess(args) -> int:
    ds = load_dataset(args.dataset, lazy=True)
    trials = {t.trial_id: t for t in ds.trials}
    trial = trials.get(args.trial) if args.trial else ds.trials[0]
    if trial is None:
        raise DataContractError(f"trial {args.trial!r} not in dataset")

    fspec = filter_spec_from_args(args, trial.sample_rate_hz)
    rms = rms_from_args(args)
    filtered = preprocess(trial.load_samples(), fspec)
    series = moving_rms(filtered, fspec.output_rate_hz, rms)
    profile = extract_peaks(trial, fspec, rms)

    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"{trial.trial_id}-rms.csv"
    table = np.column_stack([series.times(), series.values.T])
    header = ",".join(["t"] + [f"ch{i}" for i in range(series.values.shape[0])])
    np.savetxt(path, table, fmt="%.10g", delimiter=",", header=header, comments="")
    write_run_record(args.out, "preprocess", args)

    print(describe(fspec))
    print(f"trial {trial.trial_id} ({trial.label}): {series.values.shape[1]} RMS windows -> {path}")
    for ch, (peak, base) in enumerate(zip(profile.peaks, profile.baselines)):
        print(f"  ch{ch}: peak {peak * 1e6:.2f} uV above baseline {base * 1e6:.2f} uV")
    return 0


def cmd_features(args) -> int:
    ds = open_dataset(args.dataset, args)
    subset, normalizer = resolve_subset(args, ds)
    design = build_design_matrix(
        ds, subset, normalizer, filter_spec_from_args(args, sample_rate(ds)), rms_from_args(args),
        eps=args.eps, jobs=args.jobs,
    )
    path = write_feature_csv(args.out / "features.csv", design, ds.classes)
    write_run_record(args.out, "features", args)
    print(f"features: {len(design.trial_ids)} rows x {design.X.shape[1]} columns ({design.dropped} dropped) -> {path}")
    return 0


def cmd_train(args) -> int:
    ds = open_dataset(args.dataset, args)
    subset, normalizer = resolve_subset(args, ds)
    fspec = filter_spec_from_args(args, sample_rate(ds))
    rms = rms_from_args(args)
    design = build_design_matrix(ds, subset, normalizer, fspec, rms, eps=args.eps, jobs=args.jobs)

    logger.info(f"🧠 Training on {len(design.y)} rows, subset {list(subset)}, normalizer {normalizer}")
    params = svm_from_args(args)
    model = train_multiclass(design.X, design.y, params, n_classes=len(ds.classes), strict=args.strict)

    context = {
        "subset": list(subset),
        "normalizer": normalizer,
        "n_channels": ds.n_channels,
        "classes": [c.token for c in ds.classes],
        "group_motion": args.group_motion,
        "filter": fspec.to_dict(),
        "rms": rms.to_dict(),
        "eps": args.eps,
    }
    path = save_model(args.out / "model.json", model, context)
    write_run_record(args.out, "train", args)

    class_names = [c.token for c in ds.classes]
    print(describe_model(model, class_names))
    print(f"training accuracy {accuracy(model, design.X, design.y):.4f} -> {path}")
    return 0


def _align_classes(ds: Dataset, model_classes: list[str]) -> np.ndarray:
    """Map dataset class indices onto model class indices (posture ignored on mismatch)."""
    lookup = {token: i for i, token in enumerate(model_classes)}
    stripped = {ActionLabel.parse(t).without_posture().token: i for i, t in enumerate(model_classes)}
    mapping = []
    for label in ds.classes:
        if label.token in lookup:
            mapping.append(lookup[label.token])
        elif label.without_posture().token in stripped:
            mapping.append(stripped[label.without_posture().token])
        else:
            raise DataContractError(f"class {label.token} is not known to the model")
    return np.array(mapping, dtype=int)


def cmd_eval(args) -> int:
    model, context = load_model(args.model)
    ds = load_dataset(args.dataset, lazy=True)
    if ds.n_channels != context.get("n_channels"):
        raise DimensionMismatch(
            f"model expects {context.get('n_channels')} channels, dataset has {ds.n_channels}"
        )
    if context.get("group_motion"):
        ds = group_by_motion(ds)
    model_classes = context["classes"]

    fspec = replace(FilterSpec(**context["filter"]), sample_rate_hz=sample_rate(ds))
    design = build_design_matrix(
        ds, context["subset"], context["normalizer"], fspec, RmsParams(**context["rms"]),
        eps=context.get("eps", 1e-9), jobs=args.jobs,
    )
    y = _align_classes(ds, model_classes)[design.y]

    acc = accuracy(model, design.X, y)
    counts = confusion_matrix(model, design.X, y, n_classes=len(model_classes))
    write_run_record(args.out, "eval", args, extra={"accuracy": acc, "confusion": counts.tolist()})

    print(f"accuracy {acc:.4f} on {len(y)} trials ({design.dropped} dropped)")
    print("confusion (rows = true, columns = predicted):")
    for token, row in zip(model_classes, counts):
        print(f"  {token:<40} {' '.join(f'{v:4d}' for v in row)}")
    return 0


def search_config_from_args(args, ds: Dataset) -> SearchConfig:
    return SearchConfig(
        max_k=args.max_k,
        split=SplitSpec(train_fraction=args.train_fraction, seed=args.seed, stratified=not args.no_stratify),
        svm=svm_from_args(args),
        fspec=filter_spec_from_args(args, sample_rate(ds)),
        rms=rms_from_args(args),
        repeats=args.repeats,
        eps=args.eps,
        subsets=args.subsets,
    )


def cmd_search(args) -> int:
    ds = open_dataset(args.dataset, args)
    if args.max_k is not None and args.max_k > ds.n_channels:
        raise ConfigError(f"--max-k {args.max_k} exceeds the {ds.n_channels} channels in the dataset")
    cfg = search_config_from_args(args, ds)
    results, frontier = search_all(ds, cfg, jobs=args.jobs)

    args.out.mkdir(parents=True, exist_ok=True)
    write_results_csv(args.out / "results.csv", results)
    write_frontier_csv(args.out / "frontier.csv", frontier)
    summary = format_summary(results, frontier, [c.placement for c in ds.channels])
    (args.out / "summary.txt").write_text(summary, encoding="utf-8")
    write_run_record(
        args.out,
        "search",
        args,
        derived_seeds(results, cfg),
        {"classes": [c.token for c in ds.classes]},
    )
    print(summary, end="")
    return 0


def cmd_cross_eval(args) -> int:
    names = list(args.names) if args.names else [p.name for p in args.datasets]
    if len(names) != len(args.datasets):
        raise ConfigError(f"{len(names)} names for {len(args.datasets)} datasets")
    if len(set(names)) != len(names):
        raise ConfigError(f"condition names must be unique: {names}")

    datasets = {name: open_dataset(path, args) for name, path in zip(names, args.datasets)}
    first = next(iter(datasets.values()))
    subset, normalizer = resolve_subset(args, first)
    cfg = SearchConfig(
        split=SplitSpec(seed=args.seed),
        svm=svm_from_args(args),
        fspec=filter_spec_from_args(args, sample_rate(first)),
        rms=rms_from_args(args),
        eps=args.eps,
    )
    names, matrix = cross_condition_matrix(datasets, subset, cfg, normalizer, jobs=args.jobs)

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "cross.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["train", *names])
        for name, row in zip(names, matrix):
            writer.writerow([name, *[f"{v:.6f}" for v in row]])
    write_run_record(
        args.out,
        "cross-eval",
        args,
        {"svm": derive_seed(args.seed, "cross", *subset, subset[0] if normalizer is None else normalizer)},
    )

    width = max(len(n) for n in names)
    corner = "train \\ test"
    print(f"{corner:<{width + 2}}" + "".join(f"{n:>{width + 2}}" for n in names))
    for name, row in zip(names, matrix):
        print(f"{name:<{width + 2}}" + "".join(f"{v:>{width + 2}.3f}" for v in row))
    return 0


# =============================================================================
# Main
# =============================================================================


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        configure_logging(args.log_level, args.log_file)
        return args.handler(args)
    except SemgError as e:
        logger.error(f"❌ {args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
