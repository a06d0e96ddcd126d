"""
Domain data model and dataset handling.

- Action labels, channels, trial records and datasets
- Dataset directory ingestion (manifest.json + per-trial CSV) and writing
- Deterministic stratified splitting and channel selection
"""

from __future__ import annotations

import gzip
import hashlib
import json
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .config import SCHEMA_VERSION
from .errors import ChannelError, ConfigError, DatasetError, SplitError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
CSV_FORMAT = "%.10g"  # >= 9 significant digits

# =============================================================================
# Labels
# =============================================================================


class Limb(str, Enum):
    UPPER = "upper"
    LOWER = "lower"


class Joint(str, Enum):
    FINGER = "finger"
    WRIST = "wrist"
    ELBOW = "elbow"
    SHOULDER = "shoulder"
    KNEE = "knee"
    ANKLE = "ankle"


class Action(str, Enum):
    FLEXION = "flexion"
    EXTENSION = "extension"
    ABDUCTION = "abduction"
    ADDUCTION = "adduction"
    SUPINATION = "supination"
    PRONATION = "pronation"
    INVERSION = "inversion"
    EVERSION = "eversion"
    RELAX = "relax"


class Digit(str, Enum):
    THUMB = "thumb"
    INDEX = "index"
    MIDDLE = "middle"
    RING = "ring"
    LITTLE = "little"


POSTURES_DEG = (0, 90, 180)
FOREARM_JOINTS = (Joint.FINGER, Joint.WRIST)

# Motion categories: linear, lateral and rotational/angular actions share
# one representative action when trials are grouped by motion.
MOTION_GROUPS = {
    Action.FLEXION: ("linear", Action.FLEXION),
    Action.EXTENSION: ("linear", Action.FLEXION),
    Action.ABDUCTION: ("lateral", Action.ABDUCTION),
    Action.ADDUCTION: ("lateral", Action.ABDUCTION),
    Action.SUPINATION: ("rotational", Action.SUPINATION),
    Action.PRONATION: ("rotational", Action.SUPINATION),
    Action.INVERSION: ("rotational", Action.INVERSION),
    Action.EVERSION: ("rotational", Action.INVERSION),
    Action.RELAX: ("relax", Action.RELAX),
}


def _enum(cls, value, field_name: str, trial_id: str | None = None):
    if isinstance(value, cls):
        return value
    try:
        return cls(value)
    except ValueError:
        raise DatasetError(f"unknown {cls.__name__} token {value!r}", trial_id, field_name) from None


@dataclass(frozen=True)
class ActionLabel:
    """One limb action class, e.g. index finger flexion at 90° forearm posture."""

    limb: Limb
    joint: Joint
    action: Action
    digit: Digit | None = None
    posture_deg: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "limb", _enum(Limb, self.limb, "limb"))
        object.__setattr__(self, "joint", _enum(Joint, self.joint, "joint"))
        object.__setattr__(self, "action", _enum(Action, self.action, "action"))
        if self.digit is not None:
            object.__setattr__(self, "digit", _enum(Digit, self.digit, "digit"))
            if self.joint is not Joint.FINGER:
                raise DatasetError(f"digit given for joint {self.joint.value}", field="digit")
        if self.posture_deg is not None:
            try:
                posture = int(self.posture_deg)
            except (TypeError, ValueError):
                raise DatasetError(
                    f"posture must be an integer angle, got {self.posture_deg!r}", field="posture_deg"
                ) from None
            if posture not in POSTURES_DEG:
                raise DatasetError(f"posture must be one of {POSTURES_DEG}", field="posture_deg")
            if self.joint not in FOREARM_JOINTS:
                raise DatasetError(
                    f"posture only applies to forearm experiments, not {self.joint.value}",
                    field="posture_deg",
                )
            object.__setattr__(self, "posture_deg", posture)
        if self.action in (Action.INVERSION, Action.EVERSION) and self.joint is not Joint.ANKLE:
            raise DatasetError(f"{self.action.value} only applies to the ankle", field="action")

    @property
    def sort_key(self) -> tuple:
        return (
            self.limb.value,
            self.joint.value,
            self.action.value,
            self.digit.value if self.digit else "",
            -1 if self.posture_deg is None else self.posture_deg,
        )

    @property
    def token(self) -> str:
        """Text form `limb/joint/action/digit/posture`, `-` for absent fields."""
        digit = self.digit.value if self.digit else "-"
        posture = "-" if self.posture_deg is None else str(self.posture_deg)
        return f"{self.limb.value}/{self.joint.value}/{self.action.value}/{digit}/{posture}"

    @classmethod
    def parse(cls, token: str) -> ActionLabel:
        parts = token.strip().split("/")
        if len(parts) != 5:
            raise DatasetError(f"label token {token!r} must have 5 '/'-separated fields", field="label")
        limb, joint, action, digit, posture = parts
        return cls(
            limb=limb,
            joint=joint,
            action=action,
            digit=None if digit == "-" else digit,
            posture_deg=None if posture == "-" else int(posture),
        )

    @classmethod
    def from_mapping(cls, data: dict, trial_id: str | None = None) -> ActionLabel:
        try:
            return cls(
                limb=_enum(Limb, data.get("limb"), "limb", trial_id),
                joint=_enum(Joint, data.get("joint"), "joint", trial_id),
                action=_enum(Action, data.get("action"), "action", trial_id),
                digit=None if data.get("digit") is None else _enum(Digit, data["digit"], "digit", trial_id),
                posture_deg=data.get("posture_deg"),
            )
        except DatasetError as e:
            if e.trial_id is None and trial_id is not None:
                raise DatasetError(e.detail, trial_id, e.field) from None
            raise

    def to_mapping(self) -> dict:
        return {
            "limb": self.limb.value,
            "joint": self.joint.value,
            "action": self.action.value,
            "digit": self.digit.value if self.digit else None,
            "posture_deg": self.posture_deg,
        }

    @property
    def motion(self) -> str:
        return MOTION_GROUPS[self.action][0]

    def without_posture(self) -> ActionLabel:
        return replace(self, posture_deg=None)

    def grouped_by_motion(self) -> ActionLabel:
        return replace(self, action=MOTION_GROUPS[self.action][1])

    def __str__(self):
        return self.token


def canonical_classes(labels: Iterable[ActionLabel]) -> tuple[ActionLabel, ...]:
    """Distinct labels in canonical (lexicographic field) order."""
    return tuple(sorted(set(labels), key=lambda label: label.sort_key))


# =============================================================================
# Channels, trials, datasets
# =============================================================================


@dataclass(frozen=True)
class ChannelId:
    index: int
    placement: str | None = None


@dataclass(frozen=True)
class TrialSource:
    """On-disk trial CSV, read on demand. `rows` selects channels after reading."""

    path: Path
    n_columns: int
    n_samples: int
    rows: tuple[int, ...] | None = None

    def read(self, trial_id: str) -> np.ndarray:
        try:
            table = np.loadtxt(self.path, delimiter=",", skiprows=1, ndmin=2)
        except (OSError, ValueError) as e:
            raise DatasetError(f"cannot read {self.path.name}: {e}", trial_id, "samples") from None
        if table.shape[1] != self.n_columns + 1:
            raise DatasetError(
                f"expected {self.n_columns} channels, found {table.shape[1] - 1}", trial_id, "samples"
            )
        if table.shape[0] != self.n_samples:
            raise DatasetError(
                f"expected {self.n_samples} samples, found {table.shape[0]}", trial_id, "samples"
            )
        samples = table[:, 1:].T
        if self.rows is not None:
            samples = samples[list(self.rows)]
        return np.ascontiguousarray(samples)


@dataclass(frozen=True, eq=False)
class TrialRecord:
    """
    One labeled multi-channel recording.

    `samples` is a read-only (channels x T) array in volts. Lazy trials keep
    `samples=None` and a `source` (a TrialSource file, or any object with
    `read(trial_id)`, `rows` and `n_columns`); use `load_samples()` to get
    the array either way.
    """

    trial_id: str
    subject_id: str
    label: ActionLabel
    samples: np.ndarray | None = field(default=None, repr=False)
    sample_rate_hz: float = 20000.0
    relaxation_s: float = 5.0
    duration_s: float = 15.0
    source: TrialSource | None = field(default=None, repr=False)
    n_channels: int = 0

    def __post_init__(self):
        if not self.trial_id:
            raise DatasetError("trial id is empty", field="trial_id")
        if not (self.sample_rate_hz > 0 and math.isfinite(self.sample_rate_hz)):
            raise DatasetError("sample rate must be positive", self.trial_id, "sample_rate_hz")
        if not self.duration_s > 0:
            raise DatasetError("duration must be positive", self.trial_id, "duration_s")
        if not self.relaxation_s >= 0:
            raise DatasetError("relaxation must be non-negative", self.trial_id, "relaxation_s")

        if self.samples is None:
            if self.source is None:
                raise DatasetError("trial has neither samples nor a source file", self.trial_id)
            n_channels = len(self.source.rows) if self.source.rows is not None else self.source.n_columns
            object.__setattr__(self, "n_channels", n_channels)
            return

        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise DatasetError("samples must be a (channels x T) matrix", self.trial_id, "samples")
        if samples.shape[1] != self.n_samples:
            raise DatasetError(
                f"expected {self.n_samples} samples, found {samples.shape[1]}", self.trial_id, "samples"
            )
        if not np.all(np.isfinite(samples)):
            raise DatasetError("non-finite sample values", self.trial_id, "samples")
        samples = samples.view()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "n_channels", samples.shape[0])

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    def load_samples(self) -> np.ndarray:
        """Samples as a (channels x T) array, reading the source file if needed."""
        if self.samples is not None:
            return self.samples
        samples = self.source.read(self.trial_id)
        if not np.all(np.isfinite(samples)):
            raise DatasetError("non-finite sample values", self.trial_id, "samples")
        samples.flags.writeable = False
        return samples

    def with_rows(self, rows: Sequence[int]) -> TrialRecord:
        rows = tuple(rows)
        if self.samples is not None:
            return replace(self, samples=self.samples[list(rows)], n_channels=0)
        base_rows = self.source.rows or tuple(range(self.source.n_columns))
        source = replace(self.source, rows=tuple(base_rows[r] for r in rows))
        return replace(self, source=source, n_channels=0)


@dataclass(frozen=True, eq=False)
class Dataset:
    channels: tuple[ChannelId, ...]
    trials: tuple[TrialRecord, ...]
    classes: tuple[ActionLabel, ...]

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "trials", tuple(self.trials))
        object.__setattr__(self, "classes", tuple(self.classes))

        if not self.channels:
            raise DatasetError("dataset has no channels", field="channels")
        indices = [c.index for c in self.channels]
        if len(set(indices)) != len(indices):
            raise DatasetError("duplicate channel index", field="channels")
        placements = [c.placement for c in self.channels if c.placement]
        if len(set(placements)) != len(placements):
            raise DatasetError("duplicate channel placement tag", field="channels")
        if list(self.classes) != list(canonical_classes(self.classes)):
            raise DatasetError("class list is not in canonical order", field="classes")

        seen = set()
        class_set = set(self.classes)
        for trial in self.trials:
            if trial.trial_id in seen:
                raise DatasetError("duplicate trial id", trial.trial_id, "trial_id")
            seen.add(trial.trial_id)
            if trial.n_channels != len(self.channels):
                raise DatasetError(
                    f"expected {len(self.channels)} channels, found {trial.n_channels}",
                    trial.trial_id,
                    "samples",
                )
            if trial.label not in class_set:
                raise DatasetError(f"label {trial.label} not in class list", trial.trial_id, "label")

    @classmethod
    def from_trials(cls, channels: Sequence[ChannelId], trials: Sequence[TrialRecord]) -> Dataset:
        return cls(tuple(channels), tuple(trials), canonical_classes(t.label for t in trials))

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def class_indices(self) -> np.ndarray:
        """Class index of every trial, aligned with `trials`."""
        lookup = {label: i for i, label in enumerate(self.classes)}
        return np.array([lookup[t.label] for t in self.trials], dtype=int)

    def trial_ids(self) -> list[str]:
        return [t.trial_id for t in self.trials]

    def subset_trials(self, indices: Iterable[int]) -> Dataset:
        """Dataset with the given trials, keeping the full class list."""
        return Dataset(self.channels, tuple(self.trials[i] for i in indices), self.classes)


# =============================================================================
# Seeds
# =============================================================================

SEED_MASK = (1 << 64) - 1


def _seed_word(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & SEED_MASK
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(seed: int, *tags) -> int:
    """Unsigned 64-bit seed derived from a master seed and any tags."""
    sequence = np.random.SeedSequence([_seed_word(seed)] + [_seed_word(t) for t in tags])
    return int(sequence.generate_state(1, np.uint64)[0])


# =============================================================================
# Ingestion
# =============================================================================


def _read_header(path: Path) -> list[str]:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8") as f:
        return f.readline().strip().split(",")


def _parse_channel(position: int, entry) -> ChannelId:
    if not isinstance(entry, dict) or "index" not in entry:
        raise DatasetError(f"channel entry {position} has no index", field="channels")
    index = entry["index"]
    if isinstance(index, bool) or not isinstance(index, int) or index < 0:
        raise DatasetError(f"channel entry {position} has invalid index {index!r}", field="channels")
    placement = entry.get("placement")
    if placement is not None and not isinstance(placement, str):
        raise DatasetError(f"channel entry {position} has invalid placement {placement!r}", field="channels")
    return ChannelId(index=index, placement=placement)


def load_dataset(path: str | Path, lazy: bool = False) -> Dataset:
    """
    Load and validate a dataset directory.

    Column chN of every trial file is the Nth manifest channel; the manifest
    index is the electrode number and need not be contiguous.

    With `lazy=True` only the manifest and file headers are checked here;
    samples are read (and checked for finiteness) when a trial is used.
    """
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DatasetError(f"no manifest found in {root}")

    try:
        with open(manifest_path, "r") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetError(f"manifest is not valid JSON: {e}") from None
    if not isinstance(manifest, dict):
        raise DatasetError("manifest must be a JSON object")

    raw_channels = manifest.get("channels")
    if not isinstance(raw_channels, list) or not raw_channels:
        raise DatasetError("manifest has no channels", field="channels")
    channels = tuple(_parse_channel(position, c) for position, c in enumerate(raw_channels))
    if len({c.index for c in channels}) != len(channels):
        raise DatasetError("duplicate channel index", field="channels")
    n_channels = len(channels)
    expected_header = ["t"] + [f"ch{i}" for i in range(n_channels)]

    raw_trials = manifest.get("trials")
    if not isinstance(raw_trials, list) or not raw_trials:
        raise DatasetError("manifest has no trials", field="trials")

    logger.info(f"📂 Loading {len(raw_trials)} trials x {n_channels} channels from {root}")

    trials = []
    seen = set()
    for position, entry in enumerate(raw_trials):
        if not isinstance(entry, dict):
            raise DatasetError(f"trial entry {position} is not an object", field="trials")
        trial_id = entry.get("trial_id")
        if not trial_id:
            raise DatasetError("missing trial id", field="trial_id")
        if trial_id in seen:
            raise DatasetError("duplicate trial id", trial_id, "trial_id")
        seen.add(trial_id)

        file_name = entry.get("file")
        if not file_name:
            raise DatasetError("missing trial file", trial_id, "file")
        file_path = root / file_name
        if not file_path.is_file():
            raise DatasetError(f"trial file {file_name} not found", trial_id, "file")

        header = _read_header(file_path)
        if header[:1] != ["t"] or len(header) - 1 != n_channels or header != expected_header:
            raise DatasetError(
                f"expected {n_channels} channels, found {len(header) - 1} (header {','.join(header)})",
                trial_id,
                "samples",
            )

        label = ActionLabel.from_mapping(entry, trial_id)
        try:
            sample_rate_hz = float(entry.get("sample_rate_hz", 20000.0))
            relaxation_s = float(entry.get("relaxation_s", 5.0))
            duration_s = float(entry.get("duration_s", 15.0))
        except (TypeError, ValueError) as e:
            raise DatasetError(f"bad timing value: {e}", trial_id) from None

        n_samples = int(round(duration_s * sample_rate_hz))
        source = TrialSource(path=file_path, n_columns=n_channels, n_samples=n_samples)
        common = dict(
            trial_id=trial_id,
            subject_id=str(entry.get("subject_id", "")),
            label=label,
            sample_rate_hz=sample_rate_hz,
            relaxation_s=relaxation_s,
            duration_s=duration_s,
        )
        if lazy:
            trials.append(TrialRecord(source=source, **common))
        else:
            trials.append(TrialRecord(samples=source.read(trial_id), **common))

    ds = Dataset.from_trials(channels, trials)
    logger.info(f"✅ Loaded dataset: {len(ds.trials)} trials, {len(ds.classes)} classes")
    return ds


# =============================================================================
# Writing
# =============================================================================


def _write_trial_csv(path: Path, trial: TrialRecord, compress: bool):
    samples = trial.load_samples()
    t = np.arange(samples.shape[1]) / trial.sample_rate_hz
    table = np.column_stack([t, samples.T])
    header = ",".join(["t"] + [f"ch{i}" for i in range(samples.shape[0])])
    if compress:
        # mtime=0 keeps the gzip bytes reproducible
        with open(path, "wb") as raw, gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as gz:
            np.savetxt(gz, table, fmt=CSV_FORMAT, delimiter=",", header=header, comments="")
    else:
        np.savetxt(path, table, fmt=CSV_FORMAT, delimiter=",", header=header, comments="")


def write_dataset(
    path: str | Path,
    channels: Sequence[ChannelId],
    trials: Iterable[TrialRecord],
    compress: bool = False,
) -> Path:
    """
    Write a dataset directory: manifest.json plus one CSV per trial.

    `trials` may be a generator; each trial is written and released before
    the next one is produced.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    suffix = ".csv.gz" if compress else ".csv"

    entries = []
    for trial in trials:
        if trial.n_channels != len(channels):
            raise DatasetError(
                f"expected {len(channels)} channels, found {trial.n_channels}", trial.trial_id, "samples"
            )
        file_name = f"{trial.trial_id}{suffix}"
        _write_trial_csv(root / file_name, trial, compress)
        entries.append(
            {
                "trial_id": trial.trial_id,
                "subject_id": trial.subject_id,
                "file": file_name,
                **trial.label.to_mapping(),
                "sample_rate_hz": trial.sample_rate_hz,
                "relaxation_s": trial.relaxation_s,
                "duration_s": trial.duration_s,
            }
        )
        logger.debug(f"💾 Wrote {file_name}")

    manifest = {
        "schemaVersion": SCHEMA_VERSION,
        "documentType": "dataset-manifest",
        "channels": [{"index": c.index, "placement": c.placement} for c in channels],
        "trials": entries,
    }
    with open(root / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")

    logger.info(f"💾 Wrote {len(entries)} trials to {root}")
    return root


# =============================================================================
# Splitting and selection
# =============================================================================


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(
                f"train_fraction must be in (0, 1), got {self.train_fraction} (test side would be empty)"
            )
        if not 0 <= int(self.seed) <= SEED_MASK:
            raise ConfigError("seed must be an unsigned 64-bit integer")


def stratified_partition(
    y: Sequence[int],
    train_fraction: float,
    seed: int,
    stratified: bool = True,
    class_names: Sequence[str] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Seeded partition of row indices into (train, test), both ascending.

    Stratified: each class puts floor(fraction * count) rows in train and the
    rest in test. Every class needs at least 2 rows.
    """
    y = np.asarray(y, dtype=int)
    rng = np.random.default_rng(derive_seed(seed, "split"))
    train = []

    if stratified:
        for cls in np.unique(y):
            members = np.flatnonzero(y == cls)
            if len(members) < 2:
                name = class_names[cls] if class_names is not None else f"class {cls}"
                raise SplitError(f"{name} has {len(members)} trial(s); at least 2 are needed")
            n_train = math.floor(train_fraction * len(members))
            train.extend(rng.permutation(members)[:n_train])
    else:
        if len(y) < 2:
            raise SplitError("at least 2 trials are needed")
        n_train = math.floor(train_fraction * len(y))
        train.extend(rng.permutation(len(y))[:n_train])

    train_idx = np.sort(np.asarray(train, dtype=int))
    test_idx = np.setdiff1d(np.arange(len(y)), train_idx)
    return train_idx, test_idx


def split_dataset(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Seeded 80/20-style split; trial order is preserved on both sides."""
    class_names = [c.token for c in ds.classes]
    train_idx, test_idx = stratified_partition(
        ds.class_indices(), spec.train_fraction, spec.seed, spec.stratified, class_names
    )
    return ds.subset_trials(train_idx), ds.subset_trials(test_idx)


def validate_subset(subset: Sequence[int], n_channels: int) -> tuple[int, ...]:
    subset = tuple(int(i) for i in subset)
    if not subset:
        raise ChannelError("channel subset is empty")
    for i in subset:
        if not 0 <= i < n_channels:
            raise ChannelError(f"channel {i} out of range for {n_channels}-channel dataset")
    if len(set(subset)) != len(subset):
        raise ChannelError(f"duplicate channel in subset {list(subset)}")
    if list(subset) != sorted(subset):
        raise ChannelError(f"subset {list(subset)} must be strictly increasing")
    return subset


def select_channels(ds: Dataset, subset: Sequence[int]) -> Dataset:
    """Restrict every trial to the subset's channel rows, in subset order."""
    subset = validate_subset(subset, ds.n_channels)
    channels = tuple(ds.channels[i] for i in subset)
    # ChannelId.index stays the electrode number; load_dataset accepts gaps
    trials = tuple(t.with_rows(subset) for t in ds.trials)
    return Dataset(channels, trials, ds.classes)


def filter_classes(ds: Dataset, labels: Iterable[ActionLabel | str]) -> Dataset:
    """Keep only trials of the given classes."""
    wanted = {ActionLabel.parse(l) if isinstance(l, str) else l for l in labels}
    if not wanted:
        raise ConfigError("class filter is empty")
    trials = [t for t in ds.trials if t.label in wanted]
    if not trials:
        raise DatasetError(f"no trials match class filter {sorted(l.token for l in wanted)}")
    missing = wanted - {t.label for t in trials}
    if missing:
        logger.warning(f"⚠️  Class filter entries with no trials: {sorted(l.token for l in missing)}")
    return Dataset.from_trials(ds.channels, trials)


def group_by_motion(ds: Dataset) -> Dataset:
    """Relabel trials by motion category (linear / lateral / rotational)."""
    trials = [replace(t, label=t.label.grouped_by_motion(), n_channels=0) for t in ds.trials]
    grouped = Dataset.from_trials(ds.channels, trials)
    logger.info(
        f"🔀 Grouped {len(ds.classes)} classes into {len(grouped.classes)} motion categories: "
        f"{[c.motion for c in grouped.classes]}"
    )
    return grouped
