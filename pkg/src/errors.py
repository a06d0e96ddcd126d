"""Exception hierarchy. Each error carries the CLI exit code it maps to."""


class SemgError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 1


class ConfigError(SemgError, ValueError):
    """Invalid configuration, preset or command-line usage."""

    exit_code = 2


class DataContractError(SemgError, ValueError):
    """Input data violates a documented contract."""

    exit_code = 3


class NumericError(SemgError):
    """A numeric procedure could not produce a usable result."""

    exit_code = 4


class DatasetError(DataContractError):
    """Dataset manifest or trial file is invalid."""

    def __init__(self, message: str, trial_id: str | None = None, field: str | None = None):
        self.detail = message
        self.trial_id = trial_id
        self.field = field
        where = []
        if trial_id is not None:
            where.append(f"trial {trial_id!r}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class ChannelError(DataContractError):
    """Channel subset references a missing, duplicated or unordered channel."""


class SplitError(DataContractError):
    """A train/test split cannot be formed."""


class DimensionMismatch(DataContractError):
    """Feature dimension or channel layout does not match a trained model."""


class SignalError(DataContractError):
    """Signal is non-finite or too short for the requested operation."""


class FilterDesignError(ConfigError):
    """Filter parameters are outside the realizable range."""


class NormalizerTooSmall(NumericError, ValueError):
    """Chosen normalizer channel peak is below eps for one trial."""

    def __init__(self, trial_id: str, normalizer: int, peak: float, eps: float):
        self.trial_id = trial_id
        self.normalizer = normalizer
        self.peak = peak
        super().__init__(
            f"trial {trial_id!r}: normalizer channel {normalizer} peak {peak:.3g} < eps {eps:.3g}"
        )


class NormalizerUnusable(NumericError):
    """Every row of a design matrix failed normalization."""


class NoUsableNormalizer(NumericError):
    """No normalizer in a subset produced an accuracy."""


class TrainingError(NumericError, ValueError):
    """Training input cannot produce a model (single class, empty side, ...)."""


class ConvergenceError(NumericError):
    """SMO hit its iteration cap while strict convergence was requested."""
