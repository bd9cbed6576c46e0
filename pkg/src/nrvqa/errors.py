"""Exception hierarchy shared by every stage of the pipeline.

Each family maps onto one CLI exit code so that a failing run can be
triaged from its status alone.
"""


class NRVQAError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1
    stage = "run"


class ConfigError(NRVQAError, ValueError):
    exit_code = 2
    stage = "config"


class DataError(NRVQAError):
    exit_code = 3
    stage = "data"


class ManifestParseError(DataError, ValueError):
    pass


class LabelValidationError(DataError, ValueError):
    pass


class ScoreParseError(DataError, ValueError):
    pass


class DecodeError(DataError):
    pass


class CompositionError(DataError, ValueError):
    """Raised when no pair of bitrate tiers can fill a contrastive batch."""


class NumericError(NRVQAError, FloatingPointError):
    exit_code = 4
    stage = "numeric"


class UndefinedCorrelationError(NumericError):
    """A correlation was requested for a zero-variance sequence."""


class ShapeError(NRVQAError, ValueError):
    exit_code = 4
    stage = "model"


class CheckpointError(NRVQAError):
    exit_code = 5
    stage = "checkpoint"


class CompatibilityError(CheckpointError):
    pass


class IntegrityError(CheckpointError):
    pass


class BackboneLoadError(NRVQAError, OSError):
    exit_code = 5
    stage = "backbone"


class MissingInputError(DataError, FileNotFoundError):
    """A manifest, scores file or video path does not exist."""


class CheckpointNotFoundError(CheckpointError, FileNotFoundError):
    pass
