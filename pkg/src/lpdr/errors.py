"""Exception hierarchy for the plate pipeline."""


class LpdrError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(LpdrError, ValueError):
    pass


class ParameterError(LpdrError, ValueError):
    pass


class DegenerateCandidate(LpdrError):
    """Reconstructed rectangle has zero width or height."""


class NoCharacterBand(LpdrError):
    """No run of rows (or columns) qualifies as the character region."""


class SegmentationFailed(LpdrError):
    pass


class InsufficientData(LpdrError, ValueError):
    pass


class DataError(LpdrError, ValueError):
    pass


class ScoreError(LpdrError, ValueError):
    pass


class NoPlate(LpdrError):
    """Raised when no candidate survives both verification phases."""


class TransferError(LpdrError):
    pass


class ModelError(LpdrError):
    pass


class EvaluationError(LpdrError, ValueError):
    pass


class SpecError(LpdrError, ValueError):
    """Invalid synthetic plate or scene description."""
