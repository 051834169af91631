"""Exception hierarchy.

Two families matter to callers: :class:`DataError` (bad input data or
files) and :class:`TrainingError` (a model failed to fit). The CLI maps
them to distinct exit codes.
"""


class FluError(Exception):
    """Base class for every error raised by this package."""


class DataError(FluError, ValueError):
    pass


class TrainingError(FluError, RuntimeError):
    pass


class InvalidWeek(DataError):
    pass


class MalformedRow(DataError):
    def __init__(self, line, reason=""):
        self.line = line
        msg = f"malformed row at line {line}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class DuplicateCell(DataError):
    def __init__(self, country, week):
        self.country = country
        self.week = week
        super().__init__(f"duplicate row for ({country}, {week})")


class EmptyPanel(DataError):
    pass


class RangeOutOfBounds(DataError):
    pass


class FormatVersionMismatch(DataError):
    pass


class CorruptPayload(DataError):
    pass


class UnknownCountry(DataError):
    def __init__(self, country):
        self.country = country
        super().__init__(f"unknown country {country!r}")


class InsufficientHistory(DataError):
    pass


class MissingDataInScope(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class EmptySplit(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class MissingFeatureColumn(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class AllPointsSkipped(DataError):
    pass


class InvalidScenario(DataError):
    pass


class InsufficientData(TrainingError):
    pass


class DivergedTraining(TrainingError):
    pass


class HorizonFitError(TrainingError):
    """A per-horizon fit failed; the original error is chained."""

    def __init__(self, horizon, cause):
        self.horizon = horizon
        self.cause = cause
        super().__init__(f"horizon {horizon}: {cause}")
