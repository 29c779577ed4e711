"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class QmedError(Exception):
    exit_code = 1


class SchemaError(QmedError):
    """Input file is missing a required column or the mapping is malformed."""

    exit_code = 2


class ValidationError(QmedError):
    """A row failed a value check at ingestion."""

    exit_code = 3

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class EstimationError(QmedError):
    exit_code = 4


class DegenerateArmError(EstimationError):
    """One exposure arm is empty, so every exposure contrast is undefined."""


class ExtrapolationError(EstimationError):
    """A quantile level falls outside the fitted grid."""


class InferenceError(QmedError):
    exit_code = 5


class AggregationError(EstimationError):
    """Too many undefined points to average a curve over u."""
