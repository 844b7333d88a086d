class MustangError(Exception):
    """Base class for every error raised by this package"""


class DimensionError(MustangError, ValueError):
    """Array shapes do not agree"""


class ContractError(MustangError, ValueError):
    """A precondition of an operation was violated"""


class EmptyGraphError(MustangError, ValueError):
    """An operation received a graph or bag with no nodes"""


class DegenerateProjectionError(MustangError, ValueError):
    """TopK projection vector has zero norm"""


class StratificationError(MustangError, ValueError):
    """A class has too few patients to split"""


class UndefinedMetricError(MustangError):
    def __init__(self, message: str, report=None):
        """
        Raised when a metric cannot be computed (e.g. AUC on one-class labels)

        Args:
            message (str): Diagnostic message
            report (MetricsReport): Metrics that could still be computed
        """
        super().__init__(message)
        self.report = report


class DataFormatError(MustangError, ValueError):
    """Manifest or embedding file violates the expected format"""


class CheckpointError(MustangError, ValueError):
    """Checkpoint header or payload is inconsistent"""


class ConfigError(MustangError, ValueError):
    """Configuration value out of range"""
