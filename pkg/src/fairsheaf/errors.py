"""Exception hierarchy shared across the package.

CLI exit codes map onto these classes: usage errors exit 1, data errors
(everything deriving from DataError) exit 2, DivergenceError exits 3.
"""


class FairSheafError(Exception):
    """Base class for all package errors."""


class DataError(FairSheafError):
    """Base class for problems with inputs: configs, files, shapes, splits."""


class ConfigurationError(DataError):
    """Invalid parameter value (bad probability, k out of range, alpha <= 0, ...)."""


class IngestionError(DataError):
    """CSV could not be turned into a dataset; message carries the row/column."""


class SplitError(DataError):
    """A stratum is too small to populate the requested test set and folds."""


class PartitionError(DataError):
    """A partition is malformed (empty group, overlap, missing indices)."""


class ShapeError(DataError):
    """Dimension mismatch between a matrix/signal pair."""


class DegenerateDataError(DataError):
    """Input admits no meaningful answer (all points identical, single-class labels)."""


class GroupSupportError(DataError):
    """A sensitive group is empty where a per-group statistic is required."""


class SizeCapError(DataError):
    """Dense operator would exceed the configured size cap."""


class SelectionError(DataError):
    """No successful run is available to select from."""


class MetricNotApplicable(FairSheafError):
    """A conditional probability in a metric is undefined on this input.

    Raised instead of silently reporting 0, which would fake fairness.
    The message states which conditional is undefined and why.
    """

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class DivergenceError(FairSheafError):
    """Diffusion produced a non-finite value; `layer` is the first bad step."""

    def __init__(self, message: str, layer: int):
        super().__init__(message)
        self.layer = layer
