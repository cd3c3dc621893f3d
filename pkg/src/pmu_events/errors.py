"""Exception and warning types raised across the package."""


class PmuEventsError(Exception):
    """Base class for all package errors."""


class DataError(PmuEventsError, ValueError):
    """Input data violates a contract (bad shape, bad values, bad file)."""


class DimensionError(DataError):
    pass


class StatsMismatch(DataError):
    pass


class AlignmentError(DataError):
    pass


class RankError(DataError):
    pass


class NoDonorError(DataError):
    pass


class AsymmetryError(DataError):
    pass


class DisconnectedGraph(DataError):
    """Raised when the correlation graph has more than one connected component.

    ``components`` holds one sorted list of vertex indices per component so the
    caller can order each component separately.
    """

    def __init__(self, message, components):
        super().__init__(message)
        self.components = components


class LengthMismatch(DataError):
    pass


class WindowTooLong(DataError):
    pass


class WindowExceedsTensor(DataError):
    pass


class ClassTooSmall(DataError):
    pass


class ShapeError(DataError):
    def __init__(self, message, layer_index=None):
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)
        self.layer_index = layer_index


class CacheMismatch(PmuEventsError):
    pass


class VersionError(PmuEventsError):
    pass


class CorruptFile(DataError):
    pass


class BatchMismatch(DataError):
    pass


class DomainError(DataError):
    pass


class OracleUnavailable(PmuEventsError):
    pass


class UnsupportedConfig(PmuEventsError):
    pass


class EmptyInput(DataError):
    pass


class EmptyTrain(DataError):
    pass


class DivergenceError(PmuEventsError, ArithmeticError):
    """Training produced a non-finite loss; ``diagnostics`` holds the last records."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class ProvenanceError(DataError):
    """Model and data were produced by incompatible preprocessing."""


class ConvergenceWarning(UserWarning):
    pass


class NonConvergence(UserWarning):
    pass


class RankDeficiency(UserWarning):
    pass


class DegenerateChannel(UserWarning):
    """A channel had zero variance and was dropped from a correlation average."""
