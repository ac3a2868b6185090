"""Exception types shared across the package."""


class ArmorError(Exception):
    """Base class for all errors raised by :mod:`armor`."""


class UnsupportedOperationError(ArmorError):
    """The requested evaluator is not defined for this divergence kind."""


class DimensionError(ArmorError, ValueError):
    """Array shapes do not agree."""


class InfeasibleMarginalsError(ArmorError, ValueError):
    """Marginals do not carry the same total mass (within tolerance)."""


class NoFeasibleCandidateError(ArmorError, ValueError):
    """A c-transform row has no finite-cost candidate."""

    def __init__(self, row):
        self.row = row
        super().__init__(f"row {row} of the cost matrix has no finite entry")


class NonConvexityError(ArmorError, RuntimeError):
    """The outer objective failed a unimodality check that convexity guarantees."""

    def __init__(self, message, trace):
        self.trace = trace
        super().__init__(message)


class NonFiniteGradientError(ArmorError, FloatingPointError):
    """A gradient evaluated to NaN or infinity during an ascent loop."""

    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite gradient at step {step}")


class TrainingDivergedError(ArmorError, RuntimeError):
    """Training produced a NaN objective; carries the last good parameters."""

    def __init__(self, message, last_good, log):
        self.last_good = last_good
        self.log = log
        super().__init__(message)


class DataFormatError(ArmorError, ValueError):
    """Base class for malformed dataset files."""


class BadMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass
