"""Exception hierarchy shared by every stage of the pipeline."""


class SurgformerError(Exception):
    """Base class for all package errors."""


class DimensionError(SurgformerError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(SurgformerError, ValueError):
    """A configuration value is invalid or inconsistent."""


class ContractError(SurgformerError, ValueError):
    """A precondition of an operation was violated by the caller."""


class DataError(SurgformerError, ValueError):
    """Input data is malformed or semantically invalid."""


class ParseError(DataError):
    """A text or binary input file could not be parsed."""


class AlignmentError(DataError):
    """Per-frame streams of one trial cannot be aligned."""


class CheckpointError(SurgformerError):
    """A checkpoint is corrupt, truncated, or incompatible."""


class NumericError(SurgformerError, RuntimeError):
    """Training produced a non-finite value."""
