"""Exception types shared across the package."""


class TopolocError(Exception):
    """Base class for all package errors."""

    kind = "error"


class DomainError(TopolocError, ValueError):
    kind = "domain"


class ConfigurationError(TopolocError, ValueError):
    kind = "configuration"


class DegenerateInputError(TopolocError, ValueError):
    kind = "degenerate_input"


class EmptyIndexError(TopolocError, ValueError):
    kind = "empty_index"


class OrderingError(TopolocError, ValueError):
    kind = "ordering"


class OutOfRangeError(TopolocError, ValueError):
    kind = "out_of_range"


class ModelError(TopolocError, ValueError):
    kind = "model"


class BrokenChainError(TopolocError, LookupError):
    kind = "broken_chain"


class FormatError(TopolocError, IOError):
    kind = "format"


class PipelineAbort(TopolocError, RuntimeError):
    kind = "pipeline_abort"
