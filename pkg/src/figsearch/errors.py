"""Shared exception types for pipeline validation failures."""


class FigsearchError(Exception):
    """Base class for all package errors."""


class ParameterError(FigsearchError, ValueError):
    """An argument or config value violates its contract."""


class StructuralError(FigsearchError, ValueError):
    """Shape or alignment mismatch between tensors or parameter groups."""


class ProtocolError(FigsearchError, RuntimeError):
    """Operation invoked out of order (e.g. main training before freezing)."""


class FormatError(FigsearchError, ValueError):
    """Malformed, truncated, or wrong-magic artifact file."""


class ConsistencyError(FigsearchError, ValueError):
    """Cross-artifact id mismatch (e.g. map rows vs. index records)."""


class NumericalError(FigsearchError, ArithmeticError):
    """An optimization produced non-finite values and was aborted."""
