"""Exception hierarchy shared by every ecgssl module."""


class EcgSslError(Exception):
    """Base class; ``code`` is the machine-readable tag the CLI prints."""

    code = "error"


class DimensionError(EcgSslError, ValueError):
    code = "dimension"


class ParameterError(EcgSslError, ValueError):
    code = "parameter"


class DomainError(EcgSslError, ValueError):
    code = "domain"


class NumericError(EcgSslError, ArithmeticError):
    code = "numeric"


class InputTooShortError(EcgSslError, ValueError):
    code = "input_too_short"


class ConfigurationError(EcgSslError, ValueError):
    code = "configuration"


class StateError(EcgSslError, RuntimeError):
    code = "state"


class UndefinedMetricError(EcgSslError, ValueError):
    code = "undefined_metric"


class FormatError(EcgSslError, ValueError):
    """Malformed binary file; ``offset`` is the byte position of the fault."""

    code = "format"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset
