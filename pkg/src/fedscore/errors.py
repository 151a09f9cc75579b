"""Exception hierarchy shared by all fedscore modules."""


class FedScoreError(Exception):
    """Base class for all errors raised by fedscore."""


class ConfigurationError(FedScoreError, ValueError):
    """Invalid arguments, shapes or configuration values."""


class NumericError(FedScoreError, ArithmeticError):
    """A computation produced a non-finite value."""


class ConstructionError(FedScoreError):
    """An assignment matrix could not be constructed within the attempt budget."""


class CapabilityError(FedScoreError):
    """The request exceeds what the implementation supports (e.g. enumeration size)."""


class PrivacyBoundaryError(FedScoreError):
    """A non-private method was handed a privacy-preserving view of a round."""


class PipelineError(FedScoreError):
    """The detection/scoring pipeline cannot continue."""
