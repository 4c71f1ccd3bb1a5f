"""Exception types shared across the library."""


class HybridkalError(Exception):
    """Base class for all library-specific failures."""


class NumericalDivergenceError(HybridkalError):
    """A numerical integration produced a non-finite state."""


class TransversalityViolationError(HybridkalError):
    """The guard-normal velocity is too small for the event maps to exist."""


class GrazingContactError(TransversalityViolationError):
    """A trajectory met a guard tangentially during event detection."""


class ZenoSuspicionError(HybridkalError):
    """Too many discrete transitions occurred within a single time window."""


class ContractViolationError(HybridkalError):
    """An operation was called outside its documented preconditions."""


class InvalidCovarianceError(HybridkalError):
    """A covariance argument is not symmetric positive semi-definite."""


class SingularCovarianceError(HybridkalError):
    """A covariance is numerically singular where strict PD is required."""


class SingularInnovationError(HybridkalError):
    """The innovation covariance in a measurement update is not invertible."""


class MultimodalCloudError(HybridkalError):
    """A sample cloud spans several discrete modes where one was required."""


class UndefinedTestError(HybridkalError):
    """A statistical test has no defined value for the given data."""


class ConfigError(HybridkalError):
    """An experiment configuration is malformed or inconsistent."""
