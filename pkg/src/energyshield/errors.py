"""Exception types shared across the package."""


class DomainError(ValueError):
    """A fairness value lies outside the function's domain."""


class ParameterError(ValueError):
    """A constructor received parameters outside their declared range."""


class BoundPreconditionError(ValueError):
    """An analytic tail bound was requested where it does not apply."""


class IncomparablePivotsError(ValueError):
    """Steepness is only defined between functions with a common pivot."""


class ResourceLimitError(RuntimeError):
    """A computation would exceed a configured budget."""


class SynthesisDiagnosticError(RuntimeError):
    """The synthesis condition was not monotone on the probe grid."""


class ConfigError(ValueError):
    """A command configuration failed validation."""
