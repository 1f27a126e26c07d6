class M3SError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(M3SError, ValueError):
    pass


class ValidationError(M3SError, ValueError):
    pass


class DegenerateGraphError(M3SError, ValueError):
    pass


class FormatError(M3SError, ValueError):
    pass


class SamplingError(M3SError, ValueError):
    pass


class ConfigurationError(M3SError, ValueError):
    pass


class NumericError(M3SError, ArithmeticError):
    pass


class DegenerateSplitError(M3SError, ValueError):
    pass
