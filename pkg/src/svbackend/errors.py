"""Exception types shared across the package."""


class DataFormatError(ValueError):
    """A file or record violates one of the documented on-disk formats."""


class DegenerateDataError(ValueError):
    """Input data cannot support the requested fit (singular scatter,
    one-class score sets, too few speakers, ...)."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its convergence criterion."""
