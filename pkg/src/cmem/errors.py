"""Exception types shared across the package."""


class CmemError(Exception):
    """Base class for errors raised by this package."""


class DomainError(CmemError, ValueError):
    """An argument or specification field is outside its valid domain."""


class StationarityError(CmemError, ValueError):
    """A model fails a stationarity requirement for the requested quantity."""


class DataFormatError(CmemError, ValueError):
    """An input file or document cannot be parsed."""


class NumericalError(CmemError, RuntimeError):
    """A numerical procedure failed (singular system, no convergence, ...)."""


class EstimationError(NumericalError):
    """An estimation routine could not produce a usable result."""
