"""Exception hierarchy shared by every module."""


class NNGPError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(NNGPError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class ResourceError(NNGPError):
    """A configured size or memory budget would be exceeded."""


class NumericError(NNGPError, ArithmeticError):
    """A numerical procedure (e.g. a factorization) failed."""


class RangeError(NNGPError, OverflowError):
    """A result is not representable as a finite float."""


class ConfigError(NNGPError):
    """Invalid experiment configuration; carries every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
