"""Exception hierarchy for allweather.

``ConfigError`` lives with the configuration schema in
:mod:`allweather.config.models`.
"""

from __future__ import annotations


class AllWeatherError(Exception):
    """Base class for runtime errors raised by allweather."""

    pass


class DimensionError(AllWeatherError, ValueError):
    """Tensor shapes do not line up for the requested operation."""

    pass


class ContractError(AllWeatherError):
    """A documented precondition of an operation was violated."""

    pass


class InputError(AllWeatherError, ValueError):
    """User-supplied input is invalid (unknown kind, index out of range, ...)."""

    pass


class FormatError(AllWeatherError):
    """A binary file has the wrong magic bytes or version."""

    pass


class TruncatedFileError(AllWeatherError, OSError):
    """A binary file ended before its declared contents."""

    pass


class NonFiniteError(AllWeatherError):
    """Training produced a NaN or infinite value."""

    pass
