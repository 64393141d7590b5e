"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ValidationError -> 2 (bad config or
arguments), DataError -> 3 (broken or mismatched input data),
NumericalError -> 4 (solver blow-up, CFL violation, non-finite loss).
"""


class FvimageError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(FvimageError):
    """A spec, config, or argument failed validation."""


class DataError(FvimageError):
    """Input data is malformed, truncated, or inconsistent."""


class NumericalError(FvimageError):
    """A numerical method failed (instability, CFL, non-finite values)."""
