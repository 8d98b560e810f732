"""Shared exception types used across the package."""


class DataValidationError(ValueError):
    """An input file, dataset, or argument violates a documented invariant."""


class NumericError(RuntimeError):
    """Training or evaluation reached a non-finite or otherwise impossible numeric state."""


class UsageError(ValueError):
    """Command-line misuse that argument parsing alone cannot catch."""
