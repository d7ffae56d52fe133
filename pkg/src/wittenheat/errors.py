"""Shared exception types."""


class ToleranceError(RuntimeError):
    """A numeric tolerance contract was violated (CI exit code 2)."""
