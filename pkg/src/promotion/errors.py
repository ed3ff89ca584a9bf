"""Exception types shared across the package."""


class DataError(Exception):
    """Raised when input data is unusable: missing files, malformed headers,
    shape mismatches, or values outside the documented domain."""


class UsageError(Exception):
    """Raised for invalid command-line usage (unknown flags, missing arguments)."""
