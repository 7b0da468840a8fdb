"""Exception hierarchy.

The CLI maps these onto exit codes: validation problems exit with 2,
numerical failures with 3.
"""


class NetinferError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(NetinferError):
    """Invalid inputs: shapes, supports, configuration files, index ranges."""


class NumericalError(NetinferError):
    """Numerical failure: overflow, non-finite objective, singular system."""


class InternalConsistencyError(NetinferError):
    """A mathematical guarantee was violated at runtime (indicates a bug)."""
